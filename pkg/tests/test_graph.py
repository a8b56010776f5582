from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delegauth.errors import (
    AmbiguousAttribution,
    BrokenChain,
    DuplicateEvent,
    NoAttributableInput,
    UnattributableHandoff,
)
from delegauth.graph import DelegationPath, GraphStore, InputKey, PathKey
from delegauth.model import HandoffEvent, InputEvent, OperationRequest, Registry, WidgetKind

WINDOW = 150


def make_store(registry) -> GraphStore:
    return GraphStore(registry, window_ms=WINDOW)


def chain_registry(n: int) -> Registry:
    reg = Registry()
    for i in range(n):
        reg.register_program(f"p{i}", f"M{i}")
    reg.register_widget("go", WidgetKind.VOICE)
    reg.register_sensor("Camera")
    reg.register_operation("capture_picture", ["Camera"], "capture pictures")
    return reg


def test_record_input_creates_rooted_graph(basic_registry):
    store = make_store(basic_registry)
    pid = basic_registry.program_by_name("Alpha").id
    wid = basic_registry.resolve_widget("do the thing").id
    root = store.record_input(InputEvent("i1", wid, pid, 0))
    assert store.graph_summary(root) == {"vertices": 2, "edges": 1, "programs": [pid]}


def test_duplicate_event_id_rejected(basic_registry):
    store = make_store(basic_registry)
    pid = basic_registry.program_by_name("Alpha").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, pid, 0))
    with pytest.raises(DuplicateEvent):
        store.record_input(InputEvent("i1", wid, pid, 5))


def test_ten_inputs_make_ten_independent_graphs(basic_registry):
    store = make_store(basic_registry)
    pid = basic_registry.program_by_name("Alpha").id
    wid = basic_registry.resolve_widget("do the thing").id
    for i in range(10):
        store.record_input(InputEvent(f"i{i}", wid, pid, i * 1000))
    assert store.live_count() == 10


def test_handoff_attaches_and_extends_reachability(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    b = basic_registry.program_by_name("Beta").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, a, 0))
    store.record_handoff(HandoffEvent("h1", a, b, 5, provenance="i1"))
    assert store.live_memberships(b) == {"i1"}
    summary = store.graph_summary("i1")
    assert summary["vertices"] == 3 and summary["edges"] == 2


def test_handoff_without_live_provenance_is_unattributable(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    b = basic_registry.program_by_name("Beta").id
    wid = basic_registry.resolve_widget("do the thing").id
    with pytest.raises(UnattributableHandoff):
        store.record_handoff(HandoffEvent("h0", a, b, 5, provenance=None))
    store.record_input(InputEvent("i1", wid, a, 0))
    store.expire_due(WINDOW + 1)
    with pytest.raises(UnattributableHandoff):
        store.record_handoff(HandoffEvent("h1", a, b, WINDOW + 2, provenance="i1"))


def test_handoff_from_unreached_program_breaks_chain(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    b = basic_registry.program_by_name("Beta").id
    c = basic_registry.program_by_name("Gamma").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, a, 0))
    with pytest.raises(BrokenChain):
        store.record_handoff(HandoffEvent("h1", b, c, 5, provenance="i1"))
    # source reached, but not strictly before the handoff timestamp
    store.record_handoff(HandoffEvent("h2", a, b, 5, provenance="i1"))
    with pytest.raises(BrokenChain):
        store.record_handoff(HandoffEvent("h3", b, c, 5, provenance="i1"))


def test_merge_and_cycle_are_rejected_as_ambiguous(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    b = basic_registry.program_by_name("Beta").id
    c = basic_registry.program_by_name("Gamma").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, a, 0))
    store.record_handoff(HandoffEvent("h1", a, b, 5, provenance="i1"))
    store.record_handoff(HandoffEvent("h2", a, c, 6, provenance="i1"))
    with pytest.raises(AmbiguousAttribution):  # second parent for c
        store.record_handoff(HandoffEvent("h3", b, c, 8, provenance="i1"))
    with pytest.raises(AmbiguousAttribution):  # cycle back to the receiver
        store.record_handoff(HandoffEvent("h4", b, a, 9, provenance="i1"))
    # re-traversal of the existing parent edge is a repeat, not a merge
    store.record_handoff(HandoffEvent("h5", a, b, 10, provenance="i1"))


def test_chain_of_ten_handoffs_yields_twelve_edge_path():
    reg = chain_registry(11)
    store = GraphStore(reg, window_ms=WINDOW)
    pids = list(reg.programs)
    wid = reg.resolve_widget("go").id
    root = InputEvent("i1", wid, pids[0], 0)
    store.record_input(root)
    expected_handoffs = []
    for j in range(10):
        h = HandoffEvent(f"h{j}", pids[j], pids[j + 1], j + 1, provenance="i1")
        store.record_handoff(h)
        expected_handoffs.append(h)
    r = OperationRequest("r1", pids[10], "capture_picture", "Camera", 20)
    store.record_request(r)
    path = store.compute_path(r)
    assert path.key().edge_count == 12
    # independently built expected chain
    assert path.input == root
    assert list(path.handoffs) == expected_handoffs
    assert path.request == r


def test_request_without_reachability_denied(basic_registry):
    store = make_store(basic_registry)
    c = basic_registry.program_by_name("Gamma").id
    with pytest.raises(NoAttributableInput) as exc:
        store.record_request(OperationRequest("r1", c, "capture_picture", "Camera", 5))
    assert not exc.value.expired


def test_request_after_expiry_flags_expired(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, a, 0))
    store.expire_due(WINDOW + 1)
    with pytest.raises(NoAttributableInput) as exc:
        store.record_request(OperationRequest("r1", a, "capture_picture", "Camera", WINDOW + 5))
    assert exc.value.expired


def test_two_concurrent_roots_reaching_requester_are_ambiguous(basic_registry):
    # simulates a scheduler-off interleaving
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    b = basic_registry.program_by_name("Beta").id
    c = basic_registry.program_by_name("Gamma").id
    w1 = basic_registry.resolve_widget("do the thing").id
    w2 = basic_registry.resolve_widget("other thing").id
    store.record_input(InputEvent("i1", w1, a, 0))
    store.record_input(InputEvent("i2", w2, b, 10))
    store.record_handoff(HandoffEvent("h1", a, c, 20, provenance="i1"))
    store.record_handoff(HandoffEvent("h2", b, c, 30, provenance="i2"))
    with pytest.raises(AmbiguousAttribution):
        store.record_request(OperationRequest("r1", c, "capture_picture", "Camera", 40))


def test_direct_request_has_empty_handoff_list(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, a, 0))
    r = OperationRequest("r1", a, "capture_picture", "Camera", 4)
    store.record_request(r)
    path = store.compute_path(r)
    assert path.handoffs == ()
    assert path.key().edge_count == 2


def test_path_key_excludes_timestamps(basic_registry):
    a = basic_registry.program_by_name("Alpha").id
    b = basic_registry.program_by_name("Beta").id
    wid = basic_registry.resolve_widget("do the thing").id

    def replay(base: int) -> PathKey:
        store = make_store(basic_registry)
        store.record_input(InputEvent(f"i{base}", wid, a, base))
        store.record_handoff(HandoffEvent(f"h{base}", a, b, base + 5, provenance=f"i{base}"))
        r = OperationRequest(f"r{base}", b, "capture_picture", "Camera", base + 9)
        store.record_request(r)
        return store.compute_path(r).key()

    assert replay(0) == replay(5000)


def test_multiple_leaves_share_input_key(basic_registry):
    basic_registry.register_sensor("Microphone")
    basic_registry.register_operation("record_audio", ["Microphone"], "record audio")
    basic_registry.register_sensor("GpsReceiver")
    basic_registry.register_operation("read_location", ["GpsReceiver"], "access")
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    b = basic_registry.program_by_name("Beta").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, a, 0))
    store.record_handoff(HandoffEvent("h1", a, b, 5, provenance="i1"))
    keys = []
    for n, (op, sensor) in enumerate(
        [("capture_picture", "Camera"), ("record_audio", "Microphone"), ("read_location", "GpsReceiver")]
    ):
        r = OperationRequest(f"r{n}", b, op, sensor, 8 + n)
        store.record_request(r)
        keys.append(store.compute_path(r).key())
    assert len(set(keys)) == 3
    assert len({k.input_key for k in keys}) == 1


def test_path_key_round_trips_through_dict():
    key = PathKey("go", ("P1", "P2"), "capture_picture", "Camera")
    assert PathKey.from_dict(key.to_dict()) == key
    ik = InputKey("go", "P1")
    assert InputKey.from_dict(ik.to_dict()) == ik


def test_window_boundary_closed_interval(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, a, 0))
    assert not store.expire_graph("i1", WINDOW)  # still live at exactly t+window
    assert store.live_count() == 1
    assert store.expire_graph("i1", WINDOW + 1)
    assert store.live_count() == 0
    assert "i1" in store.sealed


def test_thousand_roots_expire_and_evict(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    wid = basic_registry.resolve_widget("do the thing").id
    for i in range(1000):
        store.record_input(InputEvent(f"i{i}", wid, a, i))
    stats = store.expire_due(1000 + WINDOW + 1)
    assert stats.sealed == 1000
    assert stats.live == 0
    assert stats.evicted_total == 1000


def test_serialized_sealed_graph_survives_eviction(basic_registry):
    store = make_store(basic_registry)
    a = basic_registry.program_by_name("Alpha").id
    wid = basic_registry.resolve_widget("do the thing").id
    store.record_input(InputEvent("i1", wid, a, 0))
    live_blob = store.serialize_graph("i1")
    store.expire_due(WINDOW + 1)
    assert store.serialize_graph("i1") == live_blob


# -- property tests -------------------------------------------------------------


@st.composite
def path_timestamps(draw):
    n_handoffs = draw(st.integers(min_value=0, max_value=4))
    deltas = draw(
        st.lists(st.integers(min_value=1, max_value=40), min_size=n_handoffs + 1, max_size=n_handoffs + 1)
    )
    start = draw(st.integers(min_value=0, max_value=10_000))
    return start, deltas


def _build_path(registry, start: int, deltas: list[int]) -> DelegationPath:
    pids = list(registry.programs)
    wid = registry.resolve_widget("go").id
    t = start
    handoffs = []
    prev = pids[0]
    for j, d in enumerate(deltas[:-1]):
        t += d
        handoffs.append(HandoffEvent(f"h{start}-{j}", prev, pids[j + 1], t, provenance="i"))
        prev = pids[j + 1]
    t += deltas[-1]
    req = OperationRequest(f"r{start}", prev, "capture_picture", "Camera", t)
    return DelegationPath(
        input=InputEvent(f"i{start}", wid, pids[0], start), handoffs=tuple(handoffs), request=req
    )


@settings(max_examples=200, deadline=None)
@given(path_timestamps(), path_timestamps())
def test_path_key_is_pure_in_identity_and_blind_to_time(ts_a, ts_b):
    reg = chain_registry(6)
    a = _build_path(reg, *ts_a)
    a.validate()
    # same shape with different timestamps: identical key
    if len(ts_a[1]) == len(ts_b[1]):
        b = _build_path(reg, *ts_b)
        assert a.key() == b.key()
    # changing any identity field changes the key
    k = a.key()
    assert k != PathKey("other", k.programs, k.op, k.sensor)
    assert k != PathKey(k.widget_id, k.programs + ("PX",), k.op, k.sensor)
    assert k != PathKey(k.widget_id, k.programs, "record_audio", k.sensor)
    assert k != PathKey(k.widget_id, k.programs, k.op, "Microphone")


@settings(max_examples=100, deadline=None)
@given(path_timestamps())
def test_paths_always_strictly_increase(ts):
    reg = chain_registry(6)
    path = _build_path(reg, *ts)
    path.validate()
    times = [path.input.t] + [h.t for h in path.handoffs] + [path.request.t]
    assert all(x < y for x, y in zip(times, times[1:]))
