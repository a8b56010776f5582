"""Delegation graphs: construction, backward path computation, identity keys.

A graph instance is rooted at one input event and grows as handoffs and
operation requests are attributed to it. Program vertices form a tree (each
program has exactly one parent edge); merges and cycles are rejected.
Reachability is temporal: a program is reachable at time t only if it joined
the graph strictly before t, which keeps every computed path strictly
increasing in time.

Requests are attributed by membership: the requester must belong to exactly
one live graph at request time. The scheduler guarantees that; with the
scheduler disabled the same query surfaces AmbiguousAttribution.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field

from .errors import (
    AmbiguousAttribution,
    BrokenChain,
    DuplicateEvent,
    InvariantViolation,
    NoAttributableInput,
    UnattributableHandoff,
)
from .model import HandoffEvent, InputEvent, OperationRequest, Registry


@dataclass(frozen=True)
class InputKey:
    """Timestamp-free identity of an input interaction: (widget, receiver)."""

    widget_id: str
    program_id: str

    def to_dict(self) -> dict:
        return {"widget": self.widget_id, "program": self.program_id}

    @classmethod
    def from_dict(cls, d: dict) -> "InputKey":
        return cls(widget_id=d["widget"], program_id=d["program"])


@dataclass(frozen=True)
class PathKey:
    """Timestamp-free identity of a delegation path, used for cache lookups."""

    widget_id: str
    programs: tuple[str, ...]  # receiver first, requester last
    op: str
    sensor: str

    @property
    def input_key(self) -> InputKey:
        return InputKey(widget_id=self.widget_id, program_id=self.programs[0])

    @property
    def requester(self) -> str:
        return self.programs[-1]

    @property
    def edge_count(self) -> int:
        # input delivery + handoffs + request delivery
        return len(self.programs) + 1

    def to_dict(self) -> dict:
        return {
            "widget": self.widget_id,
            "programs": list(self.programs),
            "op": self.op,
            "sensor": self.sensor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PathKey":
        return cls(
            widget_id=d["widget"],
            programs=tuple(d["programs"]),
            op=d["op"],
            sensor=d["sensor"],
        )


@dataclass(frozen=True)
class DelegationPath:
    """One attributed chain: input event -> handoffs -> operation request."""

    input: InputEvent
    handoffs: tuple[HandoffEvent, ...]
    request: OperationRequest

    def key(self) -> PathKey:
        programs = [self.input.program_id] + [h.dst for h in self.handoffs]
        return PathKey(
            widget_id=self.input.widget_id,
            programs=tuple(programs),
            op=self.request.op,
            sensor=self.request.sensor,
        )

    def input_key(self) -> InputKey:
        return InputKey(widget_id=self.input.widget_id, program_id=self.input.program_id)

    def validate(self) -> None:
        prev_prog = self.input.program_id
        prev_t = self.input.t
        for h in self.handoffs:
            if h.src != prev_prog:
                raise InvariantViolation(f"path not contiguous at handoff {h.event_id}")
            if h.t <= prev_t:
                raise InvariantViolation(f"path timestamps not strictly increasing at {h.event_id}")
            prev_prog, prev_t = h.dst, h.t
        if self.request.program_id != prev_prog:
            raise InvariantViolation("path not contiguous at request")
        if self.request.t <= prev_t:
            raise InvariantViolation("path timestamps not strictly increasing at request")


@dataclass
class _LiveGraph:
    """Mutable per-root state while the root's window is open."""

    root: InputEvent
    deadline: int  # last live instant: root.t + window
    input_instances: list[InputEvent] = field(default_factory=list)
    join_t: dict[str, int] = field(default_factory=dict)  # program -> join time
    parent: dict[str, str | None] = field(default_factory=dict)  # program -> parent program
    handoff_instances: dict[tuple[str, str], list[HandoffEvent]] = field(default_factory=dict)
    request_instances: dict[tuple[str, str, str], list[OperationRequest]] = field(default_factory=dict)

    def live_at(self, t: int) -> bool:
        return t <= self.deadline

    def programs(self) -> list[str]:
        return list(self.join_t)

    def vertex_count(self) -> int:
        sensors = {s for (_, _, s) in self.request_instances}
        return 1 + len(self.join_t) + len(sensors)

    def edge_count(self) -> int:
        return 1 + len(self.handoff_instances) + len(self.request_instances)

    def to_dict(self) -> dict:
        return {
            "root": {
                "event_id": self.root.event_id,
                "widget": self.root.widget_id,
                "program": self.root.program_id,
                "t": self.root.t,
            },
            "deadline": self.deadline,
            "inputs": [[i.event_id, i.t] for i in self.input_instances],
            "handoffs": {
                f"{src}>{dst}": [[h.event_id, h.t] for h in hs]
                for (src, dst), hs in sorted(self.handoff_instances.items())
            },
            "requests": {
                f"{p}|{o}|{s}": [[r.event_id, r.t] for r in rs]
                for (p, o, s), rs in sorted(self.request_instances.items())
            },
        }


# attachability verdicts used by the scheduler's delivery gates
ATTACH_NEW = "new"
ATTACH_REPEAT = "repeat"
ATTACH_MERGE = "merge"
ATTACH_CONFLICT = "conflict"  # target belongs to a different live graph
ATTACH_STALE = "stale"  # root no longer live


@dataclass
class ExpiryStats:
    sealed: int
    live: int
    evicted_total: int


class GraphStore:
    """Holds all live graphs, membership indexes, and sealed snapshots."""

    def __init__(self, registry: Registry, window_ms: int):
        if window_ms <= 0:
            raise InvariantViolation("window_ms must be positive")
        self.registry = registry
        self.window_ms = window_ms
        self.live: dict[str, _LiveGraph] = {}  # root event_id -> graph
        self.sealed: dict[str, bytes] = {}  # root event_id -> serialized snapshot
        # root -> (input key, deadline, member programs)
        self.sealed_meta: dict[str, tuple[InputKey, int, frozenset[str]]] = {}
        self.membership: dict[str, set[str]] = {}  # program -> live root ids
        self.received_root: dict[str, str] = {}  # program -> live root it received
        self._request_index: dict[str, tuple[str, OperationRequest]] = {}  # event_id -> (root, r)
        self._seen_events: set[str] = set()
        self.eviction_count = 0

    # -- queries used by the scheduler ------------------------------------

    def input_key_of_root(self, root_id: str) -> InputKey:
        g = self.live[root_id]
        return InputKey(widget_id=g.root.widget_id, program_id=g.root.program_id)

    def live_received_root(self, program_id: str, now: int | None = None) -> str | None:
        root_id = self.received_root.get(program_id)
        if root_id is None:
            return None
        if now is not None and not self.live[root_id].live_at(now):
            return None
        return root_id

    def live_memberships(self, program_id: str, now: int | None = None) -> set[str]:
        members = self.membership.get(program_id, set())
        if now is None:
            return members
        return {r for r in members if self.live[r].live_at(now)}

    def live_roots_reaching(self, program_id: str, t: int) -> list[str]:
        """Live roots whose graph contains program_id with join time < t."""
        out = []
        for root_id in self.membership.get(program_id, set()):
            g = self.live[root_id]
            if g.live_at(t) and g.join_t[program_id] < t:
                out.append(root_id)
        out.sort()
        return out

    def expired_roots_reaching(self, program_id: str, t: int) -> bool:
        """Whether some sealed graph contained the program (expired attribution)."""
        for _key, deadline, members in self.sealed_meta.values():
            if t > deadline and program_id in members:
                return True
        return False

    def attachability(self, h: HandoffEvent, root_id: str, t: int) -> str:
        g = self.live.get(root_id)
        if g is None or not g.live_at(t):
            return ATTACH_STALE
        others = self.live_memberships(h.dst, t) - {root_id}
        if others:
            return ATTACH_CONFLICT
        if h.dst in g.join_t:
            return ATTACH_REPEAT if g.parent.get(h.dst) == h.src else ATTACH_MERGE
        return ATTACH_NEW

    # -- recording ----------------------------------------------------------

    def _check_fresh_event(self, event_id: str) -> None:
        if event_id in self._seen_events:
            raise DuplicateEvent(f"event {event_id!r} already recorded")
        self._seen_events.add(event_id)

    def record_input(self, i: InputEvent, delivered_at: int | None = None) -> str:
        """Start a new graph rooted at i; returns the root id.

        The window runs from the event's own timestamp (when the user acted);
        reachability starts at delivery.
        """
        self.registry.validate_event(i)
        self._check_fresh_event(i.event_id)
        g = _LiveGraph(root=i, deadline=i.t + self.window_ms)
        g.input_instances.append(i)
        g.join_t[i.program_id] = i.t if delivered_at is None else delivered_at
        g.parent[i.program_id] = None
        self.live[i.event_id] = g
        self.membership.setdefault(i.program_id, set()).add(i.event_id)
        self.received_root[i.program_id] = i.event_id
        return i.event_id

    def record_repeat_input(self, root_id: str, i: InputEvent) -> None:
        """Attach a same-key repeat instance to an existing live root."""
        self.registry.validate_event(i)
        self._check_fresh_event(i.event_id)
        g = self.live.get(root_id)
        if g is None or not g.live_at(i.t):
            raise UnattributableHandoff(f"repeat input {i.event_id} names dead root {root_id}")
        if (i.widget_id, i.program_id) != (g.root.widget_id, g.root.program_id):
            raise InvariantViolation("repeat input key does not match root")
        g.input_instances.append(i)

    def record_handoff(
        self, h: HandoffEvent, root_override: str | None = None, delivered_at: int | None = None
    ) -> str:
        """Attach a handoff to its provenance root; returns the root id."""
        self.registry.validate_event(h)
        self._check_fresh_event(h.event_id)
        root_id = root_override if root_override is not None else h.provenance
        now = h.t if delivered_at is None else delivered_at
        if root_id is None:
            raise UnattributableHandoff(f"handoff {h.event_id} carries no provenance")
        g = self.live.get(root_id)
        if g is None or not g.live_at(now):
            raise UnattributableHandoff(f"handoff {h.event_id} provenance {root_id} is not live")
        src_join = g.join_t.get(h.src)
        if src_join is None or src_join >= h.t:
            raise BrokenChain(f"handoff {h.event_id}: source {h.src} not reachable before t={h.t}")
        if h.dst in g.join_t:
            # tree shape: only re-traversal of the existing parent edge is allowed
            if g.parent.get(h.dst) != h.src:
                raise AmbiguousAttribution(
                    f"handoff {h.event_id} would give {h.dst} a second parent in root {root_id}"
                )
        else:
            g.join_t[h.dst] = now
            g.parent[h.dst] = h.src
            self.membership.setdefault(h.dst, set()).add(root_id)
        g.handoff_instances.setdefault((h.src, h.dst), []).append(h)
        return root_id

    def record_request(self, r: OperationRequest) -> str:
        """Attribute a request to the unique live root reaching the requester."""
        self.registry.validate_event(r)
        self._check_fresh_event(r.event_id)
        roots = self.live_roots_reaching(r.program_id, r.t)
        if not roots:
            expired = self.expired_roots_reaching(r.program_id, r.t)
            raise NoAttributableInput(
                f"request {r.event_id} from {r.program_id} has no live attribution", expired=expired
            )
        if len(roots) > 1:
            raise AmbiguousAttribution(
                f"request {r.event_id} reachable from {len(roots)} live roots: {roots}"
            )
        root_id = roots[0]
        g = self.live[root_id]
        g.request_instances.setdefault((r.program_id, r.op, r.sensor), []).append(r)
        self._request_index[r.event_id] = (root_id, r)
        return root_id

    # -- path computation -----------------------------------------------------

    def compute_path(self, r: OperationRequest) -> DelegationPath:
        """Backward traversal from a recorded request to its root input."""
        entry = self._request_index.get(r.event_id)
        if entry is None:
            raise NoAttributableInput(f"request {r.event_id} was never recorded")
        root_id, req = entry
        g = self.live.get(root_id)
        if g is None:
            raise NoAttributableInput(f"root {root_id} already sealed", expired=True)
        handoffs: list[HandoffEvent] = []
        prog = req.program_id
        child_t = req.t
        while g.parent[prog] is not None:
            src = g.parent[prog]
            inst = self._latest_before(g.handoff_instances[(src, prog)], child_t)
            if inst is None:
                raise AmbiguousAttribution(
                    f"no handoff instance {src}->{prog} strictly before t={child_t}"
                )
            handoffs.append(inst)
            prog, child_t = src, inst.t
        input_inst = self._latest_before(g.input_instances, child_t)
        if input_inst is None:
            raise NoAttributableInput(f"no input instance strictly before t={child_t}")
        path = DelegationPath(input=input_inst, handoffs=tuple(reversed(handoffs)), request=req)
        path.validate()
        return path

    @staticmethod
    def _latest_before(instances: list, t: int):
        # instances are appended in time order
        idx = bisect.bisect_left([e.t for e in instances], t)
        return instances[idx - 1] if idx else None

    # -- expiry and sealing ------------------------------------------------------

    def expire_graph(self, root_id: str, now: int) -> bool:
        """Seal one root if its window has passed; returns whether it sealed."""
        g = self.live.get(root_id)
        if g is None or g.live_at(now):
            return False
        self._seal(root_id, g)
        return True

    def expire_due(self, now: int) -> ExpiryStats:
        due = [rid for rid, g in self.live.items() if not g.live_at(now)]
        for rid in due:
            self._seal(rid, self.live[rid])
        return ExpiryStats(sealed=len(due), live=len(self.live), evicted_total=self.eviction_count)

    def _seal(self, root_id: str, g: _LiveGraph) -> None:
        # copy-on-seal: snapshot survives eviction of live state
        self.sealed[root_id] = self.serialize_graph(root_id)
        self.sealed_meta[root_id] = (
            InputKey(widget_id=g.root.widget_id, program_id=g.root.program_id),
            g.deadline,
            frozenset(g.join_t),
        )
        for pid in g.join_t:
            members = self.membership.get(pid)
            if members is not None:
                members.discard(root_id)
                if not members:
                    del self.membership[pid]
        if self.received_root.get(g.root.program_id) == root_id:
            del self.received_root[g.root.program_id]
        del self.live[root_id]
        self.eviction_count += 1

    def serialize_graph(self, root_id: str) -> bytes:
        g = self.live.get(root_id)
        if g is not None:
            data = g.to_dict()
        elif root_id in self.sealed:
            return self.sealed[root_id]
        else:
            raise InvariantViolation(f"unknown graph root {root_id!r}")
        return json.dumps(data, sort_keys=True, separators=(",", ":")).encode()

    # -- introspection ---------------------------------------------------------

    def live_count(self) -> int:
        return len(self.live)

    def graph_summary(self, root_id: str) -> dict:
        g = self.live[root_id]
        return {"vertices": g.vertex_count(), "edges": g.edge_count(), "programs": g.programs()}
