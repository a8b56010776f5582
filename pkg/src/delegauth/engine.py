"""Deterministic mediation engine.

Single event loop over a virtual millisecond clock. Occurrences (timeline
submissions, handler actions, completions, window expiries, hold deadlines)
are processed in (time, sequence) order, so identical inputs always produce
identical transcripts.

Delivery gates realize the ambiguity-prevention rules:
  * a program processes one event at a time (busy exclusivity);
  * a fresh input is delivered only when the target belongs to no live root
    graph; same-key inputs ride along as repeats;
  * an input-derived handoff is delivered only when the target is idle and
    belongs to no *other* live root graph;
  * pending events wait in per-program two-level queues (input-derived =
    high) and expire rather than deliver late.

Requests are attributed through graph membership only, mirroring what an
OS-level reference monitor can actually observe.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .auth import (
    ALLOWED,
    CACHED,
    DENIED,
    EXPIRED,
    NO_ATTRIBUTION,
    POLICY,
    PROMPTED,
    AuthorizationCache,
    Decision,
    FirstUseState,
    prompt_marks,
    render_first_use_prompt,
    render_prompt,
)
from .errors import (
    AmbiguousAttribution,
    Backpressure,
    BrokenChain,
    InvariantViolation,
    NoAttributableInput,
    ProtocolViolation,
    UnattributableHandoff,
)
from .graph import (
    ATTACH_CONFLICT,
    ATTACH_MERGE,
    ATTACH_NEW,
    ATTACH_REPEAT,
    ATTACH_STALE,
    DelegationPath,
    GraphStore,
    PathKey,
)
from .model import (
    HandoffEvent,
    InputEvent,
    MediatedEvent,
    OperationRequest,
    Registry,
    event_kind,
)
from .scheduler import (
    DELIVERED,
    EXPIRED as T_EXPIRED,
    HIGH,
    LOW,
    QUEUED,
    REJECTED,
    Complete,
    DelayStats,
    EmitHandoff,
    EmitRequest,
    HandlerTable,
    ProgramState,
    SchedulerConfig,
    Ticket,
)

MODE_DELEGATION = "delegation"
MODE_FIRST_USE = "first_use"

REPEAT = "repeat"
FRESH = "fresh"
HOLD = "hold"


@dataclass
class EngineConfig:
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    mode: str = MODE_DELEGATION
    cache_denials: bool = False
    mediation: bool = True  # False = pass-through baseline (no graphs, no auth)

    def __post_init__(self) -> None:
        if self.mode not in (MODE_DELEGATION, MODE_FIRST_USE):
            raise InvariantViolation(f"unknown mode {self.mode!r}")


@dataclass
class _HandlerExec:
    exec_id: int
    program_id: str
    trigger_event_id: str
    derived: bool
    root_id: str | None
    phase: str
    occupies_busy: bool
    cancelled: bool = False


@dataclass
class _Pending:
    """New paths of one root awaiting the aggregated prompt at window close."""

    paths: dict = field(default_factory=dict)  # PathKey -> DelegationPath
    instances: dict = field(default_factory=dict)  # PathKey -> [OperationRequest]
    phase: str = "main"


class Engine:
    """Drives one simulation run; see module docstring."""

    def __init__(
        self,
        registry: Registry,
        handlers: HandlerTable | None = None,
        config: EngineConfig | None = None,
        authorizers: dict | None = None,
        cache: AuthorizationCache | None = None,
        trace=None,
    ):
        self.registry = registry
        self.handlers = handlers or HandlerTable()
        self.config = config or EngineConfig()
        self.authorizers = authorizers or {}
        self.cache = cache or AuthorizationCache()
        self.first_use = FirstUseState()
        self.store = GraphStore(registry, self.config.scheduler.window_ms)
        self.stats = DelayStats(window_ms=self.config.scheduler.window_ms)

        self.now = 0
        self._trace = trace
        self._trace_seq = 0
        self._heap: list = []
        self._occ_seq = 0
        self._event_seq = 0
        self._exec_seq = 0
        self._programs: dict[str, ProgramState] = {}
        self._busy_exec: dict[str, _HandlerExec] = {}
        self._root_tickets: dict[str, list[Ticket]] = {}
        self._label_ids: dict[str, str] = {}
        self._pending: dict[str, _Pending] = {}
        self._root_phase: dict[str, str] = {}
        self._advance_log: list = []

        self.tickets: dict[str, Ticket] = {}
        self.decisions: list[Decision] = []
        self.prompts: list[dict] = []
        self.delivered_log: list[tuple] = []
        self.path_edge_histogram: dict[int, int] = {}
        self.ambiguous_requests = 0
        self.backpressure_rejections = 0

    # -- plumbing -------------------------------------------------------------

    @property
    def _passthrough(self) -> bool:
        return (
            not self.config.mediation
            or not self.config.scheduler.enabled
            or self.config.mode == MODE_FIRST_USE
        )

    @property
    def _delegation(self) -> bool:
        return self.config.mediation and self.config.mode == MODE_DELEGATION

    def next_event_id(self) -> str:
        self._event_seq += 1
        return f"e{self._event_seq}"

    def _push(self, t: int, tag: str, payload) -> None:
        self._occ_seq += 1
        heapq.heappush(self._heap, (t, self._occ_seq, tag, payload))

    def _emit(self, kind: str, **payload) -> None:
        if self._trace is None:
            return
        self._trace_seq += 1
        rec = {"seq": self._trace_seq, "t": self.now, "kind": kind}
        rec.update(payload)
        self._trace(rec)

    def _program(self, program_id: str) -> ProgramState:
        state = self._programs.get(program_id)
        if state is None:
            state = ProgramState(program_id=program_id)
            self._programs[program_id] = state
        return state

    def _authorizer(self, phase: str):
        auth = self.authorizers.get(phase)
        if auth is None:
            raise InvariantViolation(f"no authorizer configured for phase {phase!r}")
        return auth

    @staticmethod
    def _event_payload(ev: MediatedEvent) -> dict:
        d = {"id": ev.event_id, "t": ev.t}
        if isinstance(ev, InputEvent):
            d.update(widget=ev.widget_id, program=ev.program_id)
        elif isinstance(ev, HandoffEvent):
            d.update(src=ev.src, dst=ev.dst, provenance=ev.provenance, action=ev.action)
        else:
            d.update(program=ev.program_id, op=ev.op, sensor=ev.sensor)
        return d

    # -- public surface ----------------------------------------------------------

    def schedule(self, t: int, spec: dict) -> None:
        """Queue a timeline entry for admission at virtual time t."""
        self._push(t, "submit", spec)

    def submit(self, event: MediatedEvent, phase: str = "main", derived_root: str | None = None) -> Ticket:
        """Admit an event now (advancing the clock to event.t first)."""
        if event.t < self.now:
            raise ProtocolViolation(f"cannot submit {event.event_id} in the past")
        self._run_until(event.t)
        self.now = max(self.now, event.t)
        return self._admit(event, phase=phase, derived_root=derived_root)

    def advance(self, to: int) -> list:
        """Process everything due up to and including virtual time `to`."""
        if to < self.now:
            raise ProtocolViolation("cannot advance backwards")
        self._advance_log = []
        self._run_until(to)
        self.now = max(self.now, to)
        return self._advance_log

    def run_to_quiescence(self) -> int:
        self._advance_log = []
        while self._heap:
            self._step()
        return self.now

    def check_repeat_input(self, i: InputEvent) -> str:
        """Classify an input: repeat of the live received root, fresh, or hold."""
        received = self.store.live_received_root(i.program_id, self.now)
        if received is not None:
            key = self.store.input_key_of_root(received)
            if (key.widget_id, key.program_id) == (i.widget_id, i.program_id):
                return REPEAT
        state = self._program(i.program_id)
        if state.idle and not self.store.live_memberships(i.program_id, self.now):
            return FRESH
        return HOLD

    def complete_handling(self, program_id: str, event_id: str) -> None:
        """Explicit early completion of the event a program is processing."""
        state = self._program(program_id)
        if state.busy_with != event_id:
            raise ProtocolViolation(f"{program_id} is not processing {event_id}")
        exec_ = self._busy_exec.pop(program_id)
        exec_.cancelled = True
        state.busy_with = None
        self._emit("complete", program=program_id, event_id=event_id, reason="explicit")
        self._try_dispatch(state)

    def stats_snapshot(self) -> DelayStats:
        return self.stats.snapshot()

    def prompt_count(self, phase: str | None = None) -> int:
        if phase is None:
            return len(self.prompts)
        return sum(1 for p in self.prompts if p["phase"] == phase)

    # -- event loop -----------------------------------------------------------------

    def _run_until(self, t_limit: int) -> None:
        while self._heap and self._heap[0][0] <= t_limit:
            self._step()

    def _step(self) -> None:
        t, _, tag, payload = heapq.heappop(self._heap)
        if t < self.now:
            raise InvariantViolation("clock went backwards")
        self.now = t
        if tag == "submit":
            self._admit_spec(payload)
        elif tag == "action":
            self._fire_action(*payload)
        elif tag == "complete":
            self._fire_complete(payload)
        elif tag == "root_expiry":
            self._fire_root_expiry(payload)
        elif tag == "deadline":
            self._fire_deadline(payload)

    # -- admission ------------------------------------------------------------------

    def _admit_spec(self, spec: dict) -> None:
        """Build the typed event for a timeline entry and admit it."""
        phase = spec.get("phase", "main")
        eid = self.next_event_id()
        if spec.get("label"):
            self._label_ids[spec["label"]] = eid
        kind = spec["kind"]
        if kind == "input":
            ev: MediatedEvent = InputEvent(
                event_id=eid, widget_id=spec["widget"], program_id=spec["program"], t=self.now
            )
        elif kind == "handoff":
            prov = spec.get("provenance")
            if prov is not None:
                resolved = self._label_ids.get(prov)
                if resolved is None:
                    raise InvariantViolation(f"handoff provenance label {prov!r} never submitted")
                prov = resolved
            ev = HandoffEvent(
                event_id=eid,
                src=spec["src"],
                dst=spec["dst"],
                t=self.now,
                provenance=prov,
                action=spec.get("action"),
            )
        else:
            ev = OperationRequest(
                event_id=eid, program_id=spec["program"], op=spec["op"], sensor=spec["sensor"], t=self.now
            )
        try:
            self._admit(ev, phase=phase)
        except Backpressure:
            pass  # rejection recorded; the run continues

    def _admit(self, ev: MediatedEvent, phase: str, derived_root: str | None = None) -> Ticket:
        self.registry.validate_event(ev)
        kind = event_kind(ev)

        if kind == "request":
            ticket = Ticket(
                event=ev, kind=kind, priority=HIGH, derived=derived_root is not None,
                root_id=derived_root, submit_t=ev.t, deadline=ev.t, status=DELIVERED, deliver_t=ev.t,
            )
            self.tickets[ev.event_id] = ticket
            self.stats.record_submit(kind, ticket.derived)
            self.stats.record_delivery(kind, 0, ticket.derived)
            self._emit("admit", event=self._event_payload(ev), priority=HIGH, derived=ticket.derived, phase=phase)
            self.delivered_log.append(("request", ev.event_id, ev.program_id, ev.op, ev.sensor, ev.t))
            self._mediate_request(ev, phase)
            return ticket

        derived = kind == "input"
        root_id = None
        if kind == "handoff":
            root_id = derived_root if derived_root is not None else ev.provenance
            derived = root_id is not None
            if derived and self._delegation and self.config.scheduler.enabled:
                g = self.store.live.get(root_id)
                if g is None or not g.live_at(self.now):
                    # provenance died before admission: downgrade to plain busy work
                    self._emit("handoff", event_id=ev.event_id, root=root_id, outcome="unattributable")
                    derived, root_id = False, None

        priority = HIGH if derived else LOW
        ticket = Ticket(
            event=ev, kind=kind, priority=priority, derived=derived, root_id=root_id,
            submit_t=ev.t, deadline=ev.t + self.config.scheduler.window_ms,
        )
        ticket.phase = phase
        self.tickets[ev.event_id] = ticket
        self.stats.record_submit(kind, derived)
        self._emit("admit", event=self._event_payload(ev), priority=priority, derived=derived, phase=phase)

        if self._passthrough:
            self._deliver(ticket, phase)
            return ticket

        # immediate repeats bypass queues and busy exclusivity
        if kind == "input" and self.check_repeat_input(ev) == REPEAT:
            self._deliver(ticket, phase, as_repeat=True)
            return ticket

        state = self._program(ev.program_id if kind == "input" else ev.dst)
        try:
            state.enqueue(ticket, self.config.scheduler.queue_bound, self.config.scheduler.two_level)
        except Backpressure:
            ticket.status = REJECTED
            ticket.outcome_detail = "backpressure"
            self.backpressure_rejections += 1
            self._emit("expire", what="event", event_id=ev.event_id, reason="backpressure")
            raise
        if derived and root_id is not None:
            self._root_tickets.setdefault(root_id, []).append(ticket)
        self._push(ticket.deadline + 1, "deadline", ticket)
        self._try_dispatch(state)
        if ticket.status == QUEUED:
            self._emit("hold", event_id=ev.event_id, program=state.program_id, queue=priority)
        return ticket

    # -- dispatch ----------------------------------------------------------------------

    def _next_ticket(self, state: ProgramState) -> Ticket | None:
        for queue in (state.high, state.low):
            while queue and queue[0].status != QUEUED:
                queue.popleft()
            if queue:
                return queue[0]
        return None

    def _gate(self, ticket: Ticket) -> str:
        """Delivery verdict for the head-of-queue ticket of an idle program."""
        ev = ticket.event
        if ticket.kind == "input":
            received = self.store.live_received_root(ev.program_id, self.now)
            if received is not None:
                key = self.store.input_key_of_root(received)
                if (key.widget_id, key.program_id) == (ev.widget_id, ev.program_id):
                    return "deliver_repeat"
            if self.store.live_memberships(ev.program_id, self.now):
                return "blocked"
            return "deliver"
        if ticket.derived:
            verdict = self.store.attachability(ev, ticket.root_id, self.now)
            if verdict in (ATTACH_NEW, ATTACH_REPEAT):
                return "deliver"
            if verdict == ATTACH_CONFLICT:
                return "blocked"
            if verdict == ATTACH_MERGE:
                return "reject_merge"
            return "stale"  # ATTACH_STALE
        return "deliver"

    def _try_dispatch(self, state: ProgramState) -> None:
        while state.idle:
            ticket = self._next_ticket(state)
            if ticket is None:
                return
            if self.now > ticket.deadline:
                # bounded delay: never delivered late, even if just unblocked
                if state.high and state.high[0] is ticket:
                    state.high.popleft()
                else:
                    state.low.popleft()
                self._expire_ticket(ticket, "hold_deadline")
                continue
            verdict = self._gate(ticket)
            if verdict == "blocked":
                return  # strict priority: never skip past a blocked high head
            if state.high and state.high[0] is ticket:
                state.high.popleft()
            else:
                state.low.popleft()
            if verdict == "stale":
                self._expire_ticket(ticket, "root_expired")
            elif verdict == "reject_merge":
                ticket.status = REJECTED
                ticket.outcome_detail = "merge_rejected"
                self._emit(
                    "handoff", event_id=ticket.event.event_id, root=ticket.root_id, outcome="merge_rejected"
                )
            else:
                self._deliver(ticket, ticket.phase, as_repeat=(verdict == "deliver_repeat"))

    def _expire_ticket(self, ticket: Ticket, reason: str) -> None:
        ticket.status = T_EXPIRED
        ticket.outcome_detail = reason
        self.stats.record_expiry(ticket.kind, ticket.derived)
        self._emit("expire", what="event", event_id=ticket.event.event_id, reason=reason)
        self._advance_log.append(("expired", ticket.event.event_id))

    # -- delivery ------------------------------------------------------------------------

    def _deliver(self, ticket: Ticket, phase: str, as_repeat: bool = False) -> None:
        ev = ticket.event
        ticket.status = DELIVERED
        ticket.deliver_t = self.now
        self.stats.record_delivery(ticket.kind, ticket.delay, ticket.derived)
        target = ev.program_id if ticket.kind == "input" else ev.dst
        self._emit("deliver", event_id=ev.event_id, program=target, delay=ticket.delay, event_kind=ticket.kind)
        self._advance_log.append(("delivered", ev.event_id))

        if ticket.kind == "input":
            self._deliver_input(ticket, ev, phase, as_repeat)
        else:
            self._deliver_handoff(ticket, ev, phase)

    def _deliver_input(self, ticket: Ticket, ev: InputEvent, phase: str, as_repeat: bool) -> None:
        root_id = None
        if self._delegation:
            if as_repeat:
                root_id = self.store.live_received_root(ev.program_id, self.now)
                self.store.record_repeat_input(root_id, ev)
            else:
                root_id = self.store.record_input(ev, delivered_at=self.now)
                self._root_phase[root_id] = phase
                self._push(self.store.live[root_id].deadline + 1, "root_expiry", root_id)
        self.delivered_log.append(("input", ev.event_id, ev.widget_id, ev.program_id, ev.t, self.now))
        widget = self.registry.widget(ev.widget_id)
        occupies_busy = not (as_repeat and not self._program(ev.program_id).idle)
        self._run_handler(ev.program_id, "widget", widget.id, ev, True, root_id, phase, occupies_busy)

    def _deliver_handoff(self, ticket: Ticket, ev: HandoffEvent, phase: str) -> None:
        root_id = ticket.root_id
        if self._delegation and ticket.derived:
            try:
                self.store.record_handoff(ev, root_override=root_id, delivered_at=self.now)
                outcome = "attached"
            except AmbiguousAttribution:
                outcome = "merge_rejected"
            except BrokenChain:
                outcome = "broken_chain"
            except UnattributableHandoff:
                outcome = "unattributable"
            self._emit("handoff", event_id=ev.event_id, root=root_id, outcome=outcome)
            if outcome != "attached":
                return  # attach refused: the message does not reach a handler
            self.delivered_log.append(("handoff", ev.event_id, ev.src, ev.dst, ev.t, self.now, True))
        else:
            if self._delegation:
                self._emit("handoff", event_id=ev.event_id, root=None, outcome="unattributable")
            self.delivered_log.append(
                ("handoff", ev.event_id, ev.src, ev.dst, ev.t, self.now, ticket.derived)
            )
        label = ev.action if ev.action is not None else "*"
        self._run_handler(ev.dst, "handoff", label, ev, ticket.derived, root_id, phase, True)

    # -- handler execution ------------------------------------------------------------------

    def _run_handler(
        self,
        program_id: str,
        trigger_kind: str,
        trigger_value: str,
        ev: MediatedEvent,
        derived: bool,
        root_id: str | None,
        phase: str,
        occupies_busy: bool,
    ) -> None:
        spec = self.handlers.lookup(program_id, trigger_kind, trigger_value)
        self._exec_seq += 1
        exec_ = _HandlerExec(
            exec_id=self._exec_seq,
            program_id=program_id,
            trigger_event_id=ev.event_id,
            derived=derived,
            root_id=root_id,
            phase=phase,
            occupies_busy=occupies_busy and not self._passthrough,
        )
        if exec_.occupies_busy:
            state = self._program(program_id)
            state.busy_with = ev.event_id
            self._busy_exec[program_id] = exec_
        complete_after = spec.complete.after_ms if spec else self.config.scheduler.default_service_lag_ms
        if spec:
            for action in spec.actions:
                self._push(self.now + action.after_ms, "action", (exec_, action))
        self._push(self.now + complete_after, "complete", exec_)

    def _fire_action(self, exec_: _HandlerExec, action) -> None:
        if exec_.cancelled:
            return
        if isinstance(action, EmitHandoff):
            ev = HandoffEvent(
                event_id=self.next_event_id(),
                src=exec_.program_id,
                dst=action.to,
                t=self.now,
                provenance=exec_.root_id if exec_.derived else None,
                action=action.label,
            )
            try:
                self._admit(ev, phase=exec_.phase, derived_root=ev.provenance)
            except Backpressure:
                pass  # rejection already recorded
        elif isinstance(action, EmitRequest):
            ev = OperationRequest(
                event_id=self.next_event_id(),
                program_id=exec_.program_id,
                op=action.op,
                sensor=action.sensor,
                t=self.now,
            )
            self._admit(ev, phase=exec_.phase, derived_root=exec_.root_id if exec_.derived else None)

    def _fire_complete(self, exec_: _HandlerExec) -> None:
        if exec_.cancelled:
            return
        exec_.cancelled = True
        if exec_.occupies_busy:
            state = self._program(exec_.program_id)
            if state.busy_with == exec_.trigger_event_id:
                state.busy_with = None
                self._busy_exec.pop(exec_.program_id, None)
                self._emit("complete", program=exec_.program_id, event_id=exec_.trigger_event_id, reason="handler")
                self._try_dispatch(state)
                return
        self._emit("complete", program=exec_.program_id, event_id=exec_.trigger_event_id, reason="handler")

    # -- expiries ---------------------------------------------------------------------------

    def _fire_deadline(self, ticket: Ticket) -> None:
        if ticket.status != QUEUED:
            return
        self._expire_ticket(ticket, "hold_deadline")
        target = ticket.event.program_id if ticket.kind == "input" else ticket.event.dst
        self._try_dispatch(self._program(target))

    def _fire_root_expiry(self, root_id: str) -> None:
        g = self.store.live.get(root_id)
        if g is None:
            return
        freed = list(g.join_t)
        self.store.expire_graph(root_id, self.now)
        self._emit("expire", what="root", root=root_id)
        self._flush_root(root_id)
        for ticket in self._root_tickets.pop(root_id, []):
            if ticket.status == QUEUED:
                self._expire_ticket(ticket, "root_expired")
        affected = set(freed)
        for pid in list(self._busy_exec):
            exec_ = self._busy_exec[pid]
            if exec_.derived and exec_.root_id == root_id:
                exec_.cancelled = True
                state = self._program(pid)
                self._emit("complete", program=pid, event_id=state.busy_with, reason="window_backstop")
                state.busy_with = None
                del self._busy_exec[pid]
                affected.add(pid)
        for pid in self.registry.programs:
            if pid in affected or self._program(pid).queue_len():
                self._try_dispatch(self._program(pid))

    # -- authorization ------------------------------------------------------------------------

    def _mediate_request(self, r: OperationRequest, phase: str) -> None:
        if not self.config.mediation:
            return
        if self.config.mode == MODE_FIRST_USE:
            self._first_use_decide(r, phase)
            return
        try:
            root_id = self.store.record_request(r)
        except NoAttributableInput as exc:
            reason = EXPIRED if exc.expired else NO_ATTRIBUTION
            self._emit("request", event_id=r.event_id, root=None, outcome=reason)
            self._decide(
                Decision(DENIED, reason, r.event_id, r.program_id, r.op, r.sensor, r.t, phase=phase)
            )
            return
        except AmbiguousAttribution:
            self.ambiguous_requests += 1
            self._emit("request", event_id=r.event_id, root=None, outcome="ambiguous")
            self._decide(
                Decision(
                    DENIED, NO_ATTRIBUTION, r.event_id, r.program_id, r.op, r.sensor, r.t,
                    phase=phase, detail="ambiguous",
                )
            )
            return
        path = self.store.compute_path(r)
        key = path.key()
        self.path_edge_histogram[key.edge_count] = self.path_edge_histogram.get(key.edge_count, 0) + 1
        cached = self.cache.lookup(key)
        if cached == "allow":
            self._emit("request", event_id=r.event_id, root=root_id, outcome="attributed", cache="hit")
            self._decide(
                Decision(ALLOWED, CACHED, r.event_id, r.program_id, r.op, r.sensor, r.t, phase=phase, path_key=key)
            )
            return
        if cached == "deny" and self.config.cache_denials:
            self._emit("request", event_id=r.event_id, root=root_id, outcome="attributed", cache="deny")
            self._decide(
                Decision(DENIED, POLICY, r.event_id, r.program_id, r.op, r.sensor, r.t, phase=phase, path_key=key)
            )
            return
        evicted = self.cache.invalidate_conflicting(key)
        self._emit(
            "request", event_id=r.event_id, root=root_id, outcome="attributed", cache="miss", evicted=evicted
        )
        pending = self._pending.get(root_id)
        if pending is None:
            pending = _Pending(phase=self._root_phase.get(root_id, phase))
            self._pending[root_id] = pending
        if key not in pending.paths:
            pending.paths[key] = path
            pending.instances[key] = []
        pending.instances[key].append(r)

    def _first_use_decide(self, r: OperationRequest, phase: str) -> None:
        if self.first_use.granted(r.program_id, r.op, r.sensor):
            self._decide(
                Decision(ALLOWED, CACHED, r.event_id, r.program_id, r.op, r.sensor, r.t, phase=phase)
            )
            return
        text = render_first_use_prompt(r.program_id, r.op, self.registry)
        prog = self.registry.program(r.program_id)
        self.prompts.append(
            {"mode": MODE_FIRST_USE, "phase": phase, "t": self.now, "text": text,
             "marks": [[prog.name, prog.identity_mark]]}
        )
        self._emit("prompt", mode=MODE_FIRST_USE, phase=phase, text=text, marks=[[prog.name, prog.identity_mark]])
        allowed = self._authorizer(phase).authorize_first_use(r.program_id, r.op, r.sensor, text, self.registry)
        if allowed:
            self.first_use.grant(r.program_id, r.op, r.sensor)
            self._decide(
                Decision(ALLOWED, PROMPTED, r.event_id, r.program_id, r.op, r.sensor, r.t, phase=phase, prompt_text=text)
            )
        else:
            self._decide(
                Decision(DENIED, PROMPTED, r.event_id, r.program_id, r.op, r.sensor, r.t, phase=phase, prompt_text=text)
            )

    def _flush_root(self, root_id: str) -> None:
        pending = self._pending.pop(root_id, None)
        if pending is None or not pending.paths:
            return
        paths: list[DelegationPath] = list(pending.paths.values())
        text = render_prompt(paths, self.registry)
        marks = prompt_marks(paths, self.registry)
        phase = pending.phase
        self.prompts.append(
            {"mode": MODE_DELEGATION, "phase": phase, "t": self.now, "text": text, "marks": marks, "root": root_id}
        )
        self._emit(
            "prompt", mode=MODE_DELEGATION, phase=phase, text=text, marks=marks, root=root_id,
            paths=[k.to_dict() for k in pending.paths],
        )
        allowed = self._authorizer(phase).authorize_paths(paths, text, self.registry)
        blob = self.store.sealed.get(root_id, b"")
        for key in pending.paths:
            if allowed:
                self.cache.store_allow(key, blob)
            elif self.config.cache_denials:
                self.cache.store_deny(key)
            for r in pending.instances[key]:
                self._decide(
                    Decision(
                        ALLOWED if allowed else DENIED, PROMPTED, r.event_id, r.program_id, r.op,
                        r.sensor, r.t, phase=phase, path_key=key, prompt_text=text,
                    )
                )

    def _decide(self, decision: Decision) -> None:
        self.decisions.append(decision)
        self._emit("decision", **decision.to_dict())
