"""Scheduler state: per-program two-level queues, tickets, delay accounting.

The delivery gates themselves live in the engine (they consult the graph
store); this module owns the queue mechanics and the statistics the
benchmarks report.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

from .errors import Backpressure, InvariantViolation
from .model import MediatedEvent

HIGH = "high"
LOW = "low"

# ticket lifecycle
QUEUED = "queued"
DELIVERED = "delivered"
EXPIRED = "expired"
REJECTED = "rejected"


@dataclass
class SchedulerConfig:
    window_ms: int = 150
    default_service_lag_ms: int = 5
    queue_bound: int = 1024
    two_level: bool = True  # two-level priority scheduling of pending events
    enabled: bool = True  # ambiguity-prevention holds; False = pass-through

    def __post_init__(self) -> None:
        if self.window_ms <= 0:
            raise InvariantViolation("window_ms must be > 0")
        if self.default_service_lag_ms < 0:
            raise InvariantViolation("default_service_lag_ms must be >= 0")
        if self.queue_bound < 1:
            raise InvariantViolation("queue_bound must be >= 1")


@dataclass
class KindStats:
    submitted: int = 0
    delivered: int = 0
    delayed: int = 0
    expired: int = 0
    max_delay_ms: int = 0


@dataclass
class DelayStats:
    window_ms: int = 150
    per_kind: dict[str, KindStats] = field(
        default_factory=lambda: {"input": KindStats(), "handoff": KindStats(), "request": KindStats()}
    )
    derived: KindStats = field(default_factory=KindStats)  # input-derived events only

    @property
    def total_events(self) -> int:
        return sum(k.submitted for k in self.per_kind.values())

    @property
    def delayed_events(self) -> int:
        return sum(k.delayed for k in self.per_kind.values())

    @property
    def expired_events(self) -> int:
        return sum(k.expired for k in self.per_kind.values())

    @property
    def max_delay_ms(self) -> int:
        return max((k.max_delay_ms for k in self.per_kind.values()), default=0)

    def record_submit(self, kind: str, derived: bool) -> None:
        self.per_kind[kind].submitted += 1
        if derived:
            self.derived.submitted += 1

    def record_delivery(self, kind: str, delay: int, derived: bool) -> None:
        ks = self.per_kind[kind]
        ks.delivered += 1
        if delay > 0:
            ks.delayed += 1
            ks.max_delay_ms = max(ks.max_delay_ms, delay)
        if derived:
            self.derived.delivered += 1
            if delay > 0:
                self.derived.delayed += 1
                self.derived.max_delay_ms = max(self.derived.max_delay_ms, delay)

    def record_expiry(self, kind: str, derived: bool) -> None:
        self.per_kind[kind].expired += 1
        if derived:
            self.derived.expired += 1

    def snapshot(self) -> "DelayStats":
        return DelayStats(
            window_ms=self.window_ms,
            per_kind={k: replace(v) for k, v in self.per_kind.items()},
            derived=replace(self.derived),
        )

    def to_dict(self) -> dict:
        return {
            "total_events": self.total_events,
            "delayed_events": self.delayed_events,
            "expired_events": self.expired_events,
            "max_delay_ms": self.max_delay_ms,
            "delayed_fraction": (self.delayed_events / self.total_events) if self.total_events else 0.0,
            "per_kind": {
                k: {
                    "submitted": v.submitted,
                    "delivered": v.delivered,
                    "delayed": v.delayed,
                    "expired": v.expired,
                    "max_delay_ms": v.max_delay_ms,
                }
                for k, v in self.per_kind.items()
            },
            "derived": {
                "submitted": self.derived.submitted,
                "delivered": self.derived.delivered,
                "delayed": self.derived.delayed,
                "expired": self.derived.expired,
                "max_delay_ms": self.derived.max_delay_ms,
            },
        }


@dataclass
class Ticket:
    """Admission record for one submitted event."""

    event: MediatedEvent
    kind: str
    priority: str
    derived: bool
    root_id: str | None  # provenance root for derived events
    submit_t: int
    deadline: int  # last instant the event may still be delivered
    status: str = QUEUED
    deliver_t: int | None = None
    outcome_detail: str = ""
    phase: str = "main"

    @property
    def delay(self) -> int:
        return 0 if self.deliver_t is None else self.deliver_t - self.submit_t


@dataclass
class ProgramState:
    """Per-program scheduling state."""

    program_id: str
    busy_with: str | None = None  # event id currently being processed
    high: deque = field(default_factory=deque)
    low: deque = field(default_factory=deque)

    @property
    def idle(self) -> bool:
        return self.busy_with is None

    def queue_len(self) -> int:
        return len(self.high) + len(self.low)

    def enqueue(self, ticket: Ticket, bound: int, two_level: bool) -> None:
        if self.queue_len() >= bound:
            raise Backpressure(
                f"program {self.program_id} queue bound {bound} exceeded by {ticket.event.event_id}"
            )
        if two_level and ticket.priority == HIGH:
            self.high.append(ticket)
        else:
            self.low.append(ticket)


# -- handler specifications (scenario-defined program behavior) --------------


@dataclass(frozen=True)
class EmitHandoff:
    to: str  # program id
    after_ms: int
    label: str | None = None


@dataclass(frozen=True)
class EmitRequest:
    op: str
    sensor: str
    after_ms: int


@dataclass(frozen=True)
class Complete:
    after_ms: int


@dataclass(frozen=True)
class HandlerSpec:
    """What a program does when a widget or handoff is delivered to it."""

    program_id: str
    trigger_kind: str  # "widget" | "handoff"
    trigger_value: str  # widget id, or handoff action label ("*" matches any)
    actions: tuple = ()  # EmitHandoff / EmitRequest, time-ordered
    complete: Complete = Complete(after_ms=0)

    def validate(self) -> None:
        max_lag = 0
        for a in self.actions:
            if isinstance(a, (EmitHandoff, EmitRequest)):
                # strict path ordering needs emissions at least 1 ms after delivery
                if a.after_ms < 1:
                    raise InvariantViolation(
                        f"handler for {self.program_id}: emission lag must be >= 1 ms"
                    )
            max_lag = max(max_lag, a.after_ms)
        if self.complete.after_ms < max_lag:
            raise InvariantViolation(
                f"handler for {self.program_id}: complete lag must cover all action lags"
            )


class HandlerTable:
    """Lookup of handlers by (program, trigger)."""

    def __init__(self, specs: list[HandlerSpec] | None = None):
        self._table: dict[tuple[str, str, str], HandlerSpec] = {}
        for spec in specs or []:
            self.add(spec)

    def add(self, spec: HandlerSpec) -> None:
        spec.validate()
        key = (spec.program_id, spec.trigger_kind, spec.trigger_value)
        if key in self._table:
            raise InvariantViolation(f"duplicate handler for {key}")
        self._table[key] = spec

    def lookup(self, program_id: str, trigger_kind: str, trigger_value: str) -> HandlerSpec | None:
        spec = self._table.get((program_id, trigger_kind, trigger_value))
        if spec is None and trigger_kind == "handoff":
            spec = self._table.get((program_id, "handoff", "*"))
        return spec

    def all_specs(self) -> list[HandlerSpec]:
        return list(self._table.values())
