"""Exception types raised across the simulator.

Every error that callers are expected to branch on has its own class;
anything else surfaces as InvariantViolation.
"""

from __future__ import annotations


class DelegauthError(Exception):
    """Base class for all simulator errors."""


# -- registry / domain model ------------------------------------------------

class EmptyName(DelegauthError):
    """A required display string (program name, mark, widget label) is empty."""


class DuplicateProgram(DelegauthError):
    """A (name, identity mark) pair was registered twice."""


class AliasCollision(DelegauthError):
    """A widget alias overlaps an already-registered widget's alias set."""


class UnknownWidget(DelegauthError):
    """No registered widget resolves the given label."""


class InvariantViolation(DelegauthError):
    """A declared invariant does not hold (validation failures, bad configs)."""


# -- delegation graph --------------------------------------------------------

class DuplicateEvent(DelegauthError):
    """An event id was recorded twice."""


class UnattributableHandoff(DelegauthError):
    """Handoff has no provenance, or its provenance root is no longer live."""


class BrokenChain(DelegauthError):
    """Handoff source program is not (yet) reachable in the named root graph."""


class NoAttributableInput(DelegauthError):
    """An operation request cannot be attributed to any live input event."""

    def __init__(self, msg: str, expired: bool = False):
        super().__init__(msg)
        self.expired = expired


class AmbiguousAttribution(DelegauthError):
    """More than one feasible attribution exists (or a graph merge was attempted)."""


# -- scheduler ----------------------------------------------------------------

class Backpressure(DelegauthError):
    """A per-program queue exceeded its configured bound."""


class ProtocolViolation(DelegauthError):
    """Scheduler API misuse, e.g. completing an event that is not in flight."""


# -- authorization ------------------------------------------------------------

class MixedRoots(DelegauthError):
    """render_prompt was called with paths rooted at different input events."""


class CorruptCache(DelegauthError):
    """An imported cache blob failed structural or checksum validation."""


# -- scenarios / CLI ----------------------------------------------------------

class ParseError(DelegauthError):
    """Scenario or trace file is syntactically invalid."""

    def __init__(self, msg: str, line: int | None = None):
        loc = f"line {line}: " if line is not None else ""
        super().__init__(f"{loc}{msg}")
        self.line = line


class UnresolvedReference(DelegauthError):
    """A scenario record references an undeclared program/widget/sensor/op."""

    def __init__(self, msg: str, line: int | None = None):
        loc = f"line {line}: " if line is not None else ""
        super().__init__(f"{loc}{msg}")
        self.line = line


class InfeasibleWorkload(DelegauthError):
    """Workload parameters cannot produce the requested event mix."""


class TraceDivergence(DelegauthError):
    """Replay produced a trace that differs from the recorded one."""

    def __init__(self, seq: int, detail: str = ""):
        super().__init__(f"trace diverges at seq {seq}" + (f": {detail}" if detail else ""))
        self.seq = seq
