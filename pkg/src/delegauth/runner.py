"""End-to-end runs: execute scenarios, compare modes, verify trace replays."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from .auth import ALLOWED, CACHED, AuthorizationCache, InteractivePrompt, ScriptedPolicy
from .engine import MODE_DELEGATION, MODE_FIRST_USE, Engine, EngineConfig
from .errors import TraceDivergence
from .scenario import Scenario, TraceWriter, load_scenario, loads_scenario, read_trace


@dataclass
class RunReport:
    mode: str
    final_t: int = 0
    wall_ms: float = 0.0
    prompts: list[dict] = field(default_factory=list)
    prompt_counts: dict = field(default_factory=dict)  # phase -> count
    decisions: list[dict] = field(default_factory=list)
    attack_outcomes: dict = field(default_factory=dict)  # name -> succeeded?
    expect_failures: list[str] = field(default_factory=list)
    delay_stats: dict = field(default_factory=dict)
    path_edge_histogram: dict = field(default_factory=dict)
    cache_footprint: dict = field(default_factory=dict)
    ambiguous_requests: int = 0

    @property
    def main_prompts(self) -> int:
        return self.prompt_counts.get("main", 0)

    @property
    def preliminary_prompts(self) -> int:
        return self.prompt_counts.get("preliminary", 0)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "final_t": self.final_t,
            "wall_ms": round(self.wall_ms, 3),
            "prompt_counts": self.prompt_counts,
            "prompts": self.prompts,
            "decisions": self.decisions,
            "attack_outcomes": self.attack_outcomes,
            "expect_failures": self.expect_failures,
            "delay_stats": self.delay_stats,
            "path_edge_histogram": {str(k): v for k, v in sorted(self.path_edge_histogram.items())},
            "cache_footprint_total": self.cache_footprint.get("total", 0),
            "ambiguous_requests": self.ambiguous_requests,
        }


def _cli_mode_to_engine(mode: str) -> str:
    aliases = {
        "entrust": MODE_DELEGATION,
        "delegation": MODE_DELEGATION,
        "first-use": MODE_FIRST_USE,
        "first_use": MODE_FIRST_USE,
    }
    try:
        return aliases[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}") from None


def build_engine(
    scn: Scenario,
    mode: str | None = None,
    policy_rules: list[str] | None = None,
    window_ms: int | None = None,
    cache: AuthorizationCache | None = None,
    trace=None,
    interactive: bool = False,
    scheduler_enabled: bool | None = None,
    two_level: bool | None = None,
    mediation: bool | None = None,
) -> tuple[Engine, dict[str, str]]:
    registry, handlers, name_to_id = scn.build()
    sched = scn.scheduler_config(window_override=window_ms)
    if scheduler_enabled is not None:
        sched.enabled = scheduler_enabled
    if two_level is not None:
        sched.two_level = two_level
    engine_mode = _cli_mode_to_engine(mode) if mode else scn.mode
    config = EngineConfig(
        scheduler=sched,
        mode=engine_mode,
        cache_denials=scn.config.get("cache_denials", False),
        mediation=True if mediation is None else mediation,
    )
    if interactive:
        prompt = InteractivePrompt()
        authorizers = {"preliminary": prompt, "main": prompt}
    else:
        main_rules = policy_rules if policy_rules is not None else scn.policies.get("main")
        main_policy = ScriptedPolicy(main_rules) if main_rules else ScriptedPolicy.allow_all()
        pre_rules = scn.policies.get("preliminary")
        pre_policy = ScriptedPolicy(pre_rules) if pre_rules else ScriptedPolicy.allow_all()
        authorizers = {"preliminary": pre_policy, "main": main_policy}
    engine = Engine(
        registry, handlers=handlers, config=config, authorizers=authorizers, cache=cache, trace=trace
    )
    return engine, name_to_id


def _schedule_timeline(engine: Engine, scn: Scenario, name_to_id: dict[str, str]) -> None:
    registry = engine.registry
    for e in scn.timeline:
        spec = {"phase": e["phase"], "kind": e["kind"]}
        if e.get("label"):
            spec["label"] = e["label"]
        if e["kind"] == "input":
            spec["widget"] = registry.resolve_widget(e["widget"]).id
            spec["program"] = name_to_id[e["program"]]
        elif e["kind"] == "handoff":
            spec["src"] = name_to_id[e["src"]]
            spec["dst"] = name_to_id[e["dst"]]
            spec["provenance"] = e.get("provenance")
            spec["action"] = e.get("action")
        else:
            spec["program"] = name_to_id[e["program"]]
            spec["op"] = e["op"]
            spec["sensor"] = e["sensor"]
        engine.schedule(e["t"], spec)


def evaluate_attacks(engine: Engine, scn: Scenario, name_to_id: dict[str, str]) -> dict:
    """Attack succeeds iff the named triple was allowed silently in the main phase."""
    outcomes = {}
    for a in scn.attacks:
        pid = name_to_id[a["program"]]
        outcomes[a["name"]] = any(
            d.outcome == ALLOWED
            and d.reason == CACHED
            and d.phase == "main"
            and (d.program_id, d.op, d.sensor) == (pid, a["op"], a["sensor"])
            for d in engine.decisions
        )
    return outcomes


def run_scenario(
    scn: Scenario,
    mode: str | None = None,
    policy_rules: list[str] | None = None,
    window_ms: int | None = None,
    cache: AuthorizationCache | None = None,
    trace=None,
    interactive: bool = False,
    scheduler_enabled: bool | None = None,
    two_level: bool | None = None,
    mediation: bool | None = None,
) -> tuple[RunReport, Engine]:
    engine, name_to_id = build_engine(
        scn, mode=mode, policy_rules=policy_rules, window_ms=window_ms, cache=cache,
        trace=trace, interactive=interactive, scheduler_enabled=scheduler_enabled,
        two_level=two_level, mediation=mediation,
    )
    _schedule_timeline(engine, scn, name_to_id)
    t0 = time.perf_counter()
    final_t = engine.run_to_quiescence()
    wall_ms = (time.perf_counter() - t0) * 1000.0

    report = RunReport(mode=engine.config.mode, final_t=final_t, wall_ms=wall_ms)
    report.prompts = list(engine.prompts)
    report.prompt_counts = {
        phase: engine.prompt_count(phase) for phase in ("preliminary", "main")
    }
    report.decisions = [d.to_dict() for d in engine.decisions]
    report.attack_outcomes = evaluate_attacks(engine, scn, name_to_id)
    report.delay_stats = engine.stats.to_dict()
    report.path_edge_histogram = dict(engine.path_edge_histogram)
    report.cache_footprint = engine.cache.footprint()
    report.ambiguous_requests = engine.ambiguous_requests
    report.expect_failures = _check_expectations(scn, report)
    return report, engine


def _check_expectations(scn: Scenario, report: RunReport) -> list[str]:
    failures = []
    for x in scn.expects:
        if _cli_mode_to_engine(x["mode"]) != report.mode:
            continue
        if "main_prompts" in x and report.main_prompts != x["main_prompts"]:
            failures.append(
                f"mode {x['mode']}: expected {x['main_prompts']} main prompts, got {report.main_prompts}"
            )
        if "preliminary_prompts" in x and report.preliminary_prompts != x["preliminary_prompts"]:
            failures.append(
                f"mode {x['mode']}: expected {x['preliminary_prompts']} preliminary prompts, "
                f"got {report.preliminary_prompts}"
            )
        for name, expected in x.get("attack", {}).items():
            actual = report.attack_outcomes.get(name)
            if actual != expected:
                failures.append(
                    f"mode {x['mode']}: attack {name!r} expected succeeded={expected}, got {actual}"
                )
    return failures


def compare_modes(scn: Scenario, window_ms: int | None = None) -> dict:
    """Run both authorization modes from clean state and tabulate the contrast."""
    reports = {}
    for mode in (MODE_FIRST_USE, MODE_DELEGATION):
        report, _engine = run_scenario(scn, mode=mode.replace("_", "-") if mode == MODE_FIRST_USE else "entrust",
                                       window_ms=window_ms)
        reports[mode] = report
    return reports


# -- tracing and replay --------------------------------------------------------------


def trace_header(scn: Scenario, mode: str | None, policy_rules, window_ms, seed) -> dict:
    return {
        "mode": mode,
        "policy_override": policy_rules,
        "window_override": window_ms,
        "seed": seed,
        "scenario_sha256": scn.sha256(),
        "scenario": scn.source_text,
    }


def run_with_trace(
    scn: Scenario,
    trace_path: str | Path | None,
    mode: str | None = None,
    policy_rules: list[str] | None = None,
    window_ms: int | None = None,
    seed: int | None = None,
    interactive: bool = False,
) -> tuple[RunReport, TraceWriter]:
    header = trace_header(scn, mode, policy_rules, window_ms, seed)
    fh = open(trace_path, "w") if trace_path is not None else None
    try:
        writer = TraceWriter(fh, header)
        report, _engine = run_scenario(
            scn, mode=mode, policy_rules=policy_rules, window_ms=window_ms,
            trace=writer, interactive=interactive,
        )
    finally:
        if fh is not None:
            fh.close()
    return report, writer


def replay(trace_path: str | Path) -> RunReport:
    """Re-execute the embedded scenario and verify a byte-identical trace."""
    header, lines = read_trace(trace_path)
    scn = loads_scenario(header["scenario"])
    if scn.sha256() != header["scenario_sha256"]:
        raise TraceDivergence(0, "embedded scenario does not match its recorded digest")
    rerun_header = trace_header(
        scn, header.get("mode"), header.get("policy_override"), header.get("window_override"),
        header.get("seed"),
    )
    writer = TraceWriter(None, rerun_header)
    report, _engine = run_scenario(
        scn,
        mode=header.get("mode"),
        policy_rules=header.get("policy_override"),
        window_ms=header.get("window_override"),
        trace=writer,
    )
    for i, expected in enumerate(lines):
        if i >= len(writer.lines) or writer.lines[i] != expected:
            raise TraceDivergence(i, "recorded and re-executed traces differ")
    if len(writer.lines) != len(lines):
        raise TraceDivergence(len(lines), "re-executed trace has extra records")
    return report


def load(path: str | Path) -> Scenario:
    return load_scenario(path)
