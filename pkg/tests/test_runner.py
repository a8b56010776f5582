from __future__ import annotations

import json

import pytest

from delegauth import AuthorizationCache, compare_modes, run_scenario, run_with_trace
from delegauth.errors import TraceDivergence
from delegauth.runner import replay
from delegauth.scenario import loads_scenario


def test_compare_modes_on_task_a(task_a):
    reports = compare_modes(task_a)
    fu = reports["first_use"]
    en = reports["delegation"]
    assert fu.main_prompts == 0 and fu.attack_outcomes["stealth_screen_grab"] is True
    assert en.main_prompts == 1 and en.attack_outcomes["stealth_screen_grab"] is False
    assert not fu.expect_failures and not en.expect_failures


def test_empty_timeline_produces_empty_report():
    scn = loads_scenario(
        "\n".join(
            [
                '{"format":"delegauth-scenario","version":1}',
                '{"kind":"program","name":"A","mark":"A"}',
                '{"kind":"widget","label":"go","input":"voice"}',
                '{"kind":"sensor","id":"Camera"}',
                '{"kind":"operation","op":"snap","sensors":["Camera"],"phrase":"capture"}',
                '{"kind":"mode","mode":"delegation"}',
            ]
        )
    )
    for mode, report in compare_modes(scn).items():
        assert report.decisions == []
        assert sum(report.prompt_counts.values()) == 0
        assert report.delay_stats["total_events"] == 0


def test_mode_override_aliases(task_a):
    for alias in ("entrust", "delegation"):
        report, _ = run_scenario(task_a, mode=alias)
        assert report.mode == "delegation"
    for alias in ("first-use", "first_use"):
        report, _ = run_scenario(task_a, mode=alias)
        assert report.mode == "first_use"


def test_expect_failures_surface_when_policy_flipped(task_a):
    # allow-all main policy makes the delegation attack "succeed on prompt",
    # violating the scenario's 0-attack expectation? No: prompted allows are
    # not silent, so the attack still fails; flip the expectation instead by
    # running first-use without its preliminary grant phase.
    scn = loads_scenario(task_a.source_text.replace('"phase":"preliminary",', '"phase":"main",'))
    report, _ = run_scenario(scn, mode="first-use")
    assert report.expect_failures  # preliminary prompt count no longer matches


def test_trace_replay_round_trip(task_b, tmp_path):
    trace_path = tmp_path / "b.trace"
    report, writer = run_with_trace(task_b, trace_path, mode="entrust", seed=9)
    assert trace_path.exists()
    replayed = replay(trace_path)
    assert replayed.main_prompts == report.main_prompts


def test_trace_mutation_detected(task_a, tmp_path):
    trace_path = tmp_path / "a.trace"
    run_with_trace(task_a, trace_path, mode="entrust")
    lines = trace_path.read_text().splitlines()
    for mutate_at in (5, len(lines) // 2, len(lines) - 1):
        rec = json.loads(lines[mutate_at])
        rec["t"] = rec.get("t", 0) + 1
        mutated = list(lines)
        mutated[mutate_at] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
        bad = tmp_path / f"mut{mutate_at}.trace"
        bad.write_text("\n".join(mutated) + "\n")
        with pytest.raises(TraceDivergence) as exc:
            replay(bad)
        assert exc.value.seq == mutate_at


def test_zero_prompt_replay_with_cache_roundtrip(task_b):
    cache = AuthorizationCache()
    r1, e1 = run_scenario(task_b, policy_rules=["allow * * * *"], cache=cache)
    assert sum(r1.prompt_counts.values()) > 0
    exported = e1.cache.export()
    fresh = AuthorizationCache()
    fresh.import_(exported)
    r2, _ = run_scenario(task_b, policy_rules=["allow * * * *"], cache=fresh)
    assert sum(r2.prompt_counts.values()) == 0
    allowed = [d for d in r2.decisions if d["outcome"] == "allowed"]
    assert allowed and all(d["reason"] == "cached" for d in allowed)


def test_denials_not_cached_by_default(task_a):
    cache = AuthorizationCache()
    r1, e1 = run_scenario(task_a, cache=cache)  # main policy denies
    r2, _ = run_scenario(task_a, cache=e1.cache)
    # denied paths were not cached: the second run prompts again
    assert r2.main_prompts == 1


def test_cache_denials_flag_suppresses_reprompt(task_a):
    text = task_a.source_text.replace(
        '{"kind":"config","window_ms":150}',
        '{"kind":"config","window_ms":150,"cache_denials":true}',
    )
    scn = loads_scenario(text)
    cache = AuthorizationCache()
    r1, e1 = run_scenario(scn, cache=cache)
    r2, _ = run_scenario(scn, cache=e1.cache)
    assert r1.main_prompts == 1
    assert r2.main_prompts == 0
    cached_denies = [d for d in r2.decisions if d["outcome"] == "denied" and d["reason"] == "policy"]
    assert cached_denies
