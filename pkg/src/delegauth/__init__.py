"""Deterministic simulator for delegation-path authorization of sensor access
in cooperating programs."""

from .auth import (
    AuthorizationCache,
    Decision,
    FirstUseState,
    InteractivePrompt,
    ScriptedPolicy,
    render_first_use_prompt,
    render_prompt,
)
from .engine import Engine, EngineConfig, MODE_DELEGATION, MODE_FIRST_USE
from .graph import DelegationPath, GraphStore, InputKey, PathKey
from .model import (
    HandoffEvent,
    InputEvent,
    OperationRequest,
    Registry,
    WidgetKind,
)
from .runner import RunReport, compare_modes, replay, run_scenario, run_with_trace
from .scenario import Scenario, load_scenario, loads_scenario
from .scheduler import DelayStats, HandlerSpec, HandlerTable, SchedulerConfig
from .workload import WorkloadParams, generate_workload

__all__ = [
    "AuthorizationCache",
    "Decision",
    "DelayStats",
    "DelegationPath",
    "Engine",
    "EngineConfig",
    "FirstUseState",
    "GraphStore",
    "HandlerSpec",
    "HandlerTable",
    "HandoffEvent",
    "InputEvent",
    "InputKey",
    "InteractivePrompt",
    "MODE_DELEGATION",
    "MODE_FIRST_USE",
    "OperationRequest",
    "PathKey",
    "Registry",
    "RunReport",
    "Scenario",
    "SchedulerConfig",
    "ScriptedPolicy",
    "WidgetKind",
    "WorkloadParams",
    "compare_modes",
    "generate_workload",
    "load_scenario",
    "loads_scenario",
    "render_first_use_prompt",
    "render_prompt",
    "replay",
    "run_scenario",
    "run_with_trace",
]
