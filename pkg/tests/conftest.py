from __future__ import annotations

from importlib.resources import files
from pathlib import Path

import pytest

from delegauth import Registry, WidgetKind, load_scenario

DATA = Path(__file__).parent / "data"


def scenario_path(name: str) -> str:
    return str(files("delegauth") / "scenarios" / f"{name}.scn")


@pytest.fixture
def task_a():
    return load_scenario(scenario_path("task_a"))


@pytest.fixture
def task_b():
    return load_scenario(scenario_path("task_b"))


@pytest.fixture
def task_c():
    return load_scenario(scenario_path("task_c"))


@pytest.fixture
def basic_registry() -> Registry:
    """Three programs, one voice widget, camera + screen sensors."""
    registry = Registry()
    registry.register_program("Alpha", "AL")
    registry.register_program("Beta", "BE")
    registry.register_program("Gamma", "GA")
    registry.register_widget("do the thing", WidgetKind.VOICE)
    registry.register_widget("other thing", WidgetKind.VOICE)
    registry.register_sensor("Camera")
    registry.register_sensor("Screen", phrase="content on the screen")
    registry.register_operation("capture_picture", ["Camera"], "capture pictures")
    registry.register_operation("capture_screen", ["Screen"], "capture")
    return registry


def golden(name: str) -> str:
    return (DATA / name).read_text()
