"""Prompt-text goldens for the three task fixtures, via render_prompt directly
and via full scenario runs."""

from __future__ import annotations

from delegauth import run_scenario
from delegauth.auth import prompt_marks, render_prompt
from delegauth.graph import DelegationPath
from delegauth.model import HandoffEvent, InputEvent, OperationRequest, Registry, WidgetKind
from conftest import golden


def _task_b_registry() -> Registry:
    reg = Registry()
    reg.register_program("Google Assistant", "GA")
    reg.register_program("Basic Camera", "BC", display="the Basic Camera app")
    reg.register_widget("take a selfie", WidgetKind.VOICE, {"take a picture of me"})
    reg.register_sensor("Camera")
    reg.register_sensor("Microphone")
    reg.register_sensor("GpsReceiver", phrase="GPS receiver to record your location")
    reg.register_operation("capture_picture", ["Camera"], "capture pictures")
    reg.register_operation("record_audio", ["Microphone"], "record audio")
    reg.register_operation("read_location", ["GpsReceiver"], "access")
    return reg


def test_task_a_golden_by_construction():
    reg = Registry()
    sa = reg.register_program("Smart Assistant", "SA")
    sc = reg.register_program("Screen Capture", "SC", display="the Screen Capture service")
    w = reg.register_widget("create a note", WidgetKind.VOICE)
    reg.register_sensor("Screen", phrase="content on the screen")
    reg.register_operation("capture_screen", ["Screen"], "capture")
    root = InputEvent("i1", w.id, sa.id, 0)
    path = DelegationPath(
        root,
        (HandoffEvent("h1", sa.id, sc.id, 5, provenance="i1"),),
        OperationRequest("r1", sc.id, "capture_screen", "Screen", 9),
    )
    assert render_prompt([path], reg) == golden("task_a_entrust.golden")
    assert prompt_marks([path], reg) == [["Smart Assistant", "SA"], ["Screen Capture", "SC"]]


def test_task_b_golden_by_construction():
    reg = _task_b_registry()
    ga = reg.program_by_name("Google Assistant")
    bc = reg.program_by_name("Basic Camera")
    w = reg.resolve_widget("take a selfie")
    root = InputEvent("i1", w.id, ga.id, 0)
    hop = HandoffEvent("h1", ga.id, bc.id, 8, provenance="i1")
    paths = [
        DelegationPath(root, (hop,), OperationRequest("r1", bc.id, "capture_picture", "Camera", 12)),
        DelegationPath(root, (hop,), OperationRequest("r2", bc.id, "record_audio", "Microphone", 14)),
        DelegationPath(root, (hop,), OperationRequest("r3", bc.id, "read_location", "GpsReceiver", 16)),
    ]
    assert render_prompt(paths, reg) == golden("task_b_entrust.golden")


def test_task_c_golden_by_construction():
    reg = Registry()
    ga = reg.register_program("Google Assistant", "GA")
    bc = reg.register_program("Basic Camera", "BC", display="the Basic Camera app")
    mb = reg.register_program("Mobile Banking", "MB", display="the Mobile Banking app")
    w = reg.register_widget("deposit bank check", WidgetKind.VOICE)
    reg.register_sensor("Camera")
    reg.register_operation("capture_picture", ["Camera"], "capture pictures")
    root = InputEvent("i1", w.id, ga.id, 0)
    h1 = HandoffEvent("h1", ga.id, bc.id, 7, provenance="i1")
    h2 = HandoffEvent("h2", bc.id, mb.id, 13, provenance="i1")
    paths = [
        DelegationPath(root, (h1,), OperationRequest("r1", bc.id, "capture_picture", "Camera", 11)),
        DelegationPath(root, (h1, h2), OperationRequest("r2", mb.id, "capture_picture", "Camera", 18)),
    ]
    assert render_prompt(paths, reg) == golden("task_c_entrust.golden")


def test_goldens_via_full_scenario_runs(task_a, task_b, task_c):
    for scn, name in ((task_a, "task_a"), (task_b, "task_b"), (task_c, "task_c")):
        report, _ = run_scenario(scn, mode="entrust")
        main_prompts = [p for p in report.prompts if p["phase"] == "main"]
        assert len(main_prompts) == 1
        assert main_prompts[0]["text"] == golden(f"{name}_entrust.golden")


def test_first_use_texts_match_table(task_b, task_c):
    report_b, _ = run_scenario(task_b, mode="first-use")
    texts_b = [p["text"] for p in report_b.prompts]
    assert texts_b == [
        "Allow Basic Camera to capture pictures?",
        "Allow Basic Camera to record audio?",
        "Allow Basic Camera to access this device's location?",
    ]
    report_c, _ = run_scenario(task_c, mode="first-use")
    texts_c = [p["text"] for p in report_c.prompts]
    assert texts_c == [
        "Allow Basic Camera to capture pictures?",
        "Allow Mobile Banking to capture pictures?",
    ]
