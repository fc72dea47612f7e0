from __future__ import annotations

from check import ROOT, validation_steps


def test_full_validation_plan_covers_every_layer():
    steps = validation_steps("python")
    labels = [step.label for step in steps]
    assert labels == [
        "backend format",
        "backend lint",
        "backend typecheck",
        "backend tests and coverage",
    ]
    assert all(step.cwd == ROOT for step in steps)
    assert "-m" in steps[-1].command
    assert "not slow" not in steps[-1].command


def test_fast_validation_plan_skips_slow_experiments():
    tests = validation_steps("python", include_slow=False)[-1]
    assert tests.command[-2:] == ("-m", "not slow")
