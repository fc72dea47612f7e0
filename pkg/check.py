"""Run SpiralLab's complete repository validation workflow."""

from __future__ import annotations

import argparse
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

ROOT = Path(__file__).resolve().parent
BACKEND = ROOT / "backend"
PYTHON_SOURCES = ("backend", "tests", "lab.py", "check.py")
TYPED_SOURCES = (
    "backend/config.py",
    "backend/models.py",
    "backend/geometry.py",
    "backend/dynamics.py",
    "backend/experiments.py",
    "lab.py",
    "check.py",
)


@dataclass(frozen=True)
class CheckStep:
    label: str
    command: tuple[str, ...]
    cwd: Path


def validation_steps(
    python: str, *, include_slow: bool = True
) -> tuple[CheckStep, ...]:
    pytest_command = [
        python,
        "-m",
        "pytest",
        "tests",
        "--cov=backend",
        "--cov=lab",
        "--cov-report=term-missing",
        "--cov-report=xml:.tmp/backend-coverage.xml",
    ]
    if not include_slow:
        pytest_command += ["-m", "not slow"]
    return (
        CheckStep(
            "backend format",
            (python, "-m", "ruff", "format", "--check", *PYTHON_SOURCES),
            ROOT,
        ),
        CheckStep(
            "backend lint",
            (python, "-m", "ruff", "check", *PYTHON_SOURCES),
            ROOT,
        ),
        CheckStep(
            "backend typecheck",
            (python, "-m", "mypy", *TYPED_SOURCES),
            ROOT,
        ),
        CheckStep("backend tests and coverage", tuple(pytest_command), ROOT),
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--skip-slow",
        action="store_true",
        help="Skip the long acceptance experiments.",
    )
    arguments = parser.parse_args()

    for index, step in enumerate(
        validation_steps(sys.executable, include_slow=not arguments.skip_slow),
        start=1,
    ):
        print(f"[{index}] {step.label}")
        result = subprocess.run(step.command, cwd=step.cwd, check=False)
        if result.returncode:
            print(f"Validation stopped: {step.label} failed.", file=sys.stderr)
            return result.returncode
    print("SpiralLab validation passed.")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
