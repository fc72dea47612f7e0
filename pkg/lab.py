"""Run SpiralLab experiments from the command line, or serve the local lab API."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

ROOT = Path(__file__).resolve().parent
BACKEND_DIR = ROOT / "backend"
sys.path.insert(0, str(BACKEND_DIR))

from config import ConfigurationError, RuntimeSettings  # noqa: E402
from experiments import EXIT_ERROR, RunResult, load_config, run  # noqa: E402
from models import EXPERIMENT_NAMES  # noqa: E402

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--log-level",
        choices=LOG_LEVELS,
        default="WARNING",
        help="Logging threshold for progress and diagnostics.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENT_NAMES:
        command = commands.add_parser(name, help=f"Run the {name} experiment.")
        command.add_argument(
            "--config",
            required=True,
            type=Path,
            help="Key-value or JSON experiment configuration.",
        )
        command.add_argument("--out-dir", type=Path, help="Artifact directory.")
        command.add_argument("--seed", type=int, help="Override the seed.")
        command.add_argument("--samples", type=int, help="Override the sample count.")
        command.add_argument("--threads", type=int, help="Worker threads.")
    commands.add_parser("serve", help="Serve the local lab API.")
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def report(result: RunResult) -> None:
    summary = result.summary
    if summary.error:
        print(f"{summary.experiment} error: {summary.error}", file=sys.stderr)
    else:
        verdict = "passed" if summary.passed else "failed"
        print(
            f"{summary.experiment} {verdict}: {summary.rows} rows, "
            f"seed {summary.seed}, {summary.wall_seconds:.2f}s"
        )
    for path in result.artifacts:
        print(f"  wrote {path}")


def serve(settings: RuntimeSettings) -> int:
    import uvicorn

    uvicorn.run(
        "main:app",
        app_dir=str(BACKEND_DIR),
        host=settings.api_host,
        port=settings.api_port,
    )
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    arguments = build_parser().parse_args(argv)
    configure_logging(arguments.log_level)
    try:
        settings = RuntimeSettings.from_env()
        if arguments.command == "serve":
            return serve(settings)
        config = load_config(
            arguments.config,
            {
                "experiment": arguments.command,
                "seed": arguments.seed,
                "samples": arguments.samples,
                "threads": arguments.threads,
            },
        )
    except ConfigurationError as error:
        for issue in error.issues:
            print(f"Configuration error: {issue}", file=sys.stderr)
        return EXIT_ERROR
    result = run(config, settings=settings, out_dir=arguments.out_dir)
    report(result)
    return result.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
