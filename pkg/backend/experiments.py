"""Experiment orchestration: configuration parsing, runners, and artifact emission.

Configuration files use a flat key-value grammar::

    # comment
    experiment = ratio-weighted
    r = 0.7, 0.3
    alpha = 0.1, 0.2; 0.3, 0.4

Lists are comma separated, matrix rows are separated by ';'. A file whose
first non-blank character is '{' is read as a JSON object instead. Keys may be
written by name or by their camelCase alias; unknown and duplicate keys are
errors.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import types
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from config import ConfigurationError, RuntimeSettings
from diophantine import (
    INEQUALITY_SLACK,
    ApproximatePair,
    SearchExhaustedError,
    as_alpha,
    dirichlet_solve,
    geometric_height,
    multiplicative_solve,
    weighted_solutions,
)
from dynamics import AverageEstimate, FlowParams, agree, two_sided_p_value
from geometry import (
    AdmissibleComplement,
    Cap,
    CapInAdmissible,
    DimensionError,
    DirectionSet,
    EuclideanBall,
    FullSphere,
    ProbabilityVector,
    RegionFamily,
    RegionSpec,
    UnboundedRegionError,
)
from lattice import (
    BasisFormatError,
    EnumerationLimitError,
    LatticeBasis,
    PrecisionError,
    ball_points,
    from_alpha,
    load_basis,
    load_matrix,
)
from models import ExperimentConfig, RunManifest, RunSummary
from pydantic import ValidationError
from siegel_average import (
    CuspTable,
    RatioCurve,
    cusp_divergence_experiment,
    ratio_experiment,
    spherical_average_mc,
    truncated_cone_volume,
    volume_mc,
)

logger = logging.getLogger(__name__)

EXIT_PASSED = 0
EXIT_ERROR = 1
EXIT_FAILED = 2

DEFAULT_TOLERANCE = {
    "avg-limit": 0.15,
    "ratio-weighted": 0.1,
    "ratio-multiplicative": 0.1,
}
DEFAULT_GROWTH = {"cusp": 3.0, "cone-volume": 2.0}
RATIO_COLUMNS = (
    "T",
    "numerator_mean",
    "numerator_se",
    "denominator_mean",
    "denominator_se",
    "ratio",
    "target_ratio",
    "samples",
    "seed",
)
CUSP_COLUMNS = ("T", "truncation", "mean", "se", "samples", "seed")

Row = tuple[object, ...]

# Errors that end a run with exit code 1 and an error summary.
RUN_ERRORS = (
    ConfigurationError,
    BasisFormatError,
    DimensionError,
    UnboundedRegionError,
    PrecisionError,
    EnumerationLimitError,
    SearchExhaustedError,
    ValueError,
)


@dataclass(frozen=True)
class ExperimentOutcome:
    columns: tuple[str, ...]
    rows: list[Row]
    passed: bool
    checks: dict[str, float | bool] = field(default_factory=dict)


@dataclass(frozen=True)
class RunResult:
    exit_code: int
    summary: RunSummary
    artifacts: tuple[Path, ...]


@dataclass(frozen=True)
class RunContext:
    threads: int
    chunk_size: int
    point_cap: int


def _annotation_depth(annotation: object) -> int:
    """0 for scalars, 1 for lists, 2 for lists of lists."""
    origin = typing.get_origin(annotation)
    if origin is list:
        (inner,) = typing.get_args(annotation)
        return 1 + _annotation_depth(inner)
    if origin in (typing.Union, types.UnionType):
        return max(
            (_annotation_depth(arg) for arg in typing.get_args(annotation)), default=0
        )
    return 0


def _field_depths() -> dict[str, int]:
    depths: dict[str, int] = {}
    for name, info in ExperimentConfig.model_fields.items():
        depth = _annotation_depth(info.annotation)
        depths[name] = depth
        if info.alias:
            depths[info.alias] = depth
    return depths


def _split_value(raw: str, depth: int) -> object:
    if depth == 2:
        return [
            [entry.strip() for entry in row.split(",") if entry.strip()]
            for row in raw.split(";")
            if row.strip()
        ]
    if depth == 1:
        return [entry.strip() for entry in raw.split(",") if entry.strip()]
    return raw


def _read_key_values(text: str) -> tuple[dict[str, object], dict[str, int]]:
    depths = _field_depths()
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    issues: list[str] = []
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            issues.append(f"line {number}: expected 'key = value'")
            continue
        key, raw = (part.strip() for part in content.split("=", 1))
        if not key:
            issues.append(f"line {number}: missing key")
            continue
        if key in lines:
            issues.append(
                f"line {number}: duplicate key '{key}' (first set on line {lines[key]})"
            )
            continue
        lines[key] = number
        values[key] = _split_value(raw, depths.get(key, 0))
    if issues:
        raise ConfigurationError("; ".join(issues), issues)
    return values, lines


def _reject_duplicates(pairs: list[tuple[str, object]]) -> dict[str, object]:
    result: dict[str, object] = {}
    for key, value in pairs:
        if key in result:
            raise ConfigurationError(f"duplicate key '{key}'")
        result[key] = value
    return result


def parse_config(
    text: str, overrides: Mapping[str, object] | None = None
) -> ExperimentConfig:
    """Validate key-value or JSON text into an ``ExperimentConfig``.

    ``overrides`` replace values from the text; a missing ``experiment`` key
    may be supplied there.
    """
    lines: dict[str, int] = {}
    if text.lstrip().startswith("{"):
        try:
            values = json.loads(text, object_pairs_hook=_reject_duplicates)
        except json.JSONDecodeError as error:
            raise ConfigurationError(
                f"line {error.lineno}: invalid JSON ({error.msg})"
            ) from error
        if not isinstance(values, dict):
            raise ConfigurationError("A JSON configuration must be an object.")
    else:
        values, lines = _read_key_values(text)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "experiment" and values.get("experiment") not in (None, value):
            raise ConfigurationError(
                f"experiment: the file configures '{values['experiment']}', "
                f"not '{value}'"
            )
        values[key] = value
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as error:
        issues = []
        for detail in error.errors():
            location = ".".join(str(part) for part in detail["loc"]) or "config"
            key = str(detail["loc"][0]) if detail["loc"] else ""
            prefix = f"line {lines[key]}: " if key in lines else ""
            message = detail["msg"].removeprefix("Value error, ")
            if detail["type"] == "missing":
                message = "required key is missing"
            elif detail["type"] == "extra_forbidden":
                message = "unknown key"
            issues.append(f"{prefix}{location}: {message}")
        raise ConfigurationError("; ".join(issues), issues) from None


def load_config(
    path: str | Path, overrides: Mapping[str, object] | None = None
) -> ExperimentConfig:
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as error:
        raise ConfigurationError(f"Cannot read {source}: {error}") from error
    return parse_config(text, overrides)


def weights(values: list[float] | None, size: int) -> ProbabilityVector:
    if values is None:
        return ProbabilityVector.uniform(size)
    return ProbabilityVector(tuple(values))


def build_lattice(config: ExperimentConfig) -> LatticeBasis:
    if config.lattice == "identity":
        return LatticeBasis.identity(config.d)
    if config.lattice == "basis-file":
        assert config.lattice_path is not None
        basis = load_basis(config.lattice_path)
        if basis.dim != config.d:
            raise ConfigurationError(
                f"lattice_path: the basis must be {config.d}×{config.d}"
            )
        return basis
    return from_alpha(load_alpha(config))


def load_alpha(config: ExperimentConfig) -> np.ndarray:
    if config.lattice == "alpha-file":
        assert config.lattice_path is not None
        matrix = as_alpha(load_matrix(config.lattice_path))
        if matrix.shape != (config.m, config.n):
            raise ConfigurationError(
                f"lattice_path: alpha must be {config.m}×{config.n}"
            )
        return matrix
    if config.alpha is None:
        raise ConfigurationError("alpha: this run needs an inline alpha or alpha-file")
    return as_alpha(config.alpha)


def build_cap(config: ExperimentConfig) -> Cap:
    assert config.cap_center is not None and config.cap_radius is not None
    return Cap.around(config.cap_center, config.cap_radius)


def build_direction(config: ExperimentConfig) -> DirectionSet:
    if config.direction == "cap":
        return build_cap(config)
    if config.direction == "admissible":
        assert config.delta is not None
        return AdmissibleComplement(config.delta, config.m)
    if config.direction == "cap-in-admissible":
        assert config.delta is not None
        return CapInAdmissible(build_cap(config), config.delta)
    return FullSphere(config.m)


def tolerance_for(config: ExperimentConfig) -> float:
    if config.tolerance is None:
        return DEFAULT_TOLERANCE[config.experiment]
    return config.tolerance


def growth_for(config: ExperimentConfig) -> float:
    if config.growth_factor is None:
        return DEFAULT_GROWTH[config.experiment]
    return config.growth_factor


def _estimate_cells(estimate: AverageEstimate) -> Row:
    return (estimate.mean, estimate.std_error)


def _run_avg_limit(
    config: ExperimentConfig, context: RunContext
) -> ExperimentOutcome:
    lattice = build_lattice(config)
    assert config.ball_center is not None and config.ball_radius is not None
    ball = EuclideanBall(tuple(config.ball_center), config.ball_radius)
    flow = FlowParams(weights(config.r, config.m), weights(config.s, config.n), 0.0)
    times = list(config.log_T_grid or [math.log(T) for T in config.heights()])
    volume = volume_mc(
        ball,
        config.volume_samples,
        config.seed,
        threads=context.threads,
        chunk_size=context.chunk_size,
    )
    rows: list[Row] = []
    deviations = []
    errors = []
    for t in times:
        estimate = spherical_average_mc(
            lattice,
            ball,
            config.samples,
            config.seed,
            flow=flow.at(t),
            threads=context.threads,
            chunk_size=context.chunk_size,
            point_cap=context.point_cap,
        )
        deviation = estimate.mean - volume.mean
        deviations.append(deviation)
        errors.append(math.hypot(estimate.std_error, volume.std_error))
        logger.info(
            "t=%.6g averaged count %.4f (volume %.4f)", t, estimate.mean, volume.mean
        )
        rows.append(
            (t, *_estimate_cells(estimate), volume.mean, volume.std_error, deviation)
            + (config.samples, config.seed)
        )
    tolerance = tolerance_for(config)
    final_ok = abs(deviations[-1]) <= max(
        tolerance * volume.mean, config.band * errors[-1]
    )
    improving = abs(deviations[-1]) <= abs(deviations[0]) + config.band * errors[-1]
    return ExperimentOutcome(
        ("t", "mean", "se", "volume", "volume_se", "deviation", "samples", "seed"),
        rows,
        final_ok and improving,
        {
            "final_within_tolerance": final_ok,
            "deviation_not_growing": improving,
            "p_value": two_sided_p_value(deviations[-1], errors[-1]),
        },
    )


def _ratio_rows(curve: RatioCurve, config: ExperimentConfig) -> list[Row]:
    return [
        (
            row.T,
            *_estimate_cells(row.numerator),
            *_estimate_cells(row.denominator),
            row.ratio,
            row.target_ratio,
            config.samples,
            config.seed,
        )
        for row in curve.rows
    ]


def _run_ratio(
    config: ExperimentConfig, context: RunContext
) -> ExperimentOutcome:
    lattice = build_lattice(config)
    numerator = build_direction(config)
    r = weights(config.r, config.m)
    s = weights(config.s, config.n)
    if config.experiment == "ratio-multiplicative":
        assert config.delta is not None
        base = RegionSpec(
            RegionFamily.MULTIPLICATIVE,
            config.m,
            config.n,
            config.epsilon,
            r=r,
            s=s,
            direction=AdmissibleComplement(config.delta, config.m),
        )
    else:
        family = RegionFamily(config.family)
        base = RegionSpec(family, config.m, config.n, config.epsilon, r=r, s=s)
    curve = ratio_experiment(
        lattice,
        base,
        numerator,
        config.heights(),
        config.samples,
        config.seed,
        volume_samples=config.volume_samples,
        threads=context.threads,
        chunk_size=context.chunk_size,
        point_cap=context.point_cap,
    )
    tolerance = tolerance_for(config)
    passed = curve.converged(tolerance=tolerance, width=config.band)
    final = curve.rows[-1]
    checks: dict[str, float | bool] = {
        "final_within_tolerance": passed,
        "target_ratio": final.target_ratio,
        "flagged_rows": sum(row.flagged for row in curve.rows),
    }
    if final.ratio is not None and final.ratio_std_error is not None:
        checks["final_ratio"] = final.ratio
        checks["p_value"] = two_sided_p_value(
            final.ratio - final.target_ratio,
            math.hypot(final.ratio_std_error, final.target_std_error),
        )
    return ExperimentOutcome(RATIO_COLUMNS, _ratio_rows(curve, config), passed, checks)


def _cusp_rows(table: CuspTable, config: ExperimentConfig) -> list[Row]:
    return [
        (
            row.T,
            row.truncation,
            *_estimate_cells(row.estimate),
            config.samples,
            config.seed,
        )
        for row in table.rows
    ]


def _run_cusp(
    config: ExperimentConfig, context: RunContext
) -> ExperimentOutcome:
    table = cusp_divergence_experiment(
        build_lattice(config),
        build_cap(config),
        config.epsilon,
        config.heights(),
        config.samples,
        config.seed,
        n=config.n,
        r=weights(config.r, config.m),
        s=weights(config.s, config.n),
        truncation_caps=config.truncation_caps,
        truncation_scale=config.truncation_scale,
        truncation_exponent=config.truncation_exponent,
        threads=context.threads,
        chunk_size=context.chunk_size,
        point_cap=context.point_cap,
    )
    growth = growth_for(config)
    if config.expectation == "diverge":
        passed = table.diverges(growth)
    else:
        passed = table.stabilizes(width=config.band)
    return ExperimentOutcome(
        CUSP_COLUMNS,
        _cusp_rows(table, config),
        passed,
        {
            "strictly_increasing": table.strictly_increasing,
            "growth": table.growth,
            "stabilizes": table.stabilizes(width=config.band),
        },
    )


def _run_cone_volume(
    config: ExperimentConfig, context: RunContext
) -> ExperimentOutcome:
    cap = build_cap(config)
    estimates = [
        truncated_cone_volume(
            cap,
            Tau,
            config.volume_samples,
            config.seed,
            threads=context.threads,
            chunk_size=context.chunk_size,
        )
        for Tau in config.tau_grid or []
    ]
    means = [estimate.mean for estimate in estimates]
    increasing = all(later > earlier for earlier, later in zip(means, means[1:]))
    growth = means[-1] / means[0] if means[0] > 0 else math.inf
    settles = len(estimates) >= 2 and agree(
        estimates[-2], estimates[-1], width=config.band
    )
    if config.expectation == "diverge":
        threshold = growth_for(config)
        passed = increasing and growth >= threshold
    else:
        passed = settles
    return ExperimentOutcome(
        ("Tau", "mean", "se", "samples", "seed"),
        [
            (Tau, *_estimate_cells(estimate), config.volume_samples, config.seed)
            for Tau, estimate in zip(config.tau_grid or [], estimates)
        ],
        passed,
        {"strictly_increasing": increasing, "growth": growth, "stabilizes": settles},
    )


def _run_enumerate(
    config: ExperimentConfig, context: RunContext
) -> ExperimentOutcome:
    lattice = build_lattice(config)
    assert config.radius is not None
    coeffs, coords = ball_points(lattice.basis, config.radius, context.point_cap)
    points = {tuple(int(value) for value in row) for row in coeffs}
    symmetric = all(tuple(-value for value in point) in points for point in points)
    dim = lattice.dim
    rows: list[Row] = [
        (
            *(int(value) for value in coefficient_row),
            *(float(value) for value in coordinate_row),
            float(np.linalg.norm(coordinate_row)),
        )
        for coefficient_row, coordinate_row in zip(coeffs, coords)
    ]
    return ExperimentOutcome(
        (
            *(f"c{index}" for index in range(1, dim + 1)),
            *(f"x{index}" for index in range(1, dim + 1)),
            "norm",
        ),
        rows,
        symmetric,
        {"symmetric": symmetric, "points": len(rows)},
    )


def _pair_row(kind: str, pair: ApproximatePair) -> Row:
    return (kind, *pair.q, *pair.p, *pair.errors, pair.height)


def _run_approximates(
    config: ExperimentConfig, context: RunContext
) -> ExperimentOutcome:
    alpha = load_alpha(config)
    m, n = alpha.shape
    rows: list[Row] = []
    checks: dict[str, float | bool] = {}
    if config.Q is not None:
        Q = config.Q
        dirichlet = dirichlet_solve(alpha, Q)
        multiplicative = multiplicative_solve(alpha, Q)
        errors = np.abs(dirichlet.recomputed_errors(alpha))
        checks["dirichlet"] = bool(
            1 <= dirichlet.height <= Q
            and np.max(errors) <= Q ** (-n / m) + INEQUALITY_SLACK
        )
        product = float(np.prod(np.abs(multiplicative.recomputed_errors(alpha))))
        height = geometric_height(multiplicative.q)
        checks["multiplicative"] = bool(
            height <= Q * (1 + INEQUALITY_SLACK)
            and product <= Q ** (-n) + INEQUALITY_SLACK
        )
        checks["multiplicative_corollary"] = bool(
            product <= height ** (-n) + INEQUALITY_SLACK
        )
        rows.append(_pair_row("dirichlet", dirichlet))
        rows.append(_pair_row("multiplicative", multiplicative))
    if config.height_bound is not None:
        pairs = weighted_solutions(
            alpha, weights(config.r, m), weights(config.s, n), config.height_bound
        )
        checks["weighted_pairs"] = len(pairs)
        rows += [_pair_row("weighted", pair) for pair in pairs]
    columns = (
        "kind",
        *(f"q{index}" for index in range(1, n + 1)),
        *(f"p{index}" for index in range(1, m + 1)),
        *(f"error{index}" for index in range(1, m + 1)),
        "height",
    )
    passed = all(value for value in checks.values() if isinstance(value, bool))
    return ExperimentOutcome(columns, rows, passed, checks)


RUNNERS: dict[str, Callable[[ExperimentConfig, RunContext], ExperimentOutcome]] = {
    "avg-limit": _run_avg_limit,
    "ratio-weighted": _run_ratio,
    "ratio-multiplicative": _run_ratio,
    "cusp": _run_cusp,
    "cone-volume": _run_cone_volume,
    "approximates": _run_approximates,
    "enumerate": _run_enumerate,
}


def run_context(config: ExperimentConfig, settings: RuntimeSettings) -> RunContext:
    return RunContext(
        threads=config.threads or settings.threads,
        chunk_size=settings.chunk_size,
        point_cap=config.point_cap or settings.point_cap,
    )


def execute(
    config: ExperimentConfig, settings: RuntimeSettings | None = None
) -> ExperimentOutcome:
    """Run an experiment in memory."""
    runtime = settings or RuntimeSettings.from_env()
    outcome = RUNNERS[config.experiment](config, run_context(config, runtime))
    # JSON artifacts carry finite numbers only; an unbounded growth is dropped.
    checks = {
        name: value
        for name, value in outcome.checks.items()
        if isinstance(value, bool) or math.isfinite(value)
    }
    return replace(outcome, checks=checks)


def format_cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, columns: tuple[str, ...], rows: list[Row]) -> None:
    with path.open("w", encoding="utf-8", newline="") as output:
        writer = csv.writer(output, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows([format_cell(value) for value in row] for row in rows)


def _write_json(path: Path, payload: dict[str, object]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")


def config_echo(config: ExperimentConfig) -> dict[str, object]:
    return config.model_dump(mode="json", exclude_none=True)


def run(
    config: ExperimentConfig,
    *,
    settings: RuntimeSettings | None = None,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Run an experiment and write its CSV, JSON summary, and run manifest."""
    runtime = settings or RuntimeSettings.from_env()
    directory = Path(out_dir or config.out_dir or runtime.output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    stem = config.experiment
    csv_path = directory / f"{stem}.csv"
    summary_path = directory / f"{stem}-summary.json"
    manifest_path = directory / f"{stem}-manifest.json"

    started = time.perf_counter()
    error_message: str | None = None
    try:
        outcome = execute(config, runtime)
        exit_code = EXIT_PASSED if outcome.passed else EXIT_FAILED
    except RUN_ERRORS as error:
        logger.error("%s failed: %s", stem, error)
        error_message = str(error)
        outcome = ExperimentOutcome((), [], False)
        if isinstance(error, EnumerationLimitError) and isinstance(
            error.partial, CuspTable
        ):
            outcome = ExperimentOutcome(
                CUSP_COLUMNS, _cusp_rows(error.partial, config), False
            )
        exit_code = EXIT_ERROR
    wall_seconds = time.perf_counter() - started

    artifacts = [summary_path, manifest_path]
    if outcome.columns:
        write_csv(csv_path, outcome.columns, outcome.rows)
        artifacts.insert(0, csv_path)
    summary = RunSummary(
        experiment=config.experiment,
        passed=exit_code == EXIT_PASSED,
        rows=len(outcome.rows),
        seed=config.seed,
        wall_seconds=wall_seconds,
        checks=outcome.checks,
        error=error_message,
    )
    _write_json(summary_path, summary.model_dump(by_alias=True, exclude_none=True))
    manifest = RunManifest(
        config=config_echo(config),
        code_version=runtime.application_version,
        service=runtime.service_name,
        wall_seconds=wall_seconds,
        artifacts=[path.name for path in artifacts],
    )
    _write_json(manifest_path, manifest.model_dump(by_alias=True))
    return RunResult(exit_code, summary, tuple(artifacts))
