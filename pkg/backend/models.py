"""Explicit contracts for experiment configuration, run artifacts, and the lab API."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Literal, get_args

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_validator,
    model_validator,
)


def to_camel(value: str) -> str:
    head, *tail = value.split("_")
    return head + "".join(part.capitalize() for part in tail)


class ContractModel(BaseModel):
    model_config = ConfigDict(
        alias_generator=to_camel,
        populate_by_name=True,
        extra="forbid",
    )


ExperimentName = Literal[
    "avg-limit",
    "ratio-weighted",
    "ratio-multiplicative",
    "cusp",
    "cone-volume",
    "approximates",
    "enumerate",
]
EXPERIMENT_NAMES: tuple[str, ...] = get_args(ExperimentName)
DirectionKind = Literal["full", "cap", "admissible", "cap-in-admissible"]
LatticeSource = Literal["identity", "alpha", "alpha-file", "basis-file"]
PositiveFloat = Annotated[float, Field(gt=0, allow_inf_nan=False)]
FiniteFloat = Annotated[float, Field(allow_inf_nan=False)]

GRID_EXPERIMENTS = {"avg-limit", "ratio-weighted", "ratio-multiplicative", "cusp"}
CAP_EXPERIMENTS = {"cusp", "cone-volume"}
WEIGHT_TOLERANCE = 1e-12


def _increasing(values: list[float]) -> bool:
    return all(later > earlier for earlier, later in zip(values, values[1:]))


class ExperimentConfig(ContractModel):
    """One experiment run. Every stochastic run names its seed explicitly."""

    experiment: ExperimentName
    seed: int = Field(ge=0, lt=2**64)
    m: int = Field(default=2, ge=1, le=8)
    n: int = Field(default=1, ge=1, le=8)
    family: Literal["weighted", "isotropic"] = "weighted"
    r: list[PositiveFloat] | None = None
    s: list[PositiveFloat] | None = None
    epsilon: float = 0.5
    T_grid: list[FiniteFloat] | None = None
    log_T_grid: list[FiniteFloat] | None = None
    direction: DirectionKind = "full"
    cap_center: list[FiniteFloat] | None = None
    cap_radius: PositiveFloat | None = None
    delta: float | None = Field(default=None, gt=0, lt=1)
    lattice: LatticeSource = "identity"
    lattice_path: str | None = None
    alpha: list[list[FiniteFloat]] | None = None
    ball_center: list[FiniteFloat] | None = None
    ball_radius: PositiveFloat | None = None
    radius: PositiveFloat | None = None
    Q: float | None = Field(default=None, gt=1, allow_inf_nan=False)
    height_bound: float | None = Field(default=None, ge=1, allow_inf_nan=False)
    tau_grid: list[FiniteFloat] | None = None
    truncation_caps: list[PositiveFloat] | None = None
    truncation_scale: PositiveFloat = 1.0
    truncation_exponent: float = Field(default=0.5, ge=0, allow_inf_nan=False)
    expectation: Literal["diverge", "stabilize"] = "diverge"
    growth_factor: float | None = Field(default=None, gt=1, allow_inf_nan=False)
    tolerance: PositiveFloat | None = None
    band: PositiveFloat = 4.0
    samples: int = Field(default=2000, ge=2)
    volume_samples: int = Field(default=200_000, ge=1)
    threads: int | None = Field(default=None, ge=1, le=256)
    out_dir: str | None = None
    point_cap: int | None = Field(default=None, ge=1)

    @field_validator("epsilon")
    @classmethod
    def epsilon_in_unit_interval(cls, value: float) -> float:
        if not (math.isfinite(value) and 0 < value <= 1):
            raise ValueError("epsilon ∈ (0,1]")
        return value

    @property
    def d(self) -> int:
        return self.m + self.n

    def heights(self) -> list[float]:
        """The T grid, taken from T_grid or from exp of log_T_grid."""
        if self.T_grid:
            return list(self.T_grid)
        return [math.exp(value) for value in self.log_T_grid or []]

    @model_validator(mode="after")
    def cross_field_constraints(self) -> "ExperimentConfig":
        issues: list[str] = []
        for name, weights, size in (("r", self.r, self.m), ("s", self.s, self.n)):
            if weights is None:
                continue
            if len(weights) != size:
                issues.append(f"{name}: needs {size} entries")
            elif abs(math.fsum(weights) - 1.0) > WEIGHT_TOLERANCE:
                issues.append(f"{name}: entries must sum to 1")

        if self.T_grid and self.log_T_grid:
            issues.append("T_grid: give T_grid or log_T_grid, not both")
        if self.experiment in GRID_EXPERIMENTS:
            grid = self.heights()
            if not grid:
                issues.append("T_grid: a nonempty grid is required")
            elif not _increasing(grid):
                issues.append("T_grid: values must be strictly increasing")
            elif self.experiment != "avg-limit" and grid[0] < 1:
                issues.append("T_grid: heights must be at least 1")
            if self.truncation_caps is not None and len(self.truncation_caps) != len(
                grid
            ):
                issues.append("truncation_caps: needs one cap per grid value")
        if self.experiment == "cone-volume":
            if not self.tau_grid:
                issues.append("tau_grid: a nonempty grid is required")
            elif not _increasing(self.tau_grid):
                issues.append("tau_grid: values must be strictly increasing")

        needs_cap = self.direction in {"cap", "cap-in-admissible"} or (
            self.experiment in CAP_EXPERIMENTS
        )
        if needs_cap:
            if self.cap_center is None or self.cap_radius is None:
                issues.append("cap_center: a cap needs cap_center and cap_radius")
            elif len(self.cap_center) != self.m:
                issues.append(f"cap_center: needs {self.m} entries")
            elif not any(self.cap_center):
                issues.append("cap_center: must be nonzero")
        if self.experiment in CAP_EXPERIMENTS and self.direction not in {"cap", "full"}:
            issues.append("direction: this experiment uses a cap")
        if (
            self.direction in {"admissible", "cap-in-admissible"}
            or self.experiment == "ratio-multiplicative"
        ) and self.delta is None:
            issues.append("delta: the admissible set needs delta")
        if self.family == "isotropic" and self.r is not None:
            if any(abs(value - 1.0 / self.m) > WEIGHT_TOLERANCE for value in self.r):
                issues.append("r: the isotropic family uses uniform weights")

        if self.lattice == "alpha" and self.alpha is None:
            issues.append("alpha: lattice=alpha needs an inline alpha")
        if self.lattice in {"alpha-file", "basis-file"}:
            if not self.lattice_path:
                issues.append("lattice_path: a file source needs lattice_path")
            elif not Path(self.lattice_path).is_file():
                issues.append(f"lattice_path: {self.lattice_path} does not exist")
        if self.alpha is not None:
            if len({len(row) for row in self.alpha}) > 1:
                issues.append("alpha: rows must have equal length")
            elif len(self.alpha) != self.m or len(self.alpha[0]) != self.n:
                issues.append(f"alpha: needs shape {self.m}×{self.n}")

        if self.experiment == "avg-limit":
            if self.ball_center is None or self.ball_radius is None:
                issues.append("ball_center: avg-limit needs a ball center and radius")
            elif len(self.ball_center) != self.d:
                issues.append(f"ball_center: needs {self.d} entries")
        if self.experiment == "enumerate" and self.radius is None:
            issues.append("radius: enumerate needs a radius")
        if self.experiment == "approximates":
            if self.lattice not in {"alpha", "alpha-file"}:
                issues.append("lattice: approximates needs lattice=alpha or alpha-file")
            if self.Q is None and self.height_bound is None:
                issues.append("Q: approximates needs Q or height_bound")

        if issues:
            raise ValueError("; ".join(issues))
        return self


class ServiceResponse(ContractModel):
    status: Literal["ok"]
    service: str
    version: str


class ReadinessResponse(ContractModel):
    status: Literal["ready", "not_ready"]
    service: str
    version: str
    capabilities: list[str]


class ApplicationMetadata(ContractModel):
    schema_version: Literal[1]
    id: Literal["spirallab"]
    name: Literal["SpiralLab"]
    descriptor: Literal["Local geometry-of-numbers lab"]
    version: str
    api_url: str
    health_url: str
    readiness_url: str
    network_mode: Literal["loopback", "lan"]
    experiments: list[str]
    capabilities: list[str]


CellValue = float | int | str | None


class RunSummary(ContractModel):
    experiment: ExperimentName
    passed: bool = Field(alias="pass")
    rows: int = Field(ge=0)
    seed: int
    wall_seconds: float = Field(alias="wall_seconds", ge=0)
    checks: dict[str, float | bool] = Field(default_factory=dict)
    error: str | None = None


class RunManifest(ContractModel):
    config: dict[str, object]
    code_version: str = Field(alias="code_version")
    service: str
    wall_seconds: float = Field(alias="wall_seconds", ge=0)
    artifacts: list[str]


class ExperimentResponse(ContractModel):
    summary: RunSummary
    columns: list[str]
    rows: list[list[CellValue]]


class EnumerationRequest(ContractModel):
    basis: list[list[FiniteFloat]] | None = None
    alpha: list[list[FiniteFloat]] | None = None
    dimension: int | None = Field(default=None, ge=1, le=8)
    radius: float = Field(gt=0, allow_inf_nan=False)
    max_points: int = Field(default=10_000, ge=1, le=1_000_000)

    @model_validator(mode="after")
    def one_lattice_source(self) -> "EnumerationRequest":
        sources = [
            value is not None for value in (self.basis, self.alpha, self.dimension)
        ]
        if sum(sources) != 1:
            raise ValueError("Give exactly one of basis, alpha, or dimension.")
        return self


class LatticePointModel(ContractModel):
    coeffs: list[int]
    coords: list[float]
    norm: float = Field(ge=0)


class EnumerationResponse(ContractModel):
    success: Literal[True]
    count: int = Field(ge=0)
    points: list[LatticePointModel]


class ApproximationRequest(ContractModel):
    alpha: list[list[FiniteFloat]] = Field(min_length=1)
    Q: float = Field(gt=1, le=1_000, allow_inf_nan=False)

    @field_validator("alpha")
    @classmethod
    def rectangular(cls, value: list[list[float]]) -> list[list[float]]:
        if not value[0] or len({len(row) for row in value}) != 1:
            raise ValueError("alpha rows must be nonempty and of equal length.")
        return value


class ApproximatePairModel(ContractModel):
    q: list[int]
    p: list[int]
    errors: list[float]
    height: float = Field(ge=0)


class ApproximationResponse(ContractModel):
    success: Literal[True]
    dirichlet: ApproximatePairModel
    multiplicative: ApproximatePairModel


class ValidationIssue(ContractModel):
    location: list[str | int]
    message: str
    type: str


class APIError(ContractModel):
    code: str
    message: str
    details: list[ValidationIssue] | None = None


class ErrorResponse(ContractModel):
    error: APIError
