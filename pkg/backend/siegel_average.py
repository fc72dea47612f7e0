"""Siegel transforms of indicators and their averages over Haar-random rotations.

A region at height T is always evaluated in its T = 1 frame: the rotated
lattice is flowed by g_{log T} and counted against the normalized region,
which is the same integer count as counting k·Λ in the region at height T.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from dynamics import (
    DEFAULT_CHUNK_SIZE,
    ROTATION_STREAM,
    SHELL_STREAM,
    SPHERE_STREAM,
    VOLUME_STREAM,
    AverageEstimate,
    FlowParams,
    agree,
    check_seed,
    derive_seed,
    haar_rotations,
    map_chunks,
    rotation_hit_fraction,
)
from geometry import (
    AdmissibleComplement,
    CountableSet,
    DimensionError,
    DirectionSet,
    ProbabilityVector,
    RegionFamily,
    RegionSpec,
    TruncatedStarCone,
    box_volume,
)
from lattice import (
    DEFAULT_POINT_CAP,
    EnumerationLimitError,
    LatticeBasis,
    ball_points,
    box_points,
    count_in_region,
    count_in_set,
)

logger = logging.getLogger(__name__)

SHELL_TOLERANCE = 1e-9

__all__ = [
    "AverageEstimate",
    "CuspRow",
    "CuspTable",
    "RatioCurve",
    "RatioRow",
    "cusp_divergence_experiment",
    "direction_measure",
    "ratio_experiment",
    "sample_counts",
    "siegel_count",
    "spherical_average_mc",
    "spherical_average_shellsum",
    "target_ratio",
    "truncated_cone_volume",
    "volume_mc",
]


def _flowed_target(
    E: CountableSet, flow: FlowParams | None
) -> tuple[CountableSet, FlowParams | None]:
    if isinstance(E, RegionSpec):
        if flow is not None:
            raise ValueError("A region carries its own flow; do not pass another one.")
        return E.normalized(), FlowParams.for_region(E)
    if flow is not None and flow.d != E.d:
        raise DimensionError("The flow and the set differ in dimension.")
    return E, flow


def _sampling_box(target: CountableSet) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(target, RegionSpec):
        return target.normalized_bounds()
    return target.bounds()


def siegel_count(
    L: LatticeBasis, E: CountableSet, *, point_cap: int = DEFAULT_POINT_CAP
) -> int:
    """#(Λ ∩ E ∖ {0})."""
    if isinstance(E, RegionSpec):
        return count_in_region(L, E, point_cap=point_cap)
    return count_in_set(L, E, point_cap=point_cap)


def sample_counts(
    L: LatticeBasis,
    targets: Sequence[CountableSet],
    flow: FlowParams | None,
    samples: int,
    seed: int,
    *,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    point_cap: int = DEFAULT_POINT_CAP,
) -> np.ndarray:
    """Counts of g_t·k·Λ in each target for shared Haar samples k.

    Returns an integer array of shape ``(samples, len(targets))``. One box
    enumeration per rotation covers every target.
    """
    if not targets:
        raise ValueError("At least one target set is required.")
    if any(target.d != L.dim for target in targets):
        raise DimensionError("Every target must match the lattice dimension.")
    boxes = [target.bounds() for target in targets]
    lower = np.min([low for low, _ in boxes], axis=0)
    upper = np.max([high for _, high in boxes], axis=0)
    scale = np.ones(L.dim) if flow is None else flow.diagonal()

    def work(rng: np.random.Generator, size: int) -> np.ndarray:
        counts = np.zeros((size, len(targets)), dtype=np.int64)
        for index, rotation in enumerate(haar_rotations(L.dim, size, rng)):
            frame = scale[:, None] * (rotation @ L.basis)
            _, coords = box_points(frame, lower, upper, point_cap)
            for column, target in enumerate(targets):
                counts[index, column] = int(target.contains_points(coords).sum())
        return counts

    return map_chunks(
        work, samples, seed, ROTATION_STREAM, chunk_size=chunk_size, threads=threads
    )


def spherical_average_mc(
    L: LatticeBasis,
    spec: CountableSet,
    samples: int,
    seed: int,
    *,
    flow: FlowParams | None = None,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    point_cap: int = DEFAULT_POINT_CAP,
) -> AverageEstimate:
    """Mean count of k·Λ in a region (or g_t·k·Λ in a ball) over Haar samples k."""
    if samples < 2:
        raise ValueError("The Monte Carlo average needs at least 2 samples.")
    target, target_flow = _flowed_target(spec, flow)
    counts = sample_counts(
        L,
        [target],
        target_flow,
        samples,
        seed,
        threads=threads,
        chunk_size=chunk_size,
        point_cap=point_cap,
    )
    return AverageEstimate.from_values(counts[:, 0], seed)


def spherical_average_shellsum(
    L: LatticeBasis,
    spec: CountableSet,
    sphere_samples: int,
    seed: int,
    *,
    flow: FlowParams | None = None,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    point_cap: int = DEFAULT_POINT_CAP,
) -> AverageEstimate:
    """Sum over lattice shells of multiplicity times the rotation hit fraction.

    Every shell gets its own substream; shell errors add in quadrature.
    """
    check_seed(seed)
    target, target_flow = _flowed_target(spec, flow)
    low, high = target.bounds()
    scale = np.ones(L.dim) if target_flow is None else target_flow.diagonal()
    support = float(np.linalg.norm(np.maximum(np.abs(low), np.abs(high)) / scale))
    _, coords = ball_points(L.basis, support, point_cap)
    if len(coords) == 0:
        return AverageEstimate(0.0, 0.0, sphere_samples, seed)

    norms = np.linalg.norm(coords, axis=1)
    order = np.argsort(norms, kind="stable")
    shells: list[tuple[np.ndarray, int]] = []
    shell_norm = -math.inf
    for index in order:
        if norms[index] > shell_norm * (1.0 + SHELL_TOLERANCE):
            shell_norm = float(norms[index])
            shells.append((coords[index], 0))
        representative, multiplicity = shells[-1]
        shells[-1] = (representative, multiplicity + 1)

    terms = []
    errors = []
    for shell_index, (representative, multiplicity) in enumerate(shells):
        fraction = rotation_hit_fraction(
            representative,
            target,
            target_flow,
            sphere_samples,
            derive_seed(seed, SHELL_STREAM, shell_index),
            chunk_size=chunk_size,
            threads=threads,
        )
        terms.append(multiplicity * fraction.mean)
        errors.append((multiplicity * fraction.std_error) ** 2)
    logger.debug("Shell sum over %d shells within radius %.4g", len(shells), support)
    return AverageEstimate(
        math.fsum(terms), math.sqrt(math.fsum(errors)), sphere_samples, seed
    )


def volume_mc(
    spec: CountableSet,
    samples: int,
    seed: int,
    *,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> AverageEstimate:
    """Box rejection estimate of the volume (regions are measured at T = 1)."""
    target = spec.normalized() if isinstance(spec, RegionSpec) else spec
    low, high = _sampling_box(target)
    volume = box_volume(low, high)

    def work(rng: np.random.Generator, size: int) -> np.ndarray:
        return target.contains_points(rng.uniform(low, high, size=(size, len(low))))

    hits = map_chunks(
        work, samples, seed, VOLUME_STREAM, chunk_size=chunk_size, threads=threads
    )
    return AverageEstimate.from_hits(int(hits.sum()), samples, seed, scale=volume)


def direction_measure(
    A: DirectionSet,
    samples: int,
    seed: int,
    *,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> AverageEstimate:
    """Normalized surface measure of A on S^{m-1}."""

    def work(rng: np.random.Generator, size: int) -> np.ndarray:
        gaussian = rng.standard_normal((size, A.dimension))
        return A.contains(gaussian / np.linalg.norm(gaussian, axis=1, keepdims=True))

    hits = map_chunks(
        work, samples, seed, SPHERE_STREAM, chunk_size=chunk_size, threads=threads
    )
    return AverageEstimate.from_hits(int(hits.sum()), samples, seed)


def target_ratio(
    numerator: RegionSpec,
    denominator: RegionSpec,
    samples: int,
    seed: int,
    *,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> AverageEstimate:
    """vol(numerator) / vol(denominator) at T = 1 from one set of box samples."""
    top = numerator.normalized()
    bottom = denominator.normalized()
    low, high = bottom.normalized_bounds()

    def work(rng: np.random.Generator, size: int) -> np.ndarray:
        points = rng.uniform(low, high, size=(size, len(low)))
        inside = bottom.contains_points(points)
        return np.stack([inside, inside & top.contains_points(points)], axis=1)

    hits = map_chunks(
        work, samples, seed, VOLUME_STREAM, chunk_size=chunk_size, threads=threads
    )
    denominator_hits = int(hits[:, 0].sum())
    if denominator_hits == 0:
        raise ValueError("No volume samples landed in the denominator region.")
    return AverageEstimate.from_hits(int(hits[:, 1].sum()), denominator_hits, seed)


@dataclass(frozen=True)
class RatioRow:
    T: float
    numerator: AverageEstimate
    denominator: AverageEstimate
    ratio: float | None
    ratio_std_error: float | None
    target_ratio: float
    target_std_error: float

    @property
    def flagged(self) -> bool:
        return self.ratio is None


@dataclass(frozen=True)
class RatioCurve:
    rows: tuple[RatioRow, ...]

    def __post_init__(self) -> None:
        heights = [row.T for row in self.rows]
        if any(later <= earlier for earlier, later in zip(heights, heights[1:])):
            raise ValueError("Ratio rows must have strictly increasing T.")

    def converged(self, *, tolerance: float = 0.1, width: float = 4.0) -> bool:
        """Whether the largest-T ratio is within max(tolerance·target, width·SE)."""
        if not self.rows or self.rows[-1].flagged:
            return False
        final = self.rows[-1]
        assert final.ratio is not None and final.ratio_std_error is not None
        spread = math.hypot(final.ratio_std_error, final.target_std_error)
        allowed = max(tolerance * abs(final.target_ratio), width * spread)
        return abs(final.ratio - final.target_ratio) <= allowed


def _ratio_of_means(
    numerator: np.ndarray, denominator: np.ndarray
) -> tuple[float, float]:
    """Delta-method ratio of shared-sample means and its standard error."""
    top = float(np.mean(numerator))
    bottom = float(np.mean(denominator))
    ratio = top / bottom
    if len(numerator) < 2:
        return ratio, 0.0
    covariance = np.cov(numerator, denominator, ddof=1)
    variance = (
        covariance[0, 0] - 2 * ratio * covariance[0, 1] + ratio**2 * covariance[1, 1]
    ) / (len(numerator) * bottom**2)
    return ratio, math.sqrt(max(float(variance), 0.0))


def _check_increasing(T_grid: Sequence[float]) -> list[float]:
    heights = [float(T) for T in T_grid]
    if any(T < 1 for T in heights):
        raise ValueError("Heights T must be at least 1.")
    if any(later <= earlier for earlier, later in zip(heights, heights[1:])):
        raise ValueError("The T grid must be strictly increasing.")
    return heights


def ratio_experiment(
    L: LatticeBasis,
    base_spec: RegionSpec,
    A: DirectionSet,
    T_grid: Sequence[float],
    samples: int,
    seed: int,
    *,
    volume_samples: int = 200_000,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    point_cap: int = DEFAULT_POINT_CAP,
) -> RatioCurve:
    """Spiraling ratios of averaged counts in the A-region and the base region.

    The base region is the denominator. For the multiplicative family its
    direction must be an admissible complement S(delta) that contains A.
    """
    heights = _check_increasing(T_grid)
    if base_spec.family is RegionFamily.MULTIPLICATIVE:
        base_direction = base_spec.direction
        if not isinstance(base_direction, AdmissibleComplement):
            raise ValueError("Multiplicative ratios need an S(delta) denominator.")
        if A.min_abs_coordinate() < base_direction.delta:
            raise ValueError("The numerator directions must lie inside S(delta).")
    numerator_base = base_spec.with_direction(A)
    target = target_ratio(
        numerator_base,
        base_spec,
        volume_samples,
        seed,
        threads=threads,
        chunk_size=chunk_size,
    )

    rows = []
    for T in heights:
        denominator = base_spec.at_height(T)
        numerator = numerator_base.at_height(T)
        counts = sample_counts(
            L,
            [denominator.normalized(), numerator.normalized()],
            FlowParams.for_region(denominator),
            samples,
            seed,
            threads=threads,
            chunk_size=chunk_size,
            point_cap=point_cap,
        )
        bottom = AverageEstimate.from_values(counts[:, 0], seed)
        top = AverageEstimate.from_values(counts[:, 1], seed)
        ratio: float | None = None
        ratio_error: float | None = None
        if bottom.mean - 4 * bottom.std_error > 0:
            ratio, ratio_error = _ratio_of_means(
                counts[:, 1].astype(float), counts[:, 0].astype(float)
            )
        else:
            logger.warning("Denominator at T=%.6g is degenerate; ratio omitted", T)
        logger.info(
            "T=%.6g numerator %.4f denominator %.4f", T, top.mean, bottom.mean
        )
        rows.append(
            RatioRow(T, top, bottom, ratio, ratio_error, target.mean, target.std_error)
        )
    return RatioCurve(tuple(rows))


@dataclass(frozen=True)
class CuspRow:
    T: float
    truncation: float
    estimate: AverageEstimate


@dataclass(frozen=True)
class CuspTable:
    rows: tuple[CuspRow, ...]

    @property
    def strictly_increasing(self) -> bool:
        means = [row.estimate.mean for row in self.rows]
        return all(later > earlier for earlier, later in zip(means, means[1:]))

    @property
    def growth(self) -> float:
        if len(self.rows) < 2 or self.rows[0].estimate.mean == 0:
            return math.inf if self.rows and self.rows[-1].estimate.mean > 0 else 0.0
        return self.rows[-1].estimate.mean / self.rows[0].estimate.mean

    def diverges(self, growth_factor: float = 3.0) -> bool:
        return len(self.rows) >= 2 and self.strictly_increasing and (
            self.growth >= growth_factor
        )

    def stabilizes(self, *, width: float = 4.0) -> bool:
        if len(self.rows) < 2:
            return False
        return agree(self.rows[-2].estimate, self.rows[-1].estimate, width=width)


def truncation_radius(T: float, scale: float = 1.0, exponent: float = 0.5) -> float:
    return scale * T**exponent


def cusp_divergence_experiment(
    L: LatticeBasis,
    A: DirectionSet,
    epsilon: float,
    T_grid: Sequence[float],
    samples: int,
    seed: int,
    *,
    n: int = 1,
    r: ProbabilityVector | None = None,
    s: ProbabilityVector | None = None,
    truncation_caps: Sequence[float] | None = None,
    truncation_scale: float = 1.0,
    truncation_exponent: float = 0.5,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    point_cap: int = DEFAULT_POINT_CAP,
) -> CuspTable:
    """Averaged counts in P_{A,eps,T} with the normalized vectors capped per T.

    Capped counts are lower bounds of the true averages, so their growth is
    evidence of divergence for a cap meeting a great sphere.
    """
    heights = _check_increasing(T_grid)
    if truncation_caps is not None and len(truncation_caps) != len(heights):
        raise ValueError("Give one truncation cap per grid value.")
    rows: list[CuspRow] = []
    for index, T in enumerate(heights):
        cap = (
            float(truncation_caps[index])
            if truncation_caps is not None
            else truncation_radius(T, truncation_scale, truncation_exponent)
        )
        spec = RegionSpec(
            RegionFamily.MULTIPLICATIVE,
            A.dimension,
            n,
            epsilon,
            T,
            r=r,
            s=s,
            direction=A,
            truncation=cap,
        )
        try:
            estimate = spherical_average_mc(
                L,
                spec,
                samples,
                seed,
                threads=threads,
                chunk_size=chunk_size,
                point_cap=point_cap,
            )
        except EnumerationLimitError as error:
            raise EnumerationLimitError(
                f"Cusp counts at T={T:.6g} exceeded the point cap.",
                partial_count=error.partial_count,
                partial=CuspTable(tuple(rows)),
            ) from error
        logger.info("T=%.6g cap %.4g averaged count %.4f", T, cap, estimate.mean)
        rows.append(CuspRow(T, cap, estimate))
    return CuspTable(tuple(rows))


def truncated_cone_volume(
    A: DirectionSet,
    Tau: float,
    samples: int,
    seed: int,
    *,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> AverageEstimate:
    """Volume of the cone through A inside the star body, between radii 1 and Tau."""
    cone = TruncatedStarCone(A, Tau)
    if cone.empty:
        return AverageEstimate(0.0, 0.0, samples, check_seed(seed))
    return volume_mc(cone, samples, seed, threads=threads, chunk_size=chunk_size)
