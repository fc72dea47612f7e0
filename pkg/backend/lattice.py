"""Unimodular lattices, LLL reduction, and exact enumeration of lattice points.

Bases are stored column-wise: the lattice is ``basis @ Z^d``. Every
enumeration reduces a (possibly rescaled) basis first, walks the integer
coefficients with Fincke-Pohst backtracking over the QR factor, and maps the
result back to coefficients of the caller's basis. Enumeration radii carry a
small relative slack and the caller's set re-filters the points, so
floating-point rounding can only add candidates, never drop them.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from dynamics import FlowParams, Rotation
from geometry import CountableSet, DimensionError, RegionSpec, as_vector

logger = logging.getLogger(__name__)

DETERMINANT_TOLERANCE = 1e-9
LLL_DELTA = 0.99
DEFAULT_POINT_CAP = 100_000_000
ENUMERATION_SLACK = 1e-9

CountMethod = Literal["flowed", "direct"]


class PrecisionError(ArithmeticError):
    """Raised when a basis is numerically singular or reduction fails to settle."""


class EnumerationLimitError(RuntimeError):
    """Raised when an enumeration would return more points than the configured cap."""

    def __init__(self, message: str, *, partial_count: int, partial: object = None):
        super().__init__(message)
        self.partial_count = partial_count
        self.partial = partial


class BasisFormatError(ValueError):
    """Raised for unreadable or malformed matrix files."""


@dataclass(frozen=True)
class LatticePoint:
    coeffs: tuple[int, ...]
    coords: tuple[float, ...]

    @property
    def norm(self) -> float:
        return math.sqrt(math.fsum(value * value for value in self.coords))


@dataclass(frozen=True, eq=False)
class LatticeBasis:
    """Columns of ``basis`` generate a lattice of covolume one."""

    basis: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.array(self.basis, dtype=float, copy=True)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or not matrix.size:
            raise DimensionError("A lattice basis must be a nonempty square matrix.")
        if not np.all(np.isfinite(matrix)):
            raise DimensionError("A lattice basis must contain finite values.")
        determinant = float(np.linalg.det(matrix))
        if abs(determinant - 1.0) > DETERMINANT_TOLERANCE:
            raise DimensionError(
                f"A unimodular basis needs determinant 1; got {determinant:.12g}."
            )
        matrix.setflags(write=False)
        object.__setattr__(self, "basis", matrix)

    @classmethod
    def identity(cls, dim: int) -> LatticeBasis:
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return int(self.basis.shape[0])

    def point(self, coeffs: Sequence[int]) -> LatticePoint:
        integers = tuple(int(value) for value in coeffs)
        if len(integers) != self.dim:
            raise DimensionError(f"Lattice coefficients have {self.dim} entries.")
        coords = self.basis @ np.asarray(integers, dtype=float)
        return LatticePoint(integers, tuple(float(value) for value in coords))

    def rotated(self, rot: Rotation | np.ndarray | None) -> np.ndarray:
        if rot is None:
            return np.array(self.basis)
        matrix = rot.matrix if isinstance(rot, Rotation) else np.asarray(rot, float)
        if matrix.shape != (self.dim, self.dim):
            raise DimensionError("The rotation does not match the lattice dimension.")
        return matrix @ self.basis


def from_alpha(alpha: Sequence[Sequence[float]] | np.ndarray) -> LatticeBasis:
    """Dirichlet lattice of an m×n matrix: coefficients (p', q) give (αq + p', q)."""
    matrix = np.asarray(alpha, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.ndim != 2 or min(matrix.shape) < 1:
        raise DimensionError("alpha must be an m×n matrix with m, n >= 1.")
    m, n = matrix.shape
    basis = np.eye(m + n)
    basis[:m, m:] = matrix
    return LatticeBasis(basis)


def lll_reduce(
    basis: np.ndarray, delta: float = LLL_DELTA
) -> tuple[np.ndarray, np.ndarray]:
    """LLL-reduce the columns of ``basis``.

    Returns the reduced basis and the integer matrix ``U`` with
    ``reduced = basis @ U`` and ``det(U) = 1``.
    """
    source = np.asarray(basis, dtype=float)
    dim = source.shape[1]
    transform = np.eye(dim, dtype=np.int64)
    scale = float(np.max(np.abs(source))) if source.size else 0.0
    if not math.isfinite(scale) or scale == 0.0:
        raise PrecisionError("Cannot reduce a zero or non-finite basis.")

    current = source.copy()
    _, triangular = np.linalg.qr(current)
    floor = np.finfo(float).eps * scale * dim
    if np.min(np.abs(np.diag(triangular))) <= floor:
        raise PrecisionError("The basis is numerically singular.")

    step_limit = 10_000 * dim * dim
    steps = 0
    k = 1
    while k < dim:
        steps += 1
        if steps > step_limit:
            raise PrecisionError("LLL reduction did not converge.")
        for j in range(k - 1, -1, -1):
            quotient = round(triangular[j, k] / triangular[j, j])
            if quotient:
                current[:, k] -= quotient * current[:, j]
                transform[:, k] -= quotient * transform[:, j]
                triangular[: j + 1, k] -= quotient * triangular[: j + 1, j]
        if delta * triangular[k - 1, k - 1] ** 2 <= (
            triangular[k - 1, k] ** 2 + triangular[k, k] ** 2
        ):
            k += 1
            continue
        transform[:, [k - 1, k]] = transform[:, [k, k - 1]]
        current = source @ transform
        _, triangular = np.linalg.qr(current)
        if np.min(np.abs(np.diag(triangular))) <= floor:
            raise PrecisionError("The basis became singular during reduction.")
        k = max(k - 1, 1)

    if round(float(np.linalg.det(transform))) < 0:
        transform[:, 0] *= -1
    logger.debug("LLL reduced a %d-dimensional basis in %d steps", dim, steps)
    return source @ transform, transform


def reduce(L: LatticeBasis) -> LatticeBasis:
    reduced, _ = lll_reduce(L.basis)
    return LatticeBasis(reduced)


def _enumerate_coefficients(
    basis: np.ndarray, center: np.ndarray, radius: float, point_cap: int
) -> np.ndarray:
    """Integer x with ||basis @ x - center|| <= radius, up to the relative slack."""
    dim = basis.shape[1]
    orthogonal, triangular = np.linalg.qr(basis)
    target = orthogonal.T @ center
    diagonal = np.diag(triangular)
    budget_total = (radius * (1.0 + ENUMERATION_SLACK)) ** 2
    blocks: list[np.ndarray] = []
    found = 0
    current = np.zeros(dim, dtype=np.int64)

    def descend(level: int, budget: float) -> None:
        nonlocal found
        offset = target[level] - triangular[level, level + 1 :] @ current[level + 1 :]
        middle = offset / diagonal[level]
        half = math.sqrt(max(budget, 0.0)) / abs(diagonal[level])
        low = math.ceil(middle - half - ENUMERATION_SLACK)
        high = math.floor(middle + half + ENUMERATION_SLACK)
        if high < low:
            return
        if level == 0:
            values = np.arange(low, high + 1, dtype=np.int64)
            residuals = (diagonal[0] * values - offset) ** 2
            kept = values[residuals <= budget]
            if kept.size:
                block = np.tile(current, (kept.size, 1))
                block[:, 0] = kept
                blocks.append(block)
                found += kept.size
                if found > point_cap:
                    raise EnumerationLimitError(
                        f"Enumeration exceeded the cap of {point_cap} points.",
                        partial_count=found,
                    )
            return
        for value in range(low, high + 1):
            residual = (diagonal[level] * value - offset) ** 2
            if residual <= budget:
                current[level] = value
                descend(level - 1, budget - residual)
        current[level] = 0

    descend(dim - 1, budget_total)
    if not blocks:
        return np.zeros((0, dim), dtype=np.int64)
    return np.concatenate(blocks)


def _canonical(coeffs: np.ndarray, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort(coeffs.T[::-1])
    return coeffs[order], coords[order]


def ball_points(
    basis: np.ndarray, radius: float, point_cap: int = DEFAULT_POINT_CAP
) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and coordinates of the nonzero points with norm <= radius."""
    if not radius > 0:
        raise DimensionError("The enumeration radius must be positive.")
    reduced, transform = lll_reduce(basis)
    local = _enumerate_coefficients(reduced, np.zeros(len(basis)), radius, point_cap)
    coeffs = local @ transform.T
    coords = coeffs @ np.asarray(basis).T
    keep = np.any(coeffs != 0, axis=1) & (np.linalg.norm(coords, axis=1) <= radius)
    return _canonical(coeffs[keep], coords[keep])


def box_points(
    basis: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    point_cap: int = DEFAULT_POINT_CAP,
) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and coordinates of the nonzero points in the closed box."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper < lower):
        raise DimensionError("A box needs lower <= upper in every coordinate.")
    dim = len(basis)
    half = (upper - lower) / 2.0
    # Degenerate sides still get a positive scale; the final filter is exact.
    half = np.maximum(half, 1e-12 * max(1.0, float(np.max(np.abs(upper)))))
    middle = (upper + lower) / 2.0
    scaled = np.asarray(basis) / half[:, None]
    reduced, transform = lll_reduce(scaled)
    local = _enumerate_coefficients(reduced, middle / half, math.sqrt(dim), point_cap)
    coeffs = local @ transform.T
    coords = coeffs @ np.asarray(basis).T
    keep = (
        np.any(coeffs != 0, axis=1)
        & np.all(coords >= lower, axis=1)
        & np.all(coords <= upper, axis=1)
    )
    logger.debug("Box enumeration kept %d of %d", int(keep.sum()), len(coeffs))
    return _canonical(coeffs[keep], coords[keep])


def set_points(
    basis: np.ndarray, target: CountableSet, point_cap: int = DEFAULT_POINT_CAP
) -> tuple[np.ndarray, np.ndarray]:
    lower, upper = target.bounds()
    coeffs, coords = box_points(basis, lower, upper, point_cap)
    keep = target.contains_points(coords)
    return coeffs[keep], coords[keep]


def _as_points(coeffs: np.ndarray, coords: np.ndarray) -> list[LatticePoint]:
    return [
        LatticePoint(tuple(int(value) for value in row), tuple(float(x) for x in point))
        for row, point in zip(coeffs, coords)
    ]


def enumerate_in_ball(
    L: LatticeBasis, radius: float, *, point_cap: int = DEFAULT_POINT_CAP
) -> list[LatticePoint]:
    """Nonzero lattice points in the closed ball, sorted by coefficient vector."""
    return _as_points(*ball_points(L.basis, radius, point_cap))


def enumerate_in_box(
    L: LatticeBasis,
    lower: Sequence[float] | np.ndarray,
    upper: Sequence[float] | np.ndarray,
    *,
    point_cap: int = DEFAULT_POINT_CAP,
) -> list[LatticePoint]:
    low = as_vector(lower, name="lower")
    high = as_vector(upper, name="upper")
    if low.shape[0] != L.dim or high.shape[0] != L.dim:
        raise DimensionError(f"Box corners need {L.dim} coordinates.")
    return _as_points(*box_points(L.basis, low, high, point_cap))


def _region_points(
    L: LatticeBasis,
    spec: RegionSpec,
    rot: Rotation | np.ndarray | None,
    method: CountMethod,
    point_cap: int,
) -> tuple[np.ndarray, np.ndarray]:
    if spec.d != L.dim:
        raise DimensionError("The region and the lattice differ in dimension.")
    rotated = L.rotated(rot)
    if method == "direct":
        return set_points(rotated, spec, point_cap)
    if method != "flowed":
        raise ValueError(f"Unknown counting method: {method}")
    flow = FlowParams.for_region(spec)
    flowed = flow.diagonal()[:, None] * rotated
    coeffs, _ = set_points(flowed, spec.normalized(), point_cap)
    return coeffs, coeffs @ rotated.T


def points_in_region(
    L: LatticeBasis,
    spec: RegionSpec,
    rot: Rotation | np.ndarray | None = None,
    *,
    method: CountMethod = "flowed",
    point_cap: int = DEFAULT_POINT_CAP,
) -> list[LatticePoint]:
    """Points of rot·L inside the region; coordinates are in the rotated frame.

    ``flowed`` counts g_{log T}·rot·L in the T = 1 region, ``direct``
    enumerates rot·L in the region at height T. Both give the same set.
    """
    return _as_points(*_region_points(L, spec, rot, method, point_cap))


def count_in_region(
    L: LatticeBasis,
    spec: RegionSpec,
    rot: Rotation | np.ndarray | None = None,
    *,
    method: CountMethod = "flowed",
    point_cap: int = DEFAULT_POINT_CAP,
) -> int:
    coeffs, _ = _region_points(L, spec, rot, method, point_cap)
    return int(coeffs.shape[0])


def count_in_set(
    basis: LatticeBasis | np.ndarray,
    target: CountableSet,
    *,
    point_cap: int = DEFAULT_POINT_CAP,
) -> int:
    """#(basis·Z^d ∩ target ∖ {0}) for any basis, unimodular or not."""
    if isinstance(basis, LatticeBasis):
        matrix = basis.basis
    else:
        matrix = np.asarray(basis, dtype=float)
    if matrix.shape[0] != target.d:
        raise DimensionError("The set and the lattice differ in dimension.")
    coeffs, _ = set_points(matrix, target, point_cap)
    return int(coeffs.shape[0])


def shortest_vector_norm_lower_bound(L: LatticeBasis) -> float:
    """Minimum Gram-Schmidt length of a reduced basis, shaved by a relative 1e-12."""
    reduced, _ = lll_reduce(L.basis)
    _, triangular = np.linalg.qr(reduced)
    return float(np.min(np.abs(np.diag(triangular)))) * (1.0 - 1e-12)


_ROW_SPLIT = re.compile(r"[,\s]+")


def parse_matrix_text(text: str) -> np.ndarray:
    """Rows on separate lines or separated by ';'; entries by whitespace or ','."""
    rows = [
        [float(entry) for entry in _ROW_SPLIT.split(row.strip()) if entry]
        for line in text.splitlines()
        for row in line.split("#", 1)[0].split(";")
        if row.strip()
    ]
    if not rows:
        raise BasisFormatError("The matrix is empty.")
    if len({len(row) for row in rows}) != 1:
        raise BasisFormatError("Matrix rows must all have the same length.")
    return np.array(rows, dtype=float)


def load_matrix(path: str | Path) -> np.ndarray:
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as error:
        raise BasisFormatError(f"Cannot read matrix file {source}: {error}") from error
    try:
        if source.suffix.lower() == ".json":
            matrix = np.array(json.loads(text), dtype=float)
            if matrix.ndim != 2:
                raise BasisFormatError(f"{source} must hold a JSON array of rows.")
            return matrix
        return parse_matrix_text(text)
    except (ValueError, TypeError) as error:
        if isinstance(error, BasisFormatError):
            raise
        raise BasisFormatError(f"{source} is not a numeric matrix: {error}") from error


def dump_matrix(matrix: np.ndarray, path: str | Path) -> None:
    target = Path(path)
    rows = np.asarray(matrix, dtype=float).tolist()
    if target.suffix.lower() == ".json":
        target.write_text(json.dumps(rows) + "\n", encoding="utf-8")
        return
    target.write_text(
        "".join(" ".join(repr(value) for value in row) + "\n" for row in rows),
        encoding="utf-8",
    )


def load_basis(path: str | Path) -> LatticeBasis:
    return LatticeBasis(load_matrix(path))
