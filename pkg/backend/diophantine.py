"""Exhaustive searches for Dirichlet, multiplicative, and weighted approximates.

alpha is an m×n matrix acting on denominators q ∈ Z^n; the error of a pair
(q, p) is alpha·q − p ∈ R^m. Denominators are walked in a canonical order:
sup-norm height, then l1 size, then support pattern (e_1 first), then
positive entries first.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from geometry import (
    DimensionError,
    DirectionSet,
    ProbabilityVector,
    flowed_units,
    product_norm_rows,
    weighted_quasinorm_rows,
)

logger = logging.getLogger(__name__)

INEQUALITY_SLACK = 1e-12


class SearchExhaustedError(RuntimeError):
    """Raised when a search that a theorem guarantees comes back empty."""


@dataclass(frozen=True)
class ApproximatePair:
    q: tuple[int, ...]
    p: tuple[int, ...]
    errors: tuple[float, ...]
    height: float

    def recomputed_errors(self, alpha: np.ndarray) -> np.ndarray:
        return as_alpha(alpha) @ np.asarray(self.q, dtype=float) - np.asarray(self.p)


def as_alpha(alpha: Sequence[Sequence[float]] | np.ndarray | float) -> np.ndarray:
    matrix = np.asarray(alpha, dtype=float)
    if matrix.ndim == 0:
        matrix = matrix.reshape(1, 1)
    elif matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.ndim != 2 or min(matrix.shape) < 1:
        raise DimensionError("alpha must be an m×n matrix with m, n >= 1.")
    if not np.all(np.isfinite(matrix)):
        raise DimensionError("alpha must contain finite values.")
    return matrix


def canonical_denominators(bounds: Sequence[int]) -> np.ndarray:
    """Nonzero integer vectors with |q_j| <= bounds[j], in canonical order."""
    ranges = [np.arange(-int(bound), int(bound) + 1) for bound in bounds]
    mesh = np.meshgrid(*ranges, indexing="ij")
    grid = np.stack(mesh, axis=-1).reshape(-1, len(bounds))
    grid = grid[np.any(grid != 0, axis=1)]
    magnitude = np.abs(grid)
    primary_first = [
        magnitude.max(axis=1),
        magnitude.sum(axis=1),
        *(grid[:, j] == 0 for j in range(grid.shape[1])),
        *(-grid[:, j] for j in range(grid.shape[1])),
    ]
    return grid[np.lexsort(primary_first[::-1])]


def _nearest(
    alpha: np.ndarray, denominators: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    values = denominators @ alpha.T
    numerators = np.rint(values).astype(np.int64)
    return numerators, values - numerators


def _pair(
    q: np.ndarray, p: np.ndarray, errors: np.ndarray, height: float
) -> ApproximatePair:
    return ApproximatePair(
        tuple(int(value) for value in q),
        tuple(int(value) for value in p),
        tuple(float(value) for value in errors),
        float(height),
    )


def dirichlet_solve(
    alpha: Sequence[Sequence[float]] | np.ndarray, Q: float
) -> ApproximatePair:
    """First canonical pair with 1 <= |q|_inf <= Q and |αq − p|_inf <= Q^(-n/m)."""
    matrix = as_alpha(alpha)
    if not Q > 1:
        raise ValueError("Q must exceed 1.")
    m, n = matrix.shape
    bound = math.floor(Q + INEQUALITY_SLACK)
    denominators = canonical_denominators([bound] * n)
    numerators, errors = _nearest(matrix, denominators)
    threshold = Q ** (-n / m) + INEQUALITY_SLACK
    valid = np.flatnonzero(np.max(np.abs(errors), axis=1) <= threshold)
    if valid.size == 0:
        raise SearchExhaustedError(f"No Dirichlet approximate found for Q={Q}.")
    best = valid[0]
    q = denominators[best]
    return _pair(q, numerators[best], errors[best], float(np.max(np.abs(q))))


def geometric_height(q: Sequence[int] | np.ndarray) -> float:
    sizes = np.maximum(1, np.abs(np.asarray(q, dtype=float)))
    return float(np.prod(sizes) ** (1.0 / sizes.size))


def multiplicative_solve(
    alpha: Sequence[Sequence[float]] | np.ndarray, Q: float
) -> ApproximatePair:
    """Valid pair with the smallest error product.

    Valid means (prod max(1, |q_j|))^(1/n) <= Q and (prod |errors|)^(1/m) <= Q^(-n/m).
    """
    matrix = as_alpha(alpha)
    if not Q > 1:
        raise ValueError("Q must exceed 1.")
    m, n = matrix.shape
    volume = Q**n
    bound = math.floor(volume + INEQUALITY_SLACK)
    denominators = canonical_denominators([bound] * n)
    sizes = np.prod(np.maximum(1, np.abs(denominators)), axis=1)
    denominators = denominators[sizes <= volume * (1 + INEQUALITY_SLACK)]
    numerators, errors = _nearest(matrix, denominators)
    products = product_norm_rows(errors)
    valid = np.flatnonzero(products <= Q ** (-n) + INEQUALITY_SLACK)
    if valid.size == 0:
        raise SearchExhaustedError(f"No multiplicative approximate found for Q={Q}.")
    # argmin keeps the first minimizer, which is the earliest in canonical order.
    best = valid[int(np.argmin(products[valid]))]
    q = denominators[best]
    return _pair(q, numerators[best], errors[best], geometric_height(q))


def weighted_solutions(
    alpha: Sequence[Sequence[float]] | np.ndarray,
    r: ProbabilityVector,
    s: ProbabilityVector,
    height_bound: float,
) -> list[ApproximatePair]:
    """Every pair with ||q||_s <= height_bound and ||αq − p||_r·||q||_s <= 1.

    p ranges over the nearest integers of αq and their ±1 neighbours.
    Zero-error pairs are included. The list is sorted by q, then p.
    """
    matrix = as_alpha(alpha)
    m, n = matrix.shape
    if len(r) != m or len(s) != n:
        raise DimensionError("Weights must match the shape of alpha.")
    if not height_bound >= 1:
        raise ValueError("height_bound must be at least 1.")
    extents = np.floor(height_bound ** s.as_array() + INEQUALITY_SLACK).astype(int)
    denominators = canonical_denominators(extents)
    heights = weighted_quasinorm_rows(denominators, s)
    denominators = denominators[heights <= height_bound]
    heights = heights[heights <= height_bound]
    values = denominators @ matrix.T
    nearest = np.rint(values).astype(np.int64)

    pairs = []
    for shift in itertools.product((-1, 0, 1), repeat=m):
        numerators = nearest + np.asarray(shift, dtype=np.int64)
        errors = values - numerators
        keep = weighted_quasinorm_rows(errors, r) * heights <= 1.0
        pairs.extend(
            _pair(q, p, e, h)
            for q, p, e, h in zip(
                denominators[keep], numerators[keep], errors[keep], heights[keep]
            )
        )
    pairs.sort(key=lambda pair: (pair.q, pair.p))
    return pairs


def approximate_directions(
    pairs: Sequence[ApproximatePair], r: ProbabilityVector, T: float
) -> list[np.ndarray]:
    """Unit vectors of g^(r)_{log T} applied to the errors; zero errors are skipped."""
    directions = []
    for pair in pairs:
        errors = np.asarray(pair.errors, dtype=float)
        if len(errors) != len(r):
            raise DimensionError("Weights must match the error dimension.")
        if not np.any(errors):
            logger.warning("Skipping approximate q=%s with zero error", pair.q)
            continue
        directions.append(flowed_units(errors[None, :], r, T)[0])
    return directions


def direction_histogram(
    directions: Sequence[np.ndarray], sets: Sequence[DirectionSet]
) -> list[int]:
    if not directions:
        return [0] * len(sets)
    units = np.asarray(directions, dtype=float)
    return [int(direction_set.contains(units).sum()) for direction_set in sets]
