"""Norms, direction sets, and the regions of weighted and multiplicative approximation.

A ``RegionSpec`` with height ``T`` describes R_{A,eps,T} or its multiplicative
counterpart P_{A,eps,T}. Flowing by g_{log T} carries it onto the same region
with ``T == 1``; :meth:`RegionSpec.normalized` returns that copy. Membership
tests are vectorized over the rows of an ``(N, d)`` array, and every region
inequality is evaluated with the closed comparison exactly as written.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Protocol, Sequence

import numpy as np

PROBABILITY_TOLERANCE = 1e-12
CAP_CENTER_TOLERANCE = 1e-12
UNIT_TOLERANCE = 1e-9


class DimensionError(ValueError):
    """Raised for malformed vectors or weights and for dimension mismatches."""


class UnboundedRegionError(ValueError):
    """Raised when a region has no finite bounding box."""


def as_vector(
    values: Sequence[float] | np.ndarray, *, name: str = "vector"
) -> np.ndarray:
    vector = np.asarray(values, dtype=float)
    if vector.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional.")
    if not np.all(np.isfinite(vector)):
        raise DimensionError(f"{name} must contain finite values.")
    return vector


def as_rows(
    points: Sequence[Sequence[float]] | np.ndarray, dimension: int
) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(points, dtype=float))
    if rows.ndim != 2 or rows.shape[1] != dimension:
        raise DimensionError(f"Points must have {dimension} coordinates.")
    return rows


@dataclass(frozen=True)
class ProbabilityVector:
    """Strictly positive weights summing to one."""

    entries: tuple[float, ...]

    def __post_init__(self) -> None:
        entries = tuple(float(value) for value in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise DimensionError("A probability vector needs at least one entry.")
        if any(not math.isfinite(value) or value <= 0 for value in entries):
            raise DimensionError("Probability vector entries must be positive.")
        if abs(math.fsum(entries) - 1.0) > PROBABILITY_TOLERANCE:
            raise DimensionError("Probability vector entries must sum to 1.")

    @classmethod
    def uniform(cls, length: int) -> ProbabilityVector:
        if length < 1:
            raise DimensionError("A probability vector needs at least one entry.")
        return cls((1.0 / length,) * length)

    def __len__(self) -> int:
        return len(self.entries)

    def as_array(self) -> np.ndarray:
        return np.array(self.entries, dtype=float)

    @property
    def is_uniform(self) -> bool:
        return all(
            math.isclose(value, 1.0 / len(self.entries), abs_tol=PROBABILITY_TOLERANCE)
            for value in self.entries
        )


def weighted_quasinorm_rows(
    points: np.ndarray, weights: ProbabilityVector
) -> np.ndarray:
    return np.max(np.abs(points) ** (1.0 / weights.as_array()), axis=1)


def product_norm_rows(points: np.ndarray) -> np.ndarray:
    return np.prod(np.abs(points), axis=1)


def weighted_quasinorm(v: Sequence[float] | np.ndarray, p: ProbabilityVector) -> float:
    """Return max_i |v_i|^(1/p_i)."""
    vector = as_vector(v)
    if vector.shape[0] != len(p):
        raise DimensionError(
            f"Vector has {vector.shape[0]} coordinates but the weights have {len(p)}."
        )
    return float(weighted_quasinorm_rows(vector[None, :], p)[0])


def product_norm(v: Sequence[float] | np.ndarray) -> float:
    """Return the product of the absolute coordinates."""
    vector = as_vector(v)
    if vector.shape[0] == 0:
        raise DimensionError("The product norm needs at least one coordinate.")
    return float(product_norm_rows(vector[None, :])[0])


def reference_slice_volume(m: int) -> float:
    """Volume of {v : ||v||_(1/m,...,1/m) <= 1} = [-1, 1]^m."""
    if m < 1:
        raise DimensionError("The slice dimension must be at least 1.")
    return float(2**m)


class DirectionSet(ABC):
    """A subset of the unit sphere S^{m-1} with zero-measure boundary."""

    @property
    @abstractmethod
    def dimension(self) -> int: ...

    @abstractmethod
    def contains(self, units: np.ndarray) -> np.ndarray:
        """Vectorized membership for the rows of an ``(N, m)`` array of unit vectors."""

    @abstractmethod
    def coordinate_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate range of the unit vectors in the set."""

    @abstractmethod
    def min_abs_coordinate(self) -> float:
        """A lower bound of min_i |u_i| over the set; 0 when it meets a great sphere."""

    @property
    def sign_symmetric(self) -> bool:
        return False


@dataclass(frozen=True)
class FullSphere(DirectionSet):
    ambient_dim: int

    def __post_init__(self) -> None:
        if self.ambient_dim < 1:
            raise DimensionError("Direction sets live on S^{m-1} with m >= 1.")

    @property
    def dimension(self) -> int:
        return self.ambient_dim

    def contains(self, units: np.ndarray) -> np.ndarray:
        return np.ones(len(units), dtype=bool)

    def coordinate_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return -np.ones(self.ambient_dim), np.ones(self.ambient_dim)

    def min_abs_coordinate(self) -> float:
        return 1.0 if self.ambient_dim == 1 else 0.0

    @property
    def sign_symmetric(self) -> bool:
        return True


@dataclass(frozen=True)
class Cap(DirectionSet):
    """Unit vectors within Euclidean distance ``euclidean_radius`` of ``center``."""

    center: tuple[float, ...]
    euclidean_radius: float

    def __post_init__(self) -> None:
        center = tuple(float(value) for value in self.center)
        object.__setattr__(self, "center", center)
        if not center:
            raise DimensionError("A cap center needs at least one coordinate.")
        if abs(math.sqrt(math.fsum(value * value for value in center)) - 1.0) > (
            CAP_CENTER_TOLERANCE
        ):
            raise DimensionError("A cap center must be a unit vector.")
        if not self.euclidean_radius > 0:
            raise DimensionError("A cap radius must be positive.")

    @classmethod
    def around(cls, direction: Sequence[float], euclidean_radius: float) -> Cap:
        """Build a cap around the normalization of ``direction``."""
        vector = as_vector(direction, name="cap direction")
        length = float(np.linalg.norm(vector))
        if length == 0:
            raise DimensionError("A cap direction must be nonzero.")
        return cls(tuple(vector / length), euclidean_radius)

    @property
    def dimension(self) -> int:
        return len(self.center)

    def contains(self, units: np.ndarray) -> np.ndarray:
        offsets = units - np.asarray(self.center)
        return np.linalg.norm(offsets, axis=1) <= self.euclidean_radius

    def coordinate_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        center = np.asarray(self.center)
        return (
            np.clip(center - self.euclidean_radius, -1.0, 1.0),
            np.clip(center + self.euclidean_radius, -1.0, 1.0),
        )

    def min_abs_coordinate(self) -> float:
        if self.dimension == 1:
            return 1.0
        nearest = min(abs(value) for value in self.center)
        return max(0.0, nearest - self.euclidean_radius)

    def meets_great_sphere(self) -> bool:
        return self.dimension > 1 and self.min_abs_coordinate() == 0.0


@dataclass(frozen=True)
class AdmissibleComplement(DirectionSet):
    """S(delta): the sphere without the delta-thickened great spheres."""

    delta: float
    ambient_dim: int

    def __post_init__(self) -> None:
        if not 0 < self.delta < 1:
            raise DimensionError("delta must lie in (0, 1).")
        if self.ambient_dim < 1:
            raise DimensionError("Direction sets live on S^{m-1} with m >= 1.")

    @property
    def dimension(self) -> int:
        return self.ambient_dim

    def contains(self, units: np.ndarray) -> np.ndarray:
        return np.all(np.abs(units) > self.delta, axis=1)

    def coordinate_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        # The other m - 1 coordinates each carry more than delta^2 of the unit length.
        extent = math.sqrt(max(0.0, 1.0 - (self.ambient_dim - 1) * self.delta**2))
        return -np.full(self.ambient_dim, extent), np.full(self.ambient_dim, extent)

    def min_abs_coordinate(self) -> float:
        return 1.0 if self.ambient_dim == 1 else self.delta

    @property
    def sign_symmetric(self) -> bool:
        return True


@dataclass(frozen=True)
class CapInAdmissible(DirectionSet):
    cap: Cap
    delta: float
    admissible: AdmissibleComplement = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "admissible", AdmissibleComplement(self.delta, self.cap.dimension)
        )

    @property
    def dimension(self) -> int:
        return self.cap.dimension

    def contains(self, units: np.ndarray) -> np.ndarray:
        return self.cap.contains(units) & self.admissible.contains(units)

    def coordinate_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        cap_low, cap_high = self.cap.coordinate_bounds()
        set_low, set_high = self.admissible.coordinate_bounds()
        return np.maximum(cap_low, set_low), np.minimum(cap_high, set_high)

    def min_abs_coordinate(self) -> float:
        return max(self.cap.min_abs_coordinate(), self.admissible.min_abs_coordinate())


def admissible_set_contains(delta: float, u: Sequence[float] | np.ndarray) -> bool:
    """True iff |u_i| > delta for every coordinate of the unit vector ``u``."""
    vector = as_vector(u)
    if abs(float(np.linalg.norm(vector)) - 1.0) > UNIT_TOLERANCE:
        raise DimensionError("Admissible-set membership needs a unit vector.")
    admissible = AdmissibleComplement(delta, vector.shape[0])
    return bool(admissible.contains(vector[None, :])[0])


def flowed_units(
    vectors: np.ndarray, weights: ProbabilityVector, T: float
) -> np.ndarray:
    """Unit vectors of g^(r)_{log T} applied to the nonzero rows of ``vectors``."""
    flowed = vectors * np.exp(weights.as_array() * math.log(T))
    lengths = np.linalg.norm(flowed, axis=1, keepdims=True)
    return np.divide(flowed, lengths, out=np.zeros_like(flowed), where=lengths > 0)


def cone_contains(
    A: DirectionSet,
    w: Sequence[float] | np.ndarray,
    r: ProbabilityVector,
    T: float = 1.0,
) -> bool:
    """True iff w lies in g^(r)_{-log T}(CA), the cone through A pulled back."""
    vector = as_vector(w)
    if vector.shape[0] != A.dimension or len(r) != A.dimension:
        raise DimensionError("The vector, weights, and direction set disagree in size.")
    if not np.any(vector):
        raise DimensionError("Rays through the origin are undefined.")
    units = flowed_units(vector[None, :], r, T)
    return bool(A.contains(units)[0])


class CountableSet(Protocol):
    """A bounded subset of R^d whose lattice points can be enumerated."""

    @property
    def d(self) -> int: ...

    def bounds(self) -> tuple[np.ndarray, np.ndarray]: ...

    def contains_points(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class EuclideanBall:
    center: tuple[float, ...]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(value) for value in self.center))
        if not self.center:
            raise DimensionError("A ball center needs at least one coordinate.")
        if not self.radius > 0:
            raise DimensionError("A ball radius must be positive.")

    @classmethod
    def centered(cls, dimension: int, radius: float) -> EuclideanBall:
        return cls((0.0,) * dimension, radius)

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        unit = math.pi ** (self.d / 2) / math.gamma(self.d / 2 + 1)
        return unit * self.radius**self.d

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        center = np.asarray(self.center)
        return center - self.radius, center + self.radius

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        rows = as_rows(points, self.d)
        return np.linalg.norm(rows - np.asarray(self.center), axis=1) <= self.radius


@dataclass(frozen=True)
class QuasinormBall:
    """{v : ||v||_p <= radius}, the slice R_{1,1} when p is uniform and radius is 1."""

    weights: ProbabilityVector
    radius: float = 1.0

    @property
    def d(self) -> int:
        return len(self.weights)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        extent = self.radius ** self.weights.as_array()
        return -extent, extent

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        rows = as_rows(points, self.d)
        return weighted_quasinorm_rows(rows, self.weights) <= self.radius


@dataclass(frozen=True)
class TruncatedStarCone:
    """C(A) ∩ {||v||_pr <= 1} ∩ {inner_radius <= ||v||_2 <= outer_radius} in R^m."""

    direction: DirectionSet
    outer_radius: float
    inner_radius: float = 1.0

    @property
    def d(self) -> int:
        return self.direction.dimension

    @property
    def empty(self) -> bool:
        return self.outer_radius <= self.inner_radius

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        low, high = self.direction.coordinate_bounds()
        return (
            self.outer_radius * np.minimum(low, 0.0),
            self.outer_radius * np.maximum(high, 0.0),
        )

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        rows = as_rows(points, self.d)
        lengths = np.linalg.norm(rows, axis=1)
        units = np.divide(
            rows, lengths[:, None], out=np.zeros_like(rows), where=lengths[:, None] > 0
        )
        return (
            (lengths >= self.inner_radius)
            & (lengths <= self.outer_radius)
            & (product_norm_rows(rows) <= 1.0)
            & self.direction.contains(units)
        )


class RegionFamily(str, Enum):
    WEIGHTED = "weighted"
    MULTIPLICATIVE = "multiplicative"
    # ||v1||_r replaced by ||v1||_2^m; the limiting ratio is the sphere measure of A.
    ISOTROPIC = "isotropic"


@dataclass(frozen=True)
class RegionSpec:
    """A region from the families R_{A,eps,T} and P_{A,eps,T}.

    ``r`` and ``s`` default to uniform weights. For the multiplicative family
    they only define the flow that carries the region between heights.
    ``truncation`` caps the Euclidean norm of the normalized vector
    g_{log T} v, which makes cusp regions bounded.
    """

    family: RegionFamily
    m: int
    n: int
    epsilon: float
    T: float = 1.0
    r: ProbabilityVector | None = None
    s: ProbabilityVector | None = None
    direction: DirectionSet | None = None
    truncation: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", RegionFamily(self.family))
        if self.m < 1 or self.n < 1:
            raise DimensionError("Both blocks need at least one coordinate.")
        if self.r is None:
            object.__setattr__(self, "r", ProbabilityVector.uniform(self.m))
        if self.s is None:
            object.__setattr__(self, "s", ProbabilityVector.uniform(self.n))
        if len(self.weights_r) != self.m or len(self.weights_s) != self.n:
            raise DimensionError("Weight vectors must match the block dimensions.")
        if self.family is RegionFamily.ISOTROPIC and not self.weights_r.is_uniform:
            raise DimensionError("The isotropic family flows with uniform weights r.")
        if not 0 < self.epsilon <= 1:
            raise DimensionError("epsilon ∈ (0,1]")
        if not (math.isfinite(self.T) and self.T >= 1):
            raise DimensionError("T must be a finite real number >= 1.")
        if self.direction is not None and self.direction.dimension != self.m:
            raise DimensionError("The direction set must live on S^{m-1}.")
        if self.truncation is not None and not self.truncation > 0:
            raise DimensionError("A truncation radius must be positive.")

    @property
    def weights_r(self) -> ProbabilityVector:
        assert self.r is not None
        return self.r

    @property
    def weights_s(self) -> ProbabilityVector:
        assert self.s is not None
        return self.s

    @property
    def d(self) -> int:
        return self.m + self.n

    @property
    def log_T(self) -> float:
        return math.log(self.T)

    @property
    def rates(self) -> np.ndarray:
        """Exponents of g_t: +r on the error block, -s on the denominator block."""
        return np.concatenate([self.weights_r.as_array(), -self.weights_s.as_array()])

    def at_height(self, T: float) -> RegionSpec:
        return replace(self, T=T)

    def normalized(self) -> RegionSpec:
        return replace(self, T=1.0)

    def with_direction(self, direction: DirectionSet | None) -> RegionSpec:
        return replace(self, direction=direction)

    def _block_norms(
        self, v1: np.ndarray, v2: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        if self.family is RegionFamily.MULTIPLICATIVE:
            return product_norm_rows(v1), product_norm_rows(v2)
        second = weighted_quasinorm_rows(v2, self.weights_s)
        if self.family is RegionFamily.ISOTROPIC:
            return np.linalg.norm(v1, axis=1) ** self.m, second
        return weighted_quasinorm_rows(v1, self.weights_r), second

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        rows = as_rows(points, self.d)
        v1, v2 = rows[:, : self.m], rows[:, self.m :]
        first, second = self._block_norms(v1, v2)
        product = first * second
        mask = (
            (product > 0)
            & (product <= 1)
            & (second >= self.epsilon * self.T)
            & (second <= self.T)
        )
        if self.direction is not None:
            units = flowed_units(v1, self.weights_r, self.T)
            mask &= np.any(units != 0, axis=1) & self.direction.contains(units)
        if self.truncation is not None:
            normalized = rows * np.exp(self.rates * self.log_T)
            mask &= np.linalg.norm(normalized, axis=1) <= self.truncation
        return mask

    def _error_block_extent(self) -> tuple[np.ndarray, float]:
        """Per-coordinate and Euclidean bounds of v1 at T = 1."""
        if self.family is RegionFamily.WEIGHTED:
            extent = self.epsilon ** -self.weights_r.as_array()
            return extent, float(np.linalg.norm(extent))
        if self.family is RegionFamily.ISOTROPIC:
            radius = self.epsilon ** (-1.0 / self.m)
            return np.full(self.m, radius), radius
        # prod|v1_i| <= 1/eps with |u_i| >= delta_A on the directions gives
        # ||v1||_2 <= eps^(-1/m) / delta_A.
        if self.direction is None:
            floor = 1.0 if self.m == 1 else 0.0
        else:
            floor = self.direction.min_abs_coordinate()
        radius = self.epsilon ** (-1.0 / self.m) / floor if floor > 0 else math.inf
        return np.full(self.m, radius), radius

    def normalized_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box of the region at T = 1."""
        extent, radius = self._error_block_extent()
        low1, high1 = -extent, extent.copy()
        if self.direction is not None:
            unit_low, unit_high = self.direction.coordinate_bounds()
            low1 = np.maximum(low1, np.where(unit_low < 0, radius * unit_low, 0.0))
            high1 = np.minimum(high1, np.where(unit_high > 0, radius * unit_high, 0.0))
        if self.family is RegionFamily.MULTIPLICATIVE and self.n > 1:
            high2 = np.full(self.n, math.inf)
        else:
            high2 = np.ones(self.n)
        low = np.concatenate([low1, -high2])
        high = np.concatenate([high1, high2])
        if self.truncation is not None:
            low = np.maximum(low, -self.truncation)
            high = np.minimum(high, self.truncation)
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise UnboundedRegionError(
                "The region is unbounded; supply a truncation radius or restrict "
                "the direction set away from the great spheres."
            )
        return low, high

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box at height T: the T = 1 box mapped by g_{-log T}."""
        low, high = self.normalized_bounds()
        scale = np.exp(-self.rates * self.log_T)
        return low * scale, high * scale


def region_contains(spec: RegionSpec, v: Sequence[float] | np.ndarray) -> bool:
    vector = as_vector(v)
    if vector.shape[0] != spec.d:
        raise DimensionError(f"Region points have {spec.d} coordinates.")
    return bool(spec.contains_points(vector[None, :])[0])


def circumscribing_radius(target: CountableSet) -> float:
    low, high = target.bounds()
    return float(np.linalg.norm(np.maximum(np.abs(low), np.abs(high))))


def box_volume(low: np.ndarray, high: np.ndarray) -> float:
    return float(np.prod(high - low))
