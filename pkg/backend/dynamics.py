"""Diagonal flows, Haar rotations, and the seeded sampling loop shared by estimators.

Every stochastic routine takes an explicit 64-bit seed. Sample indices are
cut into chunks of a fixed size and chunk ``c`` of stream ``k`` draws from
``SeedSequence(seed, spawn_key=(k, c))``, so a result depends on the seed and
the sample count but never on how many threads evaluated the chunks.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from geometry import (
    CountableSet,
    DimensionError,
    ProbabilityVector,
    RegionSpec,
    as_vector,
)
from scipy import stats

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 256
ORTHOGONALITY_TOLERANCE = 1e-9
MAX_SEED = 2**64

# Substream identifiers; distinct estimators never share random numbers.
ROTATION_STREAM = 0
VOLUME_STREAM = 1
SHELL_STREAM = 2
SPHERE_STREAM = 3
HIT_STREAM = 4


@dataclass(frozen=True)
class FlowParams:
    r: ProbabilityVector
    s: ProbabilityVector
    t: float

    @classmethod
    def for_region(cls, spec: RegionSpec) -> FlowParams:
        """The flow g_{log T} that carries ``spec`` onto its T = 1 copy."""
        return cls(spec.weights_r, spec.weights_s, spec.log_T)

    @classmethod
    def uniform(cls, m: int, n: int, t: float) -> FlowParams:
        return cls(ProbabilityVector.uniform(m), ProbabilityVector.uniform(n), t)

    @property
    def d(self) -> int:
        return len(self.r) + len(self.s)

    @property
    def exponents(self) -> np.ndarray:
        return np.concatenate([self.r.as_array(), -self.s.as_array()])

    def at(self, t: float) -> FlowParams:
        return replace(self, t=t)

    def diagonal(self) -> np.ndarray:
        return np.exp(self.exponents * self.t)


def flow_matrix(fp: FlowParams) -> np.ndarray:
    return np.diag(fp.diagonal())


@dataclass(frozen=True, eq=False)
class Rotation:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=float, copy=True)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError("A rotation must be a square matrix.")
        identity = np.eye(matrix.shape[0])
        if np.max(np.abs(matrix.T @ matrix - identity)) > ORTHOGONALITY_TOLERANCE:
            raise DimensionError("A rotation must be orthogonal.")
        if abs(float(np.linalg.det(matrix)) - 1.0) > ORTHOGONALITY_TOLERANCE:
            raise DimensionError("A rotation must have determinant +1.")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, d: int) -> Rotation:
        return cls(np.eye(d))

    @property
    def d(self) -> int:
        return int(self.matrix.shape[0])

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.matrix.T


def haar_rotations(d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` Haar-distributed elements of SO(d) as a ``(count, d, d)`` array."""
    if d < 2:
        raise DimensionError("Rotations need d >= 2.")
    gaussian = rng.standard_normal((count, d, d))
    orthogonal, triangular = np.linalg.qr(gaussian)
    signs = np.sign(np.diagonal(triangular, axis1=1, axis2=2))
    signs[signs == 0] = 1.0
    orthogonal = orthogonal * signs[:, None, :]
    flipped = np.linalg.det(orthogonal) < 0
    orthogonal[flipped, :, 0] *= -1.0
    return orthogonal


def haar_rotation(d: int, rng: np.random.Generator) -> Rotation:
    return Rotation(haar_rotations(d, 1, rng)[0])


def check_seed(seed: int) -> int:
    if not 0 <= int(seed) < MAX_SEED:
        raise ValueError("Seeds must be 64-bit unsigned integers.")
    return int(seed)


def chunk_generator(seed: int, stream: int, chunk: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(seed, spawn_key=(stream, chunk))
    return np.random.default_rng(sequence)


def derive_seed(seed: int, stream: int, index: int) -> int:
    state = np.random.SeedSequence(seed, spawn_key=(stream, index)).generate_state(
        1, np.uint64
    )
    return int(state[0])


def map_chunks(
    work: Callable[[np.random.Generator, int], np.ndarray],
    samples: int,
    seed: int,
    stream: int,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: int = 1,
) -> np.ndarray:
    """Run ``work(rng, size)`` over fixed chunks and concatenate in index order."""
    if samples < 1:
        raise ValueError("samples must be at least 1.")
    if chunk_size < 1 or threads < 1:
        raise ValueError("chunk_size and threads must be positive.")
    check_seed(seed)
    starts = range(0, samples, chunk_size)
    sizes = [min(chunk_size, samples - start) for start in starts]

    def run(chunk: int) -> np.ndarray:
        return np.asarray(work(chunk_generator(seed, stream, chunk), sizes[chunk]))

    if threads == 1 or len(sizes) == 1:
        parts = [run(chunk) for chunk in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    return np.concatenate(parts)


@dataclass(frozen=True)
class AverageEstimate:
    mean: float
    std_error: float
    samples: int
    seed: int

    @classmethod
    def from_values(cls, values: np.ndarray, seed: int) -> AverageEstimate:
        data = np.asarray(values, dtype=float)
        if data.size == 0:
            raise ValueError("An estimate needs at least one sample.")
        spread = float(np.std(data, ddof=1)) if data.size > 1 else 0.0
        error = spread / math.sqrt(data.size)
        return cls(float(np.mean(data)), error, int(data.size), seed)

    @classmethod
    def from_hits(
        cls, hits: int, samples: int, seed: int, *, scale: float = 1.0
    ) -> AverageEstimate:
        """Binomial plug-in estimate of ``scale`` times a hit rate."""
        rate = hits / samples
        error = math.sqrt(rate * (1.0 - rate) / samples)
        return cls(scale * rate, scale * error, samples, seed)

    def band(self, width: float = 4.0) -> tuple[float, float]:
        return self.mean - width * self.std_error, self.mean + width * self.std_error


def combined_std_error(*estimates: AverageEstimate) -> float:
    return math.sqrt(math.fsum(estimate.std_error**2 for estimate in estimates))


def agree(
    first: AverageEstimate, second: AverageEstimate, *, width: float = 4.0
) -> bool:
    return abs(first.mean - second.mean) <= width * combined_std_error(first, second)


def two_sided_p_value(deviation: float, std_error: float) -> float:
    """Normal-approximation p-value of a deviation measured in standard errors."""
    if std_error <= 0:
        return 1.0 if deviation == 0 else 0.0
    return float(2.0 * stats.norm.sf(abs(deviation) / std_error))


def rotation_hit_fraction(
    v: Sequence[float] | np.ndarray,
    E_spec: CountableSet,
    fp: FlowParams | None,
    samples: int,
    seed: int,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: int = 1,
) -> AverageEstimate:
    """Fraction of Haar rotations k with g_t·k·v in ``E_spec``."""
    vector = as_vector(v)
    if not np.any(vector):
        raise DimensionError("The hit fraction of the zero vector is undefined.")
    if vector.shape[0] != E_spec.d or (fp is not None and fp.d != E_spec.d):
        raise DimensionError("The vector, the set, and the flow differ in dimension.")
    scale = np.ones(E_spec.d) if fp is None else fp.diagonal()

    def hits(rng: np.random.Generator, size: int) -> np.ndarray:
        rotated = haar_rotations(E_spec.d, size, rng) @ vector
        return E_spec.contains_points(rotated * scale)

    indicator = map_chunks(
        hits, samples, seed, HIT_STREAM, chunk_size=chunk_size, threads=threads
    )
    return AverageEstimate.from_hits(int(indicator.sum()), samples, seed)


def hemisphere_uniformity(
    u: Sequence[float] | np.ndarray, samples: int, seed: int
) -> float:
    """Chi-square p-value of the indicator {(k·u)_1 > 0} against a fair coin."""
    vector = as_vector(u)
    if abs(float(np.linalg.norm(vector)) - 1.0) > ORTHOGONALITY_TOLERANCE:
        raise DimensionError("The hemisphere check needs a unit vector.")

    def upper(rng: np.random.Generator, size: int) -> np.ndarray:
        return (haar_rotations(len(vector), size, rng) @ vector)[:, 0] > 0

    indicator = map_chunks(upper, samples, seed, ROTATION_STREAM)
    heads = int(indicator.sum())
    result = stats.chisquare([heads, samples - heads], [samples / 2, samples / 2])
    logger.debug("Hemisphere split %d/%d, p = %.4g", heads, samples, result.pvalue)
    return float(result.pvalue)
