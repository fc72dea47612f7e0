"""Long-running experiments checked against their volume oracles."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from config import RuntimeSettings
from diophantine import (
    dirichlet_solve,
    geometric_height,
    multiplicative_solve,
    weighted_solutions,
)
from dynamics import Rotation, haar_rotations
from experiments import EXIT_FAILED, EXIT_PASSED, execute, parse_config, run
from geometry import (
    Cap,
    ProbabilityVector,
    RegionFamily,
    RegionSpec,
    product_norm,
)
from lattice import count_in_region, from_alpha, points_in_region

pytestmark = pytest.mark.slow

# A ball of volume 2 away from every coordinate subspace.
BALL_RADIUS = (3 * 2 / (4 * math.pi)) ** (1 / 3)
ALPHA = "0.3141592653589793; 0.2718281828459045"


@pytest.fixture(scope="module")
def settings() -> RuntimeSettings:
    return RuntimeSettings.from_env({"SPIRALLAB_THREADS": "4"})


def test_averaged_counts_approach_the_ball_volume(settings: RuntimeSettings):
    config = parse_config(
        "experiment = avg-limit\nseed = 11\nm = 2\nn = 1\nr = 0.5, 0.5\n"
        f"ball_center = 1, 1, 1\nball_radius = {BALL_RADIUS!r}\n"
        "log_T_grid = 2, 4, 6\nsamples = 20000\n"
    )
    outcome = execute(config, settings)
    assert outcome.rows[0][3] == pytest.approx(2.0, rel=0.02)
    assert outcome.checks["final_within_tolerance"] is True
    assert outcome.checks["deviation_not_growing"] is True
    assert outcome.passed


@pytest.mark.parametrize("lattice", ["identity", "alpha"])
def test_weighted_ratio_converges(settings: RuntimeSettings, lattice: str):
    text = (
        "experiment = ratio-weighted\nseed = 21\nr = 0.7, 0.3\nepsilon = 0.5\n"
        "direction = cap-in-admissible\ndelta = 0.2\n"
        "cap_center = 1, 1\ncap_radius = 0.5\n"
        "log_T_grid = 2, 4, 6\nsamples = 20000\n"
    )
    if lattice == "alpha":
        text += f"lattice = alpha\nalpha = {ALPHA}\n"
    outcome = execute(parse_config(text), settings)
    assert outcome.checks["flagged_rows"] == 0
    assert outcome.passed


def test_multiplicative_ratio_converges(settings: RuntimeSettings):
    config = parse_config(
        "experiment = ratio-multiplicative\nseed = 31\nepsilon = 0.5\n"
        "delta = 0.2\ndirection = cap\ncap_center = 1, 1\ncap_radius = 0.5\n"
        "log_T_grid = 2, 4, 6\nsamples = 20000\n"
    )
    outcome = execute(config, settings)
    assert outcome.passed


def test_cusp_counts_diverge_for_a_cap_meeting_a_great_sphere(
    settings: RuntimeSettings,
):
    config = parse_config(
        "experiment = cusp\nseed = 41\ncap_center = 1, 0\ncap_radius = 0.5\n"
        "log_T_grid = 2, 4, 6\nsamples = 2000\n"
    )
    outcome = execute(config, settings)
    means = [row[2] for row in outcome.rows]
    assert means[0] < means[1] < means[2]
    assert means[2] >= 3 * means[0]
    assert outcome.passed


def test_cusp_counts_stabilize_for_an_admissible_cap(settings: RuntimeSettings):
    config = parse_config(
        "experiment = cusp\nseed = 42\ncap_center = 1, 1\ncap_radius = 0.3\n"
        "log_T_grid = 2, 4, 6\nsamples = 2000\nexpectation = stabilize\n"
    )
    assert execute(config, settings).passed


@pytest.mark.parametrize(
    ("center", "expectation"),
    [("1, 0", "diverge"), ("1, 1", "stabilize")],
)
def test_truncated_cone_volumes(
    settings: RuntimeSettings, center: str, expectation: str
):
    config = parse_config(
        f"experiment = cone-volume\nseed = 51\ncap_center = {center}\n"
        f"cap_radius = 0.2\ntau_grid = 4, 8, 16\nexpectation = {expectation}\n"
    )
    outcome = execute(config, settings)
    assert outcome.passed
    if expectation == "diverge":
        means = [row[1] for row in outcome.rows]
        assert means[2] >= 2 * means[0]


def test_flowed_and_direct_counts_agree_per_rotation():
    spec = RegionSpec(
        RegionFamily.WEIGHTED,
        2,
        1,
        0.5,
        20.0,
        r=ProbabilityVector((0.7, 0.3)),
        direction=Cap.around((1.0, 1.0), 0.5),
    )
    lattice = from_alpha([[0.3141592653589793], [0.2718281828459045]])
    rotations = haar_rotations(3, 1000, np.random.default_rng(61))
    for matrix in rotations:
        rotation = Rotation(matrix)
        assert count_in_region(lattice, spec, rotation) == count_in_region(
            lattice, spec, rotation, method="direct"
        )


def test_dirichlet_search_always_succeeds():
    rng = np.random.default_rng(71)
    for _ in range(100):
        m, n = (int(value) for value in rng.integers(1, 3, size=2))
        alpha = rng.uniform(-1, 1, size=(m, n))
        Q = float(rng.uniform(1.5, 20.0))
        pair = dirichlet_solve(alpha, Q)
        errors = pair.recomputed_errors(alpha)
        assert 1 <= pair.height <= Q
        assert np.max(np.abs(errors)) <= Q ** (-n / m) + 1e-12


def test_multiplicative_search_satisfies_both_bounds():
    rng = np.random.default_rng(72)
    for _ in range(25):
        m, n = (int(value) for value in rng.integers(1, 3, size=2))
        alpha = rng.uniform(-1, 1, size=(m, n))
        Q = float(rng.uniform(1.5, 10.0))
        pair = multiplicative_solve(alpha, Q)
        product = product_norm(pair.recomputed_errors(alpha))
        height = geometric_height(pair.q)
        assert height <= Q * (1 + 1e-12)
        assert product <= Q ** (-n) + 1e-12
        assert product <= height ** (-n) + 1e-12


def random_weights(rng: np.random.Generator, size: int) -> ProbabilityVector:
    values = rng.uniform(0.2, 1.0, size=size)
    return ProbabilityVector(tuple(values / values.sum()))


def test_weighted_solutions_match_lattice_points():
    rng = np.random.default_rng(73)
    for _ in range(25):
        m, n = (int(value) for value in rng.integers(1, 3, size=2))
        alpha = rng.uniform(-1, 1, size=(m, n))
        r = random_weights(rng, m)
        s = random_weights(rng, n)
        height = float(rng.uniform(2.0, 12.0))
        pairs = weighted_solutions(alpha, r, s, height)
        expected = {(pair.q, pair.p) for pair in pairs if any(pair.errors)}
        spec = RegionSpec(RegionFamily.WEIGHTED, m, n, 1 / height, height, r=r, s=s)
        found = {
            (point.coeffs[m:], tuple(-value for value in point.coeffs[:m]))
            for point in points_in_region(from_alpha(alpha), spec)
        }
        assert found == expected


DETERMINISM_CONFIGS = {
    "avg-limit": "ball_center = 1, 1, 1\nball_radius = 0.78\n"
    "log_T_grid = 0, 2\nsamples = 300\nvolume_samples = 5000\n",
    "ratio-weighted": "direction = cap\ncap_center = 1, 1\ncap_radius = 0.5\n"
    "T_grid = 1, 10\nsamples = 300\nvolume_samples = 5000\n",
    "ratio-multiplicative": "delta = 0.2\ndirection = cap\ncap_center = 1, 1\n"
    "cap_radius = 0.5\nT_grid = 1, 10\nsamples = 300\nvolume_samples = 5000\n",
    "cusp": "cap_center = 1, 0\ncap_radius = 0.5\nT_grid = 1, 10\nsamples = 300\n",
    "cone-volume": "cap_center = 1, 0\ncap_radius = 0.2\ntau_grid = 2, 4\n"
    "volume_samples = 5000\n",
    "approximates": f"lattice = alpha\nalpha = {ALPHA}\nQ = 8\nheight_bound = 30\n",
    "enumerate": "radius = 2.5\n",
}


@pytest.mark.parametrize("experiment", sorted(DETERMINISM_CONFIGS))
def test_runs_are_byte_identical_across_thread_counts(
    tmp_path: Path, experiment: str
):
    settings = RuntimeSettings.from_env({"SPIRALLAB_CHUNK_SIZE": "32"})
    config = parse_config(
        f"experiment = {experiment}\nseed = 81\n" + DETERMINISM_CONFIGS[experiment]
    )
    outputs = []
    for threads in (1, 4):
        directory = tmp_path / str(threads)
        result = run(
            config.model_copy(update={"threads": threads}),
            settings=settings,
            out_dir=directory,
        )
        assert result.exit_code in (EXIT_PASSED, EXIT_FAILED)
        outputs.append((directory / f"{experiment}.csv").read_bytes())
    assert outputs[0] == outputs[1]
