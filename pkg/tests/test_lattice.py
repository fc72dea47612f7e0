from __future__ import annotations

import math
from typing import Callable

import numpy as np
import pytest
from dynamics import haar_rotation
from geometry import (
    Cap,
    DimensionError,
    EuclideanBall,
    ProbabilityVector,
    RegionFamily,
    RegionSpec,
)
from lattice import (
    BasisFormatError,
    EnumerationLimitError,
    LatticeBasis,
    PrecisionError,
    count_in_region,
    count_in_set,
    dump_matrix,
    enumerate_in_ball,
    enumerate_in_box,
    from_alpha,
    lll_reduce,
    load_basis,
    load_matrix,
    parse_matrix_text,
    points_in_region,
    reduce,
    shortest_vector_norm_lower_bound,
)


def random_unimodular_basis(rng: np.random.Generator, dim: int = 3) -> np.ndarray:
    """A skewed covolume-one basis: rotation · diagonal · integer unimodular."""
    integer = np.eye(dim, dtype=np.int64)
    for _ in range(4):
        i, j = rng.choice(dim, size=2, replace=False)
        integer[:, j] += int(rng.integers(-2, 3)) * integer[:, i]
    stretch = np.exp(rng.uniform(-0.4, 0.4, size=dim))
    stretch /= np.prod(stretch) ** (1.0 / dim)
    rotation = haar_rotation(dim, rng).matrix
    return rotation @ np.diag(stretch) @ integer


def brute_force(
    basis: np.ndarray, keep: Callable[[np.ndarray], np.ndarray], reach: float
) -> set[tuple[int, ...]]:
    """Coefficients of the nonzero points with norm <= reach that pass ``keep``."""
    inverse = np.linalg.inv(basis)
    bounds = [math.ceil(reach * np.linalg.norm(row)) for row in inverse]
    mesh = np.meshgrid(*(np.arange(-b, b + 1) for b in bounds), indexing="ij")
    grid = np.stack(mesh, axis=-1).reshape(-1, len(bounds))
    grid = grid[np.any(grid != 0, axis=1)]
    kept = grid[keep(grid @ basis.T)]
    return {tuple(int(value) for value in row) for row in kept}


def coefficient_set(points) -> set[tuple[int, ...]]:
    return {point.coeffs for point in points}


def test_identity_ball_counts():
    cube = LatticeBasis.identity(3)
    assert len(enumerate_in_ball(cube, 1.0)) == 6
    assert len(enumerate_in_ball(cube, 1.5)) == 18
    assert enumerate_in_ball(cube, 0.9) == []


def test_ball_points_are_sorted_and_symmetric():
    points = enumerate_in_ball(LatticeBasis.identity(2), 1.5)
    coeffs = [point.coeffs for point in points]
    assert coeffs == sorted(coeffs)
    assert {tuple(-value for value in c) for c in coeffs} == set(coeffs)
    assert all(point.norm <= 1.5 for point in points)


@pytest.mark.parametrize("case", range(25))
def test_ball_enumeration_matches_brute_force(case: int):
    rng = np.random.default_rng(1000 + case)
    basis = random_unimodular_basis(rng)
    radius = float(rng.uniform(1.0, 4.0))
    lattice = LatticeBasis(basis)
    expected = brute_force(
        basis, lambda points: np.linalg.norm(points, axis=1) <= radius, radius
    )
    assert coefficient_set(enumerate_in_ball(lattice, radius)) == expected


@pytest.mark.parametrize("case", range(10))
def test_box_enumeration_matches_brute_force(case: int):
    rng = np.random.default_rng(2000 + case)
    basis = random_unimodular_basis(rng)
    lower = rng.uniform(-3.0, 0.5, size=3)
    upper = lower + rng.uniform(0.2, 3.0, size=3)
    reach = float(np.linalg.norm(np.maximum(np.abs(lower), np.abs(upper))))
    def in_box(points: np.ndarray) -> np.ndarray:
        return np.all(points >= lower, axis=1) & np.all(points <= upper, axis=1)

    expected = brute_force(basis, in_box, reach)
    found = enumerate_in_box(LatticeBasis(basis), lower, upper)
    assert coefficient_set(found) == expected


def test_from_alpha_builds_the_dirichlet_lattice():
    alpha = np.array([[0.25], [0.5]])
    lattice = from_alpha(alpha)
    assert np.linalg.det(lattice.basis) == pytest.approx(1.0)
    point = lattice.point((1, -2, 3))
    assert point.coords == pytest.approx((1 + 0.75, -2 + 1.5, 3))


def test_basis_validation():
    with pytest.raises(DimensionError, match="determinant 1"):
        LatticeBasis(np.diag([2.0, 1.0]))
    with pytest.raises(DimensionError):
        LatticeBasis(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        LatticeBasis.identity(2).point((1, 2, 3))


def test_lll_reduction_of_a_skewed_basis():
    basis = np.array([[1.0, 100.0], [0.0, 1.0]])
    reduced, transform = lll_reduce(basis)
    assert np.allclose(reduced, basis @ transform)
    assert round(np.linalg.det(transform)) == 1
    assert np.max(np.linalg.norm(reduced, axis=0)) < 1.5
    assert np.allclose(reduce(LatticeBasis(basis)).basis, reduced)


@pytest.mark.parametrize("case", range(10))
def test_lll_keeps_the_lattice(case: int):
    rng = np.random.default_rng(3000 + case)
    basis = random_unimodular_basis(rng, dim=4)
    reduced, transform = lll_reduce(basis)
    assert np.issubdtype(transform.dtype, np.integer)
    assert round(np.linalg.det(transform)) == 1
    assert np.allclose(reduced, basis @ transform)


@pytest.mark.parametrize(
    "basis",
    [np.zeros((2, 2)), np.array([[1.0, 1.0], [1.0, 1.0]]), np.full((2, 2), np.nan)],
)
def test_singular_bases_raise_precision_errors(basis: np.ndarray):
    with pytest.raises(PrecisionError):
        lll_reduce(basis)


@pytest.mark.parametrize("case", range(10))
def test_shortest_vector_lower_bound_is_sound(case: int):
    rng = np.random.default_rng(4000 + case)
    lattice = LatticeBasis(random_unimodular_basis(rng))
    bound = shortest_vector_norm_lower_bound(lattice)
    shortest = min(point.norm for point in enumerate_in_ball(lattice, 2.0))
    assert 0 < bound <= shortest
    assert enumerate_in_ball(lattice, bound * 0.999) == []


def test_point_cap_raises_with_a_partial_count():
    with pytest.raises(EnumerationLimitError) as caught:
        enumerate_in_ball(LatticeBasis.identity(3), 3.0, point_cap=10)
    assert caught.value.partial_count > 10


def test_counting_in_the_unit_height_example():
    spec = RegionSpec(RegionFamily.WEIGHTED, 1, 1, 0.5, 3.0)
    lattice = LatticeBasis.identity(2)
    assert count_in_region(lattice, spec) == 0
    assert count_in_region(lattice, spec, method="direct") == 0
    assert count_in_region(lattice, spec.at_height(1.0)) == 4


@pytest.mark.parametrize("case", range(10))
def test_region_counts_match_brute_force_and_both_methods(case: int):
    rng = np.random.default_rng(5000 + case)
    spec = RegionSpec(
        RegionFamily.WEIGHTED,
        2,
        1,
        0.5,
        3.0,
        r=ProbabilityVector((0.7, 0.3)),
        direction=Cap.around((1.0, 1.0), 0.6) if case % 2 else None,
    )
    rotation = haar_rotation(3, rng)
    lattice = LatticeBasis.identity(3)
    low, high = spec.bounds()
    reach = float(np.linalg.norm(np.maximum(np.abs(low), np.abs(high))))
    expected = brute_force(rotation.matrix, spec.contains_points, reach)
    flowed = points_in_region(lattice, spec, rotation)
    direct = points_in_region(lattice, spec, rotation, method="direct")
    assert coefficient_set(flowed) == expected
    assert coefficient_set(direct) == expected
    assert count_in_region(lattice, spec, rotation) == len(expected)


@pytest.mark.parametrize(
    "alpha",
    [[[0.41], [0.73]], [[math.sqrt(2)], [math.pi]], [[1234.567], [-987.6543]]],
)
def test_region_counts_do_not_change_under_reduction(alpha: list[list[float]]):
    lattice = from_alpha(alpha)
    reduced = reduce(lattice)
    assert abs(np.linalg.det(reduced.basis) - np.linalg.det(lattice.basis)) <= 1e-9
    spec = RegionSpec(
        RegionFamily.WEIGHTED, 2, 1, 0.5, 3.0, r=ProbabilityVector((0.7, 0.3))
    )
    rotation = haar_rotation(3, np.random.default_rng(77))
    for rot in (None, rotation):
        expected = count_in_region(lattice, spec, rot)
        assert count_in_region(reduced, spec, rot) == expected
        assert count_in_region(reduced, spec, rot, method="direct") == expected


def test_ball_enumeration_grows_with_the_radius():
    rng = np.random.default_rng(91)
    lattice = LatticeBasis(random_unimodular_basis(rng))
    previous: set[tuple[int, ...]] = set()
    for radius in (0.5, 1.0, 1.3, 1.8, 2.4):
        found = coefficient_set(enumerate_in_ball(lattice, radius))
        assert previous <= found
        previous = found
    assert previous


def test_unknown_counting_method():
    spec = RegionSpec(RegionFamily.WEIGHTED, 1, 1, 0.5)
    with pytest.raises(ValueError, match="counting method"):
        count_in_region(
            LatticeBasis.identity(2),
            spec,
            method="sideways",  # type: ignore[arg-type]
        )


def test_count_in_set_uses_closed_balls():
    square = LatticeBasis.identity(2)
    assert count_in_set(square, EuclideanBall.centered(2, 1.0)) == 4
    assert count_in_set(square, EuclideanBall.centered(2, 1.1)) == 4
    assert count_in_set(square, EuclideanBall.centered(2, 1.5)) == 8


def test_parse_matrix_text_accepts_rows_and_separators():
    assert parse_matrix_text("1 2; 3 4").tolist() == [[1, 2], [3, 4]]
    assert parse_matrix_text("1, 2\n3,4  # trailing\n").tolist() == [[1, 2], [3, 4]]
    with pytest.raises(BasisFormatError):
        parse_matrix_text("1 2\n3")
    with pytest.raises(BasisFormatError):
        parse_matrix_text("  \n# only a comment\n")


@pytest.mark.parametrize("suffix", [".txt", ".json"])
def test_matrix_files_round_trip(tmp_path, suffix: str):
    rng = np.random.default_rng(8)
    basis = random_unimodular_basis(rng)
    path = tmp_path / f"basis{suffix}"
    dump_matrix(basis, path)
    assert np.array_equal(load_matrix(path), basis)
    assert np.array_equal(load_basis(path).basis, basis)


def test_matrix_file_errors(tmp_path):
    with pytest.raises(BasisFormatError, match="Cannot read"):
        load_matrix(tmp_path / "missing.txt")
    bad = tmp_path / "bad.json"
    bad.write_text('{"rows": 1}', encoding="utf-8")
    with pytest.raises(BasisFormatError):
        load_matrix(bad)
    words = tmp_path / "words.txt"
    words.write_text("one two\n", encoding="utf-8")
    with pytest.raises(BasisFormatError, match="numeric"):
        load_matrix(words)
