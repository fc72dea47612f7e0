from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest
from config import ConfigurationError, RuntimeSettings
from experiments import (
    CUSP_COLUMNS,
    EXIT_ERROR,
    EXIT_PASSED,
    RATIO_COLUMNS,
    build_direction,
    execute,
    format_cell,
    growth_for,
    load_config,
    parse_config,
    run,
    tolerance_for,
)
from geometry import AdmissibleComplement, Cap, CapInAdmissible, FullSphere
from lattice import dump_matrix

ENUMERATE = """\
# identity lattice in R^3
experiment = enumerate
seed = 0
m = 2
n = 1
radius = 1.5
"""

APPROXIMATES = """\
experiment = approximates
seed = 0
m = 1
n = 1
lattice = alpha
alpha = 1.4142135623730951
Q = 10
height_bound = 20
"""

RATIO = """\
experiment = ratio-weighted
seed = 7
r = 0.7, 0.3
T_grid = 1, 4
samples = 20
volume_samples = 2000
"""

CUSP = """\
experiment = cusp
seed = 1
cap_center = 1, 0
cap_radius = 0.5
epsilon = 0.5
T_grid = 1, 2
samples = 4
"""


@pytest.fixture()
def settings() -> RuntimeSettings:
    return RuntimeSettings.from_env({"SPIRALLAB_CHUNK_SIZE": "4"})


def read_rows(path: Path) -> list[list[str]]:
    with path.open(encoding="utf-8", newline="") as source:
        return list(csv.reader(source))


def test_key_value_configuration():
    config = parse_config(RATIO)
    assert config.experiment == "ratio-weighted"
    assert config.r == [0.7, 0.3]
    assert config.heights() == [1.0, 4.0]
    assert config.d == 3
    assert config.direction == "full"


def test_matrix_values_and_camel_case_keys():
    config = parse_config(APPROXIMATES.replace("height_bound", "heightBound"))
    assert config.alpha == [[math.sqrt(2)]]
    assert config.height_bound == 20.0
    rows = parse_config(
        "experiment = approximates\nseed = 0\nlattice = alpha\n"
        "alpha = 0.1, 0.2; 0.3, 0.4\nm = 2\nn = 2\nQ = 3\n"
    )
    assert rows.alpha == [[0.1, 0.2], [0.3, 0.4]]


def test_log_grid_gives_exponential_heights():
    config = parse_config(RATIO.replace("T_grid = 1, 4", "log_T_grid = 0, 1"))
    assert config.heights() == pytest.approx([1.0, math.e])


def test_json_configuration():
    text = json.dumps(
        {"experiment": "enumerate", "seed": 3, "m": 1, "n": 1, "radius": 2.0}
    )
    config = parse_config(text)
    assert config.seed == 3
    assert config.radius == 2.0


@pytest.mark.parametrize(
    ("text", "message"),
    [
        (ENUMERATE + "epsilon = 1.5\n", r"line 7: epsilon: epsilon ∈ \(0,1\]"),
        (ENUMERATE + "epsilon = 0\n", r"epsilon ∈ \(0,1\]"),
        (
            ENUMERATE + "seed = 4\n",
            r"line 7: duplicate key 'seed' \(first set on line 3\)",
        ),
        (ENUMERATE + "colour = red\n", "line 7: colour: unknown key"),
        (ENUMERATE.replace("seed = 0\n", ""), "seed: required key is missing"),
        (ENUMERATE + "radius 2\n", "line 7: expected 'key = value'"),
        (ENUMERATE.replace("radius = 1.5", "radius = -1"), "line 6: radius"),
        (RATIO.replace("0.7, 0.3", "0.7, 0.4"), "r: entries must sum to 1"),
        (RATIO.replace("1, 4", "4, 1"), "strictly increasing"),
        (CUSP.replace("cap_radius = 0.5\n", ""), "cap_center and cap_radius"),
        (
            '{"experiment": "enumerate", "seed": 1, "seed": 2}',
            "duplicate key 'seed'",
        ),
        ('{"experiment": ', "invalid JSON"),
    ],
)
def test_configuration_errors(text: str, message: str):
    with pytest.raises(ConfigurationError, match=message):
        parse_config(text)


def test_configuration_errors_collect_every_issue():
    with pytest.raises(ConfigurationError) as caught:
        parse_config(ENUMERATE + "colour = red\nshade = blue\n")
    assert len(caught.value.issues) == 2


def test_overrides_replace_file_values():
    config = parse_config(ENUMERATE, {"seed": 9, "samples": None, "threads": 2})
    assert config.seed == 9
    assert config.samples == 2000
    assert config.threads == 2
    without_name = parse_config(
        ENUMERATE.replace("experiment = enumerate\n", ""), {"experiment": "enumerate"}
    )
    assert without_name.experiment == "enumerate"
    with pytest.raises(ConfigurationError, match="configures 'enumerate'"):
        parse_config(ENUMERATE, {"experiment": "cusp"})


def test_load_config_reports_unreadable_files(tmp_path: Path):
    with pytest.raises(ConfigurationError, match="Cannot read"):
        load_config(tmp_path / "missing.cfg")
    path = tmp_path / "enumerate.cfg"
    path.write_text(ENUMERATE, encoding="utf-8")
    assert load_config(path).radius == 1.5


def test_direction_sets_follow_the_configuration():
    base = RATIO + "cap_center = 1, 1\ncap_radius = 0.3\n"
    assert isinstance(build_direction(parse_config(RATIO)), FullSphere)
    assert isinstance(build_direction(parse_config(base + "direction = cap\n")), Cap)
    admissible = parse_config(RATIO + "direction = admissible\ndelta = 0.2\n")
    assert build_direction(admissible) == AdmissibleComplement(0.2, 2)
    nested = parse_config(base + "direction = cap-in-admissible\ndelta = 0.2\n")
    assert isinstance(build_direction(nested), CapInAdmissible)


def test_explicit_thresholds_override_the_defaults():
    ratio = parse_config(RATIO)
    assert tolerance_for(ratio) == 0.1
    assert tolerance_for(parse_config(RATIO + "tolerance = 0.25\n")) == 0.25
    assert tolerance_for(ratio.model_copy(update={"tolerance": 0.0})) == 0.0
    cusp = parse_config(CUSP)
    assert growth_for(cusp) == 3.0
    assert growth_for(parse_config(CUSP + "growth_factor = 1.5\n")) == 1.5
    assert growth_for(cusp.model_copy(update={"growth_factor": 0.0})) == 0.0


def test_format_cell():
    assert format_cell(None) == ""
    assert format_cell(0.1) == "0.1"
    assert format_cell(np.float64(2.5)) == "2.5"
    assert format_cell(3) == "3"


def test_enumerate_run_writes_artifacts(tmp_path: Path, settings: RuntimeSettings):
    result = run(parse_config(ENUMERATE), settings=settings, out_dir=tmp_path)
    assert result.exit_code == EXIT_PASSED
    assert [path.name for path in result.artifacts] == [
        "enumerate.csv",
        "enumerate-summary.json",
        "enumerate-manifest.json",
    ]
    rows = read_rows(tmp_path / "enumerate.csv")
    assert rows[0] == ["c1", "c2", "c3", "x1", "x2", "x3", "norm"]
    assert len(rows) == 19

    summary = json.loads((tmp_path / "enumerate-summary.json").read_text("utf-8"))
    assert summary["pass"] is True
    assert summary["rows"] == 18
    assert summary["seed"] == 0
    assert summary["checks"] == {"symmetric": True, "points": 18}
    assert summary["wall_seconds"] >= 0

    manifest = json.loads((tmp_path / "enumerate-manifest.json").read_text("utf-8"))
    assert manifest["service"] == "spirallab-api"
    assert manifest["code_version"] == "1.0.0"
    assert manifest["artifacts"] == [path.name for path in result.artifacts]


def test_manifest_config_reproduces_the_run(tmp_path: Path, settings: RuntimeSettings):
    config = parse_config(RATIO)
    run(config, settings=settings, out_dir=tmp_path)
    manifest = json.loads(
        (tmp_path / "ratio-weighted-manifest.json").read_text("utf-8")
    )
    replayed = parse_config(json.dumps(manifest["config"]))
    assert replayed.model_dump() == config.model_dump()


def test_basis_files_feed_the_lattice(tmp_path: Path, settings: RuntimeSettings):
    basis = tmp_path / "basis.txt"
    dump_matrix(np.array([[1.0, 0.5], [0.0, 1.0]]), basis)
    config = parse_config(
        "experiment = enumerate\nseed = 0\nm = 1\nn = 1\nradius = 1.2\n"
        f"lattice = basis-file\nlattice_path = {basis}\n"
    )
    outcome = execute(config, settings)
    assert outcome.passed
    assert outcome.checks["points"] == 6

    wrong = config.model_copy(update={"m": 2})
    result = run(wrong, settings=settings, out_dir=tmp_path)
    assert result.exit_code == EXIT_ERROR
    assert "3×3" in (result.summary.error or "")


def test_missing_lattice_files_are_configuration_errors(tmp_path: Path):
    with pytest.raises(ConfigurationError, match="does not exist"):
        parse_config(
            ENUMERATE + f"lattice = basis-file\nlattice_path = {tmp_path / 'none'}\n"
        )


def test_approximates_run(tmp_path: Path, settings: RuntimeSettings):
    result = run(parse_config(APPROXIMATES), settings=settings, out_dir=tmp_path)
    assert result.exit_code == EXIT_PASSED
    rows = read_rows(tmp_path / "approximates.csv")
    assert rows[0] == ["kind", "q1", "p1", "error1", "height"]
    assert rows[1][:3] == ["dirichlet", "5", "7"]
    assert rows[2][:3] == ["multiplicative", "5", "7"]
    weighted = [row for row in rows[1:] if row[0] == "weighted"]
    assert len(weighted) == result.summary.checks["weighted_pairs"]
    assert result.summary.checks["dirichlet"] is True
    assert result.summary.checks["multiplicative_corollary"] is True


def test_alpha_files_feed_approximates(tmp_path: Path, settings: RuntimeSettings):
    alpha = tmp_path / "alpha.json"
    dump_matrix(np.array([[math.sqrt(2)]]), alpha)
    text = APPROXIMATES.replace("lattice = alpha\nalpha = 1.4142135623730951\n", "")
    config = parse_config(text + f"lattice = alpha-file\nlattice_path = {alpha}\n")
    outcome = execute(config, settings)
    assert outcome.rows[0][:3] == ("dirichlet", 5, 7)


def test_full_sphere_ratio_run_passes(tmp_path: Path, settings: RuntimeSettings):
    result = run(parse_config(RATIO), settings=settings, out_dir=tmp_path)
    assert result.exit_code == EXIT_PASSED
    rows = read_rows(tmp_path / "ratio-weighted.csv")
    assert tuple(rows[0]) == RATIO_COLUMNS
    assert [float(row[0]) for row in rows[1:]] == [1.0, 4.0]
    assert all(float(row[5]) == pytest.approx(1.0) for row in rows[1:])
    assert result.summary.checks["target_ratio"] == 1.0
    assert result.summary.checks["flagged_rows"] == 0


def test_runs_do_not_depend_on_threads(tmp_path: Path, settings: RuntimeSettings):
    config = parse_config(
        RATIO + "direction = cap\ncap_center = 1, 1\ncap_radius = 0.5\n"
    )
    outputs = []
    for threads in (1, 2, 4):
        directory = tmp_path / f"threads-{threads}"
        run(
            config.model_copy(update={"threads": threads}),
            settings=settings,
            out_dir=directory,
        )
        outputs.append((directory / "ratio-weighted.csv").read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_cusp_point_cap_keeps_partial_output(
    tmp_path: Path, settings: RuntimeSettings
):
    config = parse_config(CUSP + "point_cap = 1\n")
    result = run(config, settings=settings, out_dir=tmp_path)
    assert result.exit_code == EXIT_ERROR
    assert "point cap" in (result.summary.error or "")
    assert result.summary.passed is False
    assert read_rows(tmp_path / "cusp.csv") == [list(CUSP_COLUMNS)]
    summary = json.loads((tmp_path / "cusp-summary.json").read_text("utf-8"))
    assert summary["pass"] is False
    assert summary["rows"] == 0


def test_cusp_run_reports_growth(settings: RuntimeSettings):
    config = parse_config(CUSP.replace("samples = 4", "samples = 10"))
    outcome = execute(config, settings)
    assert [row[0] for row in outcome.rows] == [1.0, 2.0]
    assert [row[1] for row in outcome.rows] == pytest.approx([1.0, math.sqrt(2)])
    assert "strictly_increasing" in outcome.checks


def test_avg_limit_run_shape(settings: RuntimeSettings):
    config = parse_config(
        "experiment = avg-limit\nseed = 5\nball_center = 1, 1, 1\n"
        "ball_radius = 0.78\nlog_T_grid = 0, 1\nsamples = 40\nvolume_samples = 2000\n"
    )
    outcome = execute(config, settings)
    assert len(outcome.rows) == 2
    assert outcome.rows[0][0] == 0.0
    assert 0.0 <= outcome.checks["p_value"] <= 1.0


def test_cone_volume_stabilizes_for_a_cap_off_the_great_spheres(
    settings: RuntimeSettings,
):
    config = parse_config(
        "experiment = cone-volume\nseed = 2\ncap_center = 1, 1\ncap_radius = 0.2\n"
        "tau_grid = 2, 4\nexpectation = stabilize\nvolume_samples = 4000\n"
    )
    outcome = execute(config, settings)
    assert [row[0] for row in outcome.rows] == [2.0, 4.0]
    assert outcome.passed
    assert outcome.checks["stabilizes"] is True


def test_infinite_growth_is_dropped_from_checks(settings: RuntimeSettings):
    config = parse_config(
        "experiment = cone-volume\nseed = 2\ncap_center = 1, 1\ncap_radius = 0.2\n"
        "tau_grid = 1, 2\nvolume_samples = 100\n"
    )
    outcome = execute(config, settings)
    assert outcome.rows[0][1] == 0.0
    assert "growth" not in outcome.checks
    assert "strictly_increasing" in outcome.checks
