import json

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import PRESETS, preset_path
from games.base import ConfigurationError
from src.config import (
    ExperimentConfig,
    ProblemFile,
    TableParams,
    build_problem,
    load_problem,
    load_problem_file,
)
from src.results import ResultDocument, write_csv, write_document


def _raw(name: str) -> dict:
    return json.loads(preset_path(name).read_text(encoding="utf-8"))


@pytest.mark.parametrize("path", sorted(PRESETS.glob("*.json")), ids=lambda p: p.stem)
def test_every_preset_loads(path):
    problem = load_problem(path)
    assert problem.name == path.stem
    assert problem.dimension == load_problem_file(path).dimension


def test_unknown_fields_are_rejected():
    raw = _raw("linear_1d")
    raw["constants"]["K1"] = 3.0
    with pytest.raises(ValidationError):
        ProblemFile.model_validate(raw)


def test_overrides_must_name_known_pairs():
    raw = _raw("two_control_1d")
    raw["coefficients"]["pairs"]["plus/silent"] = {"f0": 2.0}
    with pytest.raises(ValidationError):
        ProblemFile.model_validate(raw)


def test_pair_overrides_reach_the_coefficients(two_control_problem):
    x = np.array([[0.0]])
    calm = two_control_problem.coefficients.evaluate(0, 0, x)
    loud = two_control_problem.coefficients.evaluate(0, 1, x)
    assert loud.a[0, 0, 0] > calm.a[0, 0, 0]


def test_whole_space_has_no_barrier(whole_space_problem):
    assert whole_space_problem.barrier is None
    assert whole_space_problem.domain.is_whole_space


def test_shape_mismatch_is_a_configuration_error():
    raw = _raw("ball_2d")
    raw["coefficients"]["pairs"]["east/still"]["b0"] = [1.0, 2.0, 3.0]
    with pytest.raises(ConfigurationError):
        build_problem(ProblemFile.model_validate(raw))


def test_table_columns_must_match():
    with pytest.raises(ValidationError):
        TableParams(nodes=[0.0, 1.0], sigma_scale=[1.0], b=[[0.0], [0.0]], c=[0.0, 0.0], f=[1.0, 1.0])
    with pytest.raises(ValidationError):
        TableParams(
            nodes=[1.0, 0.0], sigma_scale=[1.0, 1.0], b=[[0.0], [0.0]], c=[0.0, 0.0], f=[1.0, 1.0]
        )


def test_experiment_config_validation():
    problem = str(preset_path("linear_1d"))
    config = ExperimentConfig(command="solve", problem=problem)
    assert config.K_list == [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    with pytest.raises(ValidationError):
        ExperimentConfig(command="rate-study", problem=problem, K_list=[2.0, 1.0])
    with pytest.raises(ValidationError):
        ExperimentConfig(command="solve", problem="does/not/exist.json")
    with pytest.raises(ValidationError):
        ExperimentConfig(command="solve", problem=problem, mode="penalty")


def test_result_document_is_sorted_and_finite(tmp_path):
    document = ResultDocument(
        command="solve",
        status="pass",
        exit_code=0,
        config={"h": 0.0625},
        results={"residual": np.float64(1e-12), "gap": float("inf"), "nodes": np.arange(3)},
    )
    path = write_document(tmp_path, document)
    assert path.name == "solve.json"
    text = path.read_text(encoding="utf-8")
    payload = json.loads(text)
    assert payload["results"] == {"gap": "inf", "nodes": [0, 1, 2], "residual": 1e-12}
    assert list(payload) == sorted(payload)
    assert text.endswith("\n")


def test_csv_rows_end_with_newlines(tmp_path):
    path = write_csv(tmp_path / "table.csv", [["x", "v"], ["0", "1"]])
    assert path.read_bytes() == b"x,v\n0,1\n"


def test_experiment_config_round_trips():
    config = ExperimentConfig(
        command="simulate", problem=str(preset_path("two_control_1d")), x0=[[0.0], [0.5]], seed=3
    )
    assert ExperimentConfig.model_validate_json(config.model_dump_json()) == config
