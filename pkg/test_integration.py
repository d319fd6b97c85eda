"""
End-to-end runs of the isaacs-lab command line against the shipped presets.
"""

import csv
import json

import numpy as np
import pytest

import games.solver as solver
from conftest import preset_path
from main import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main


def _run(command: str, preset, out, *extra: str) -> int:
    return main([command, "--config", str(preset), "--out", str(out), *extra])


def _document(out, command: str) -> dict:
    return json.loads((out / f"{command}.json").read_text(encoding="utf-8"))


def _rows(path) -> list[list[str]]:
    with path.open(encoding="utf-8", newline="") as handle:
        return list(csv.reader(handle))


def test_validate_passes_on_a_preset(tmp_path):
    assert _run("validate", preset_path("linear_1d"), tmp_path, "--h", "0.125") == EXIT_PASS
    document = _document(tmp_path, "validate")
    assert document["status"] == "pass"
    assert document["exit_code"] == 0
    assert document["schema_version"] == "1.0"


def test_validate_fails_when_ellipticity_is_violated(tmp_path):
    raw = json.loads(preset_path("linear_1d").read_text(encoding="utf-8"))
    raw["constants"]["delta"] = 0.6
    problem = tmp_path / "tight.json"
    problem.write_text(json.dumps(raw), encoding="utf-8")
    assert _run("validate", problem, tmp_path / "out", "--h", "0.125") == EXIT_FAIL
    failures = [
        check["name"]
        for check in _document(tmp_path / "out", "validate")["results"]["assumptions"]["checks"]
        if not check["passed"]
    ]
    assert failures == ["ellipticity:lower"]


def test_malformed_problem_files_are_usage_errors(tmp_path):
    raw = json.loads(preset_path("linear_1d").read_text(encoding="utf-8"))
    raw["domain"]["shape"] = "torus"
    problem = tmp_path / "bad.json"
    problem.write_text(json.dumps(raw), encoding="utf-8")
    assert _run("validate", problem, tmp_path) == EXIT_USAGE
    assert _run("solve", tmp_path / "missing.json", tmp_path) == EXIT_USAGE


def test_uncertified_solve_fails_the_run(tmp_path, monkeypatch):
    monkeypatch.setattr(solver, "isaacs_field", lambda problem, field: np.ones(field.grid.n_interior))
    assert _run("solve", preset_path("linear_1d"), tmp_path, "--h", "0.125") == EXIT_FAIL
    document = _document(tmp_path, "solve")
    assert document["status"] == "fail"
    assert document["results"]["certified"] is False


def test_solve_is_deterministic(tmp_path):
    for name in ("first", "second"):
        assert _run("solve", preset_path("linear_1d"), tmp_path / name, "--h", "0.0625") == EXIT_PASS
    first = (tmp_path / "first" / "solve_field.csv").read_bytes()
    assert first == (tmp_path / "second" / "solve_field.csv").read_bytes()
    rows = _rows(tmp_path / "first" / "solve_field.csv")
    assert rows[0] == ["x1", "v", "alpha", "beta"]
    assert len(rows) == 1 + 31


def test_solve_reg_reports_the_gap(tmp_path):
    assert (
        _run("solve-reg", preset_path("linear_1d"), tmp_path, "--h", "0.0625", "--K", "2")
        == EXIT_PASS
    )
    results = _document(tmp_path, "solve-reg")["results"]
    assert results["sup_difference_from_v"] > 0
    assert (tmp_path / "solve_reg_field.csv").exists()


def test_rate_study_writes_its_table(tmp_path):
    code = _run(
        "rate-study", preset_path("linear_1d"), tmp_path, "--h", "0.0625", "--K-list", "1", "2", "4"
    )
    assert code == EXIT_PASS
    rows = _rows(tmp_path / "rate_study.csv")
    assert rows[0] == ["K", "e_K", "weighted_e_K", "ratio", "iterations", "wall_time_ms"]
    assert [row[0] for row in rows[1:]] == ["1", "2", "4"]


def test_simulate_does_not_depend_on_threads(tmp_path):
    common = ["--policy", "constant", "--n-paths", "400", "--dt", "0.002", "--seed", "7", "--x0", "0.2"]
    for threads in ("1", "2"):
        code = _run(
            "simulate", preset_path("linear_1d"), tmp_path / threads, *common, "--threads", threads
        )
        assert code == EXIT_PASS
    assert (tmp_path / "1" / "simulate.csv").read_bytes() == (tmp_path / "2" / "simulate.csv").read_bytes()


def test_dpp_check_on_the_whole_space_preset(tmp_path):
    code = _run(
        "dpp-check",
        preset_path("whole_space_1d"),
        tmp_path,
        "--h", "0.25",
        "--gamma", "0.5",
        "--n-paths", "1000",
        "--dt", "0.01",
        "--allowance", "0.05",
    )
    assert code == EXIT_PASS
    rows = _rows(tmp_path / "dpp_check.csv")
    assert rows[1][-1] == "true"


def test_dpp_check_refuses_bounded_domains(tmp_path):
    assert _run("dpp-check", preset_path("linear_1d"), tmp_path) == EXIT_USAGE


@pytest.mark.slow
def test_lift_check_runs_end_to_end(tmp_path):
    code = _run(
        "lift-check",
        preset_path("linear_1d"),
        tmp_path,
        "--h", "0.125",
        "--n-paths", "200",
        "--dt", "0.002",
        "--x0", "0.0",
    )
    assert code in (EXIT_PASS, EXIT_FAIL)
    rows = _rows(tmp_path / "lift_check.csv")
    assert rows[0] == ["x", "psi", "v_h", "vbar_mean", "vbar_stderr", "pass"]
    assert len(rows) == 2
