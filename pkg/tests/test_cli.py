import hashlib
import json

import pytest

from cellplan_mcp.cli import main
from cellplan_mcp.errors import (
    EXIT_NUMERICAL,
    EXIT_USAGE,
    ConvergenceError,
    DomainError,
    InfeasibleDemandError,
    PlacementError,
    ScenarioError,
    SingularityError,
    exit_code_for,
)


@pytest.fixture
def square_file(scenario_dir, tmp_path):
    data = json.loads((scenario_dir / "identity_square.json").read_text())
    data.update({"grid": 60, "cell_grid": 40, "patches": 5, "pushforward_samples": 5000})
    path = tmp_path / "square.json"
    path.write_text(json.dumps(data))
    return path


def write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data))
    return str(path)


def test_exit_codes_follow_the_error_kind():
    assert exit_code_for(DomainError("x")) == EXIT_USAGE
    assert exit_code_for(SingularityError("x")) == EXIT_USAGE
    assert exit_code_for(PlacementError("x", 34)) == EXIT_USAGE
    assert exit_code_for(ScenarioError("x")) == EXIT_USAGE
    assert exit_code_for(ConvergenceError("x", residual=1.0, iterations=5)) == EXIT_NUMERICAL
    assert exit_code_for(InfeasibleDemandError("x", achieved=1.5)) == EXIT_NUMERICAL
    assert exit_code_for(RuntimeError("x")) == EXIT_NUMERICAL
    assert "iterations=5" in str(ConvergenceError("x", residual=1.0, iterations=5))


def test_solve_map(square_file, tmp_path, capsys):
    assert main(["solve-map", str(square_file), "--out", str(tmp_path / "out")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["module"] == pytest.approx(1.0, abs=1e-8)
    assert (tmp_path / "out" / "strip_map.json").exists()


def test_plan_then_emit_from_the_stored_run(square_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["plan", str(square_file), "--out", str(out), "--emit", "sites", "--seed", "5"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["status"] == "ok"
    assert summary["seed"] == 5
    assert (out / "sites.csv").exists()

    assert main(["emit", str(square_file), "--out", str(out), "--kinds", "cdf,load-pattern"]) == 0
    emitted = json.loads(capsys.readouterr().out)["emitted"]
    assert [p.rsplit("/", 1)[-1] for p in emitted] == ["cdf.csv", "load-pattern.csv"]
    artifacts = json.loads((out / "manifest.json").read_text())["artifacts"]
    for name in ("sites.csv", "cdf.csv", "load-pattern.csv"):
        assert artifacts[name] == hashlib.sha256((out / name).read_bytes()).hexdigest()


def test_plan_reuses_a_solved_map_with_a_mismatched_aspect(square_file, tmp_path, capsys):
    assert main(["solve-map", str(square_file), "--out", str(tmp_path / "map")]) == 0
    capsys.readouterr()
    args = [
        "plan",
        str(square_file),
        "--out",
        str(tmp_path / "skewed"),
        "--strip-map",
        str(tmp_path / "map" / "strip_map.json"),
        "--aspect-mismatch",
        "1.25",
    ]
    assert main(args) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["checks"]["module_match"] == pytest.approx(0.25)


def test_analyze_writes_the_checks(square_file, tmp_path, capsys):
    assert main(["analyze", str(square_file), "--out", str(tmp_path)]) == 0
    analysis = json.loads((tmp_path / "analysis.json").read_text())
    assert analysis["module"] == pytest.approx(1.0, abs=1e-8)
    assert analysis["checks"]["conservation_max_error"] < 1e-2
    artifacts = json.loads((tmp_path / "manifest.json").read_text())["artifacts"]
    assert artifacts["analysis.json"] == hashlib.sha256((tmp_path / "analysis.json").read_bytes()).hexdigest()


def test_invalid_input_exits_with_usage_code(tmp_path, capsys):
    assert main(["plan", write(tmp_path, "broken.json", "{")]) == EXIT_USAGE
    assert main(["plan", str(tmp_path / "absent.json")]) == EXIT_USAGE
    assert main(["plan", write(tmp_path, "both.json", {"rectangle": [1, 1], "polygon": [[0, 0], [1, 0], [1, 1]]})]) == EXIT_USAGE
    flat = write(tmp_path, "flat.json", {"rectangle": [6.84, 4.9], "sweep": {"cells": [64], "betas": [3.5]}})
    assert main(["analyze", flat, "--out", str(tmp_path / "a")]) == EXIT_USAGE
    assert main(["emit", flat, "--out", str(tmp_path / "none"), "--kinds", "cdf"]) == EXIT_USAGE
    assert "Error:" in capsys.readouterr().err


def test_unknown_plot_kind_is_an_argument_error(square_file):
    with pytest.raises(SystemExit) as info:
        main(["emit", str(square_file), "--kinds", "heatmap"])
    assert info.value.code == EXIT_USAGE


def test_overloaded_network_exits_with_numerical_code(tmp_path):
    overload = write(
        tmp_path,
        "overload.json",
        {"name": "overload", "rectangle": [6.84, 4.9], "cells": 36, "fit": "native", "mean_interarrival": 1e-4, "cell_grid": 24},
    )
    assert main(["plan", overload, "--out", str(tmp_path / "o"), "--grid", "32"]) == EXIT_NUMERICAL
    assert (tmp_path / "o" / "FAILED").exists()
