import csv
import json

import pytest
from click.testing import CliRunner

from semsafe.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _write_json(path, doc):
    path.write_text(json.dumps(doc))


def test_gen_data_then_calibrate_then_classify(tmp_path, runner):
    data_dir = tmp_path / "data"
    result = runner.invoke(
        main,
        ["gen-data", "--n-calibration", "40", "--n-test", "20", "--out-dir", str(data_dir)],
    )
    assert result.exit_code == 0, result.output
    for name in ("calibration.json", "safe_test.json", "unsafe_test.json", "modes.json"):
        assert (data_dir / name).exists()

    mode_set_path = tmp_path / "mode_set.json"
    result = runner.invoke(
        main,
        [
            "calibrate",
            "--corpus", str(data_dir / "calibration.json"),
            "--modes", str(data_dir / "modes.json"),
            "--alpha", "0.1",
            "--out", str(mode_set_path),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "alpha=0.1" in result.output
    assert mode_set_path.exists()

    desc_path = tmp_path / "descs.txt"
    desc_path.write_text("a quiet empty rooftop\nWorker Injury Worker Injury\n")
    result = runner.invoke(
        main,
        ["classify", "--mode-set", str(mode_set_path), "--descriptions", str(desc_path)],
    )
    assert result.exit_code == 0, result.output
    lines = result.output.strip().splitlines()
    assert len(lines) == 2
    assert all(line.split("\t")[0] in ("safe", "UNSAFE") for line in lines)
    # A description sitting on a mode label embeds onto the mode embedding
    # (sim 0), which is below any threshold calibrated on unrelated text.
    assert lines[1].startswith("UNSAFE")


def test_sweep_roc_writes_csv(tmp_path, runner):
    data_dir = tmp_path / "data"
    runner.invoke(
        main,
        ["gen-data", "--n-calibration", "30", "--n-test", "15", "--out-dir", str(data_dir)],
    )
    out = tmp_path / "roc.csv"
    result = runner.invoke(
        main,
        [
            "sweep-roc",
            "--corpus", str(data_dir / "calibration.json"),
            "--modes", str(data_dir / "modes.json"),
            "--safe-test", str(data_dir / "safe_test.json"),
            "--unsafe-test", str(data_dir / "unsafe_test.json"),
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "AUROC=" in result.output
    with open(out) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["alpha", "fpr", "tpr"]
    assert len(rows) == 51  # header + default grid


@pytest.fixture
def scene_files(tmp_path):
    scene = tmp_path / "scene.json"
    _write_json(
        scene,
        {
            "bounds": {"min": [-10, -10, 0], "max": [10, 10, 10]},
            "collision_radius_m": 1.0,
            "concepts": [{"label": "pole", "position": [2, 0, 1]}],
        },
    )
    goals = tmp_path / "goals.json"
    _write_json(
        goals,
        {
            "strategy": "land",
            "reach_radius_m": 1.0,
            "points": [{"world": [6, 0, 1]}],
        },
    )
    config = tmp_path / "config.json"
    _write_json(config, {"start": [0, 0, 1], "planner": {"max_iterations": 2000}})
    return scene, goals, config


def test_plan_command(tmp_path, runner, scene_files):
    scene, goals, config = scene_files
    out = tmp_path / "plan.json"
    result = runner.invoke(
        main,
        [
            "plan",
            "--scene", str(scene),
            "--goals", str(goals),
            "--config", str(config),
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["plan"]["strategy"] == "land"
    assert doc["plan"]["objective"] <= 0.0


def test_plan_command_exits_nonzero_without_plan(tmp_path, runner):
    scene = tmp_path / "scene.json"
    # Goal pinned inside a concept's collision radius: unreachable.
    _write_json(
        scene,
        {
            "bounds": {"min": [-10, -10, 0], "max": [10, 10, 10]},
            "collision_radius_m": 2.0,
            "concepts": [{"label": "pole", "position": [6, 0, 1]}],
        },
    )
    goals = tmp_path / "goals.json"
    _write_json(
        goals,
        {"strategy": "land", "reach_radius_m": 1.0, "points": [{"world": [6, 0, 1]}]},
    )
    config = tmp_path / "config.json"
    _write_json(config, {"start": [0, 0, 1], "planner": {"max_iterations": 100}})
    out = tmp_path / "plan.json"
    result = runner.invoke(
        main,
        [
            "plan",
            "--scene", str(scene),
            "--goals", str(goals),
            "--config", str(config),
            "--out", str(out),
        ],
    )
    assert result.exit_code == 1
    assert "no plan" in result.output


def test_simulate_command(tmp_path, runner, scene_files):
    scene, goals, config = scene_files
    out = tmp_path / "trace.json"
    result = runner.invoke(
        main,
        [
            "simulate",
            "--scene", str(scene),
            "--goals", str(goals),
            "--config", str(config),
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["reached"] is True
    assert doc["worst_base_cost"] <= 0.0
    assert len(doc["states"]) == len(doc["controls"]) + 1


def test_simulate_dynamic_records_replan_events(tmp_path, runner):
    scene = tmp_path / "scene.json"
    _write_json(
        scene,
        {
            "bounds": {"min": [-10, -10, 0], "max": [10, 10, 10]},
            "collision_radius_m": 1.0,
            "concepts": [
                {"label": "cart", "position": [2, 5, 1], "velocity": [0, -0.2, 0]}
            ],
        },
    )
    goals = tmp_path / "goals.json"
    _write_json(
        goals,
        {"strategy": "land", "reach_radius_m": 1.0, "points": [{"world": [6, 0, 1]}]},
    )
    config = tmp_path / "config.json"
    _write_json(config, {"start": [0, 0, 1]})
    out = tmp_path / "trace.json"
    result = runner.invoke(
        main,
        [
            "simulate",
            "--scene", str(scene),
            "--goals", str(goals),
            "--config", str(config),
            "--dynamic",
            "--out", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    assert doc["reached"] is True
    assert doc["replan_events"][0]["trigger"] == "initial"


def test_benchmark_command_single_method(tmp_path, runner):
    out = tmp_path / "rates.csv"
    result = runner.invoke(
        main, ["benchmark", "--method", "no-semantic", "--n-runs", "3", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    with open(out) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["method", "safe", "unsafe", "noplan"]
    assert rows[1][0] == "no-semantic"


def test_benchmark_command_all_methods_suffixes_files(tmp_path, runner):
    out = tmp_path / "rates.csv"
    result = runner.invoke(main, ["benchmark", "--n-runs", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    for method in ("semantic", "no-semantic", "blanket"):
        assert (tmp_path / f"rates-{method}.csv").exists()
