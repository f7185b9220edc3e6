#!/usr/bin/env python3
"""シナリオランナー CLI のテスト（小さな設定を tmp_path に書いて実行）"""

import csv
import json
import sys

import pytest

from flocking_lab.cli import main
from flocking_lab.config import EXIT_BRACKET_ERROR, EXIT_CONFIG_ERROR, EXIT_OK


def scenario_1d(**overrides) -> dict:
    config = {
        "model": "cs",
        "dim": 1,
        "kernel": {"family": "exponential", "params": {"length_scale": 1.0}},
        "particles": 50,
        "init": {
            "density": {"name": "gaussian_bump", "mass": 1.0, "sigma": 0.5},
            "velocity": {"name": "bump_compression", "amplitude": 0.1, "width": 1.0},
        },
        "time": {"t_end": 1.0, "output_interval": 0.5},
    }
    config.update(overrides)
    return config


def write_config(tmp_path, config: dict, name: str = "scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def run_cli(*args) -> int:
    return main([*map(str, args), "--quiet"])


def test_run_writes_all_artifacts(tmp_path):
    config = write_config(tmp_path, scenario_1d())
    out = tmp_path / "run"
    assert run_cli("run", "--config", config, "--out", out) == EXIT_OK

    for name in ("config.json", "verdict.json", "diagnostics.csv", "summary.csv"):
        assert (out / name).exists(), name
    assert sorted(p.name for p in (out / "snapshots").iterdir()) == [
        "snapshot_0000.csv",
        "snapshot_0001.csv",
        "snapshot_0002.csv",
    ]
    verdict = json.loads((out / "verdict.json").read_text(encoding="utf-8"))
    assert verdict["verdict"] == "SubCritical"
    assert verdict["outcome"]["kind"] == "Completed"
    assert json.loads((out / "config.json").read_text(encoding="utf-8"))["particles"] == 50


def test_reruns_are_bitwise_identical(tmp_path):
    config = write_config(tmp_path, scenario_1d())
    assert run_cli("run", "--config", config, "--out", tmp_path / "a") == EXIT_OK
    assert run_cli("run", "--config", config, "--out", tmp_path / "b") == EXIT_OK
    for name in ("diagnostics.csv", "snapshots/snapshot_0002.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_2d_run_writes_checkpoints(tmp_path):
    config = write_config(
        tmp_path,
        {
            "model": "cs",
            "dim": 2,
            "kernel": {"family": "exponential", "params": {"length_scale": 10.0}},
            "domain": {"L": 16.0, "n": 32},
            "init": {
                "density": {"name": "gaussian_bump", "sigma": 0.7},
                "velocity": {"name": "rigid_rotation", "omega": 0.1, "taper": [1.0, 1.8]},
            },
            "time": {"t_end": 0.5, "output_interval": 0.25},
        },
    )
    out = tmp_path / "run2d"
    assert run_cli("run", "--config", config, "--out", out) == EXIT_OK
    assert len(list((out / "checkpoints").glob("checkpoint_*.flck"))) == 3
    with (out / "summary.csv").open(encoding="utf-8", newline="") as f:
        quantities = [row["quantity"] for row in csv.DictReader(f)]
    assert quantities == ["V", "max_eta_S", "max_abs_omega", "max_abs_div"]


def test_config_errors_exit_with_code_1(tmp_path):
    assert run_cli("run", "--config", tmp_path / "missing.json") == EXIT_CONFIG_ERROR
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    assert run_cli("run", "--config", broken) == EXIT_CONFIG_ERROR
    no_particles = scenario_1d()
    del no_particles["particles"]
    assert run_cli("run", "--config", write_config(tmp_path, no_particles)) == EXIT_CONFIG_ERROR
    bad_grid = scenario_1d(dim=2, domain={"L": 8.0, "n": 30})
    assert run_cli("run", "--config", write_config(tmp_path, bad_grid, "grid.json")) == EXIT_CONFIG_ERROR
    assert run_cli("bisect", "--config", write_config(tmp_path, scenario_1d(), "plain.json")) == EXIT_CONFIG_ERROR


def test_bisect_finds_the_all_to_all_threshold(tmp_path):
    config = scenario_1d(
        kernel={"family": "power_law", "params": {"beta": 0.0}},
        particles=20,
        init={
            "density": {"name": "gaussian_bump", "sigma": 0.5},
            "velocity": {"name": "linear_compression", "delta": 1.0},
        },
        time={"t_end": 20.0},
        bisect={"a_lo": 0.5, "a_hi": 1.5, "tol": 0.01},
    )
    out = tmp_path / "bisect"
    assert run_cli("bisect", "--config", write_config(tmp_path, config), "--out", out) == EXIT_OK
    report = json.loads((out / "bisect.json").read_text(encoding="utf-8"))
    assert abs(report["a_star"] - 1.0) <= 0.005
    assert report["a_c"] == pytest.approx(1.0, rel=1e-3)
    runs = (out / "bisect_runs.csv").read_text(encoding="utf-8").splitlines()
    assert len(runs) == 1 + report["iterations"] + 2


def test_bisect_with_invalid_bracket_exits_with_code_2(tmp_path):
    config = scenario_1d(bisect={"a_lo": 2.0, "a_hi": 3.0, "tol": 0.01}, time={"t_end": 5.0})
    out = tmp_path / "bracket"
    assert run_cli("bisect", "--config", write_config(tmp_path, config), "--out", out) == EXIT_BRACKET_ERROR


def test_bisect_with_reversed_bracket_exits_with_code_2(tmp_path):
    config = scenario_1d(bisect={"a_lo": 1.5, "a_hi": 0.5, "tol": 0.01})
    out = tmp_path / "reversed"
    assert run_cli("bisect", "--config", write_config(tmp_path, config), "--out", out) == EXIT_BRACKET_ERROR
    assert run_cli("run", "--config", write_config(tmp_path, config, "run.json"), "--out", out) == EXIT_BRACKET_ERROR


def test_scan_writes_phase_diagram(tmp_path):
    config = scenario_1d(
        time={"t_end": 5.0},
        scan={"p1": {"path": "init.velocity.amplitude", "values": [0.1, 2.0]}},
    )
    out = tmp_path / "scan"
    assert run_cli("scan", "--config", write_config(tmp_path, config), "--out", out) == EXIT_OK
    with (out / "scan.csv").open(encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    assert [(r["verdict"], r["outcome"]) for r in rows] == [("SubCritical", "Completed"), ("SuperCritical", "BlewUp")]
    assert rows[0]["t_blow"] == "" and float(rows[1]["t_blow"]) > 0


def test_empty_scan_grid_writes_header_only(tmp_path):
    config = scenario_1d(scan={"p1": {"path": "init.velocity.amplitude", "values": []}})
    out = tmp_path / "empty"
    assert run_cli("scan", "--config", write_config(tmp_path, config), "--out", out) == EXIT_OK
    assert (out / "scan.csv").read_text(encoding="utf-8").splitlines() == ["p1,p2,verdict,outcome,t_blow"]


def test_report_rewrites_summary(tmp_path, capsys):
    config = write_config(tmp_path, scenario_1d())
    out = tmp_path / "run"
    assert run_cli("run", "--config", config, "--out", out) == EXIT_OK
    (out / "summary.csv").unlink()
    capsys.readouterr()
    assert run_cli("report", "--out", out) == EXIT_OK
    assert (out / "summary.csv").exists()
    assert capsys.readouterr().out.startswith("V: ")
    assert run_cli("report", "--out", tmp_path / "nowhere") == EXIT_CONFIG_ERROR


def test_agents_subcommand(tmp_path):
    config = scenario_1d(time={"t_end": 0.5, "dt": 0.01, "output_interval": 0.1})
    out = tmp_path / "agents"
    assert run_cli("agents", "--config", write_config(tmp_path, config), "--out", out) == EXIT_OK
    lines = (out / "trajectory.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,i,x,v"
    assert len(lines) == 1 + 50 * 6
    assert (out / "summary.csv").exists() and (out / "diagnostics.csv").exists()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
