import csv
import json
import os

import numpy as np
import pytest

from cpsrecover import cli
from cpsrecover import config as cfgmod


def write_cfg(tmp_path, **overrides):
    cfg = cfgmod.build_case_study(**overrides)
    path = tmp_path / "scenario.json"
    cfgmod.save_config(cfg, path)
    return str(path)


def test_run_happy_path(tmp_path, capsys):
    path = write_cfg(tmp_path, out_dir=str(tmp_path))
    code = cli.main(["run", path, "--seed", "42"])
    assert code == 0
    for sid in cfgmod.SUBSYSTEMS:
        assert (tmp_path / f"{sid}.csv").exists()


def test_run_invalid_config_exit_1(tmp_path, capsys):
    path = write_cfg(tmp_path, checkpoint_freq_hz=3.0)
    code = cli.main(["run", path])
    assert code == 1
    assert "checkpoint period" in capsys.readouterr().err


def test_run_missing_file_exit_1(tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 1


def test_run_safe_stop_exit_3(tmp_path):
    # a 1.75 s anomaly with t_max=0.1 forces a safe stop mid-run
    path = write_cfg(
        tmp_path, out_dir=str(tmp_path), t_max=0.1,
        anomalies={
            "outer": [{"t_start": 3.25, "t_end": 5.0, "y_a": [5.0, 5.0, 0.0],
                       "gamma": [1, 1, 0]}],
            "inner-1": [], "inner-2": []})
    code = cli.main(["run", path])
    assert code == 3
    with open(tmp_path / "outer.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) < 100                       # truncated at the stop
    assert rows[-1]["safe_stop"] == "1"
    assert float(rows[-1]["t"]) > 3.5


def test_print_default(capsys):
    code = cli.main(["run", "--print-default"])
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == cfgmod.default_config()


def test_bounds_subcommand(tmp_path):
    cfg = cfgmod.build_case_study(out_dir=str(tmp_path))
    cfg["bounds"] = {
        "outer": {"A_bar": [[1.0, 0.0, 0.2], [0.0, 1.0, 0.2], [0.0, 0.0, 1.0]],
                  "eps_delta": [0.3, 0.3, 0.3], "eps_omega": [0.6, 0.6, 0.6],
                  "phi_bar": [0.1, 0.1, 0.0], "E_max": [50.0, 50.0, 50.0]}}
    path = tmp_path / "scenario.json"
    cfgmod.save_config(cfg, path)
    assert cli.main(["bounds", str(path)]) == 0
    report = json.loads((tmp_path / "bounds.json").read_text())
    entry = report["outer"]
    assert entry["max_tolerable_duration"] > 0
    assert np.all(np.asarray(entry["bound_at_t_max"]) <= 50.0)
    assert np.any(np.asarray(entry["bound_past_t_max"]) > 50.0)
    assert len(entry["ee_bound"]) == 3


def test_bounds_without_params_fails(tmp_path):
    path = write_cfg(tmp_path, out_dir=str(tmp_path))
    assert cli.main(["bounds", path]) == 1


def test_checkpoints_subcommand(tmp_path):
    path = write_cfg(tmp_path, out_dir=str(tmp_path))
    assert cli.main(["checkpoints", path]) == 0
    with open(tmp_path / "checkpoints.csv") as fh:
        rows = list(csv.DictReader(fh))
    created = {(r["subsystem"], float(r["t"])) for r in rows
               if r["event"] == "created"}
    used = [r for r in rows if r["event"] == "used"]
    assert used, "case study must exercise recovery"
    for r in used:
        ckpt_t = float(r["checkpoint_t"])
        assert (r["subsystem"], ckpt_t) in created
        # the used checkpoint predates the detection window
        assert float(r["t"]) - ckpt_t > 0.25


def test_compare_subcommand(tmp_path):
    path = write_cfg(tmp_path, out_dir=str(tmp_path))
    assert cli.main(["compare", path]) == 0
    with open(tmp_path / "outer_gap.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    assert "gap_0" in rows[0] and "gap_bound_0" in rows[0]


def test_plant_mode_override(tmp_path):
    path = write_cfg(tmp_path, out_dir=str(tmp_path))
    assert cli.main(["run", path, "--plant-mode", "coupled"]) == 0
