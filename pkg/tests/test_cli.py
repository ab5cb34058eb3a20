import json
import subprocess
import sys

import pytest

from linucb_lab.cli import main


def test_simulate_and_diagnose(tmp_path, capsys):
    csv_path, rec = tmp_path / "s.csv", tmp_path / "r.json"
    assert main(["simulate", "--d", "3", "--horizon", "2000", "--out", str(csv_path), "--record", str(rec)]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0].count(",") == 11
    assert main(["diagnose", "--record", str(rec)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["d"] == 3 and doc["T"] == 2000 and "t1" in doc


def test_montecarlo_outputs(tmp_path):
    out, clt = tmp_path / "m.json", tmp_path / "c.csv"
    args = ["montecarlo", "--trials", "25", "--horizon", "1500", "--seed", "4", "--out", str(out)]
    assert main(args + ["--clt-csv", str(clt)]) == 0
    doc = json.loads(out.read_text())
    assert doc["n_trials"] == 25 and len(doc["normality_p"]) == 1
    assert len(clt.read_text().splitlines()) == 26


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("d: 2\nhorizon: 800\ntrials: 5\nsigma: 0.5\nbeta: {mode: constant, value: 4.0}\n")
    assert main(["coverage", "--config", str(cfg), "--trials", "6"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["n_trials"] == 6 and doc["beta"] == 4.0
    assert main(["coverage", "--config", str(cfg), "--beta-mode", "theory"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["n_trials"] == 5 and doc["beta"] > 1.0


def test_error_line_and_exit_code(capsys):
    assert main(["simulate", "--d", "2", "--theta-star", "2,0"]) != 0
    err = capsys.readouterr().err.strip().splitlines()[-1]
    doc = json.loads(err)
    assert doc["error"] == "ConfigError"


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "linucb_lab.cli", "simulate", "--horizon", "50", "--stride", "2"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.splitlines()[0].startswith("t,lambda_min")
    bad = subprocess.run([sys.executable, "-m", "linucb_lab.cli", "montecarlo", "--trials", "0"],
                         capture_output=True, text=True)
    assert bad.returncode != 0 and json.loads(bad.stderr.strip())["error"]
