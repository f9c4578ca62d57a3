import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from divshare.cli import cli_main

CONFIGS = Path(__file__).resolve().parents[1] / "demos" / "configs"


def test_run_writes_metrics(tmp_path):
    assert cli_main(["run", "--config", str(CONFIGS / "quadratic_sync.json"), "--out", str(tmp_path), "--trace"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert list(rows[0]) == ["time", "metric", "value", "protocol", "seed"]
    loss = [float(r["value"]) for r in rows if r["metric"] == "train_loss"]
    assert len(loss) > 5 and all(b < a for a, b in zip(loss, loss[1:]))
    assert (tmp_path / "trace.ndjson").stat().st_size > 0


def test_snapshot_override(tmp_path):
    cli_main(["run", "--config", str(CONFIGS / "quadratic_sync.json"), "--out", str(tmp_path), "--snapshots", "20"])
    times = {float(r["time"]) for r in csv.DictReader(open(tmp_path / "metrics.csv"))}
    assert times == {0.0, 20.0, 40.0, 60.0}


def test_theory_report(tmp_path, capsys):
    assert cli_main(["theory", "--config", str(CONFIGS / "n60_j6.json"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "theory.json").read_text())
    assert rep["assumption4_holds"] is True and rep["n"] == 60
    assert "alpha1" in capsys.readouterr().out


def test_sweep_command(tmp_path):
    cfg = json.loads((CONFIGS / "quadratic_sync.json").read_text())
    cfg.update(rounds=5, sweep_grid={"omega": [1.0, 0.5]})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert cli_main(["sweep", "--config", str(path), "--out", str(tmp_path), "--replicates", "2"]) == 0
    assert len(list(csv.DictReader(open(tmp_path / "sweep.csv")))) == 4


def test_usage_errors(tmp_path, capsys):
    assert cli_main(["bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert cli_main(["run"]) == 2
    assert cli_main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"omega": 0}))
    assert cli_main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "omega" in capsys.readouterr().err


def test_runtime_error_exit_code(tmp_path, capsys):
    path = tmp_path / "div.json"
    path.write_text(json.dumps({"n": 4, "j_fanout": 2, "omega": 0.5, "eta": 1e160, "rounds": 3,
                                "dataset": {"kind": "quadratic", "m": 5, "d": 8}}))
    assert cli_main(["run", "--config", str(path), "--out", str(tmp_path)]) == 1
    assert "DivergenceError" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "divshare", "theory", "--config", str(CONFIGS / "n60_j6.json"),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "T_hat" in proc.stdout
