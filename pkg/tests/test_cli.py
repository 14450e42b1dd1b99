import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from scsc.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from scsc.pipeline.preprocess import PreprocessConfig, TaperConfig, preprocess
from scsc.pipeline.synthetic import generate


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    syn = generate((16, 16), (3, 3), 2, 4, 4, density=0.02, seed=3, smooth=True)
    data = root / "data"
    data.mkdir()
    for i, x in enumerate(syn.signals):
        np.save(data / f"s{i}.npy", x)
    model = root / "model.bin"
    code = main(["train", str(data), "--out", str(model), "--raw", "--R", "2", "--K", "4",
                 "--filter-size", "3", "--epochs", "1", "--trace", str(root / "trace.csv")])
    assert code == EXIT_OK
    return root, data, model


def test_train_writes_model_and_trace(workspace):
    root, _, model = workspace
    assert model.exists() and (root / "model.bin.json").exists()
    with open(root / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and rows[0].keys() >= {"t", "subObj", "dictObj", "millis"}


@pytest.mark.parametrize("command,extra", [("infer", []), ("denoise", ["--variance", "0.01"]),
                                           ("inpaint", ["--fraction", "0.3"]),
                                           ("eval", ["--task", "inpaint", "--fraction", "0.5"])])
def test_task_commands(workspace, capsys, command, extra):
    root, data, model = workspace
    metrics = root / f"{command}.csv"
    out = root / f"{command}_out"
    code = main([command, str(model), str(data), "--raw", "--metrics", str(metrics),
                 "--out", str(out), "--workers", "2"] + extra)
    assert code == EXIT_OK
    assert "mean: input" in capsys.readouterr().out
    with open(metrics) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["file"] for r in rows] == [f"s{i}.npy" for i in range(4)]
    assert len(list(out.glob("*.npy"))) == 4


def test_inspect_model(workspace, capsys):
    _, _, model = workspace
    assert main(["inspect-model", str(model)]) == EXIT_OK
    meta = json.loads(capsys.readouterr().out)
    assert meta["R"] == 2 and meta["K"] == 4 and meta["feasible"] is True
    assert meta["memory"]["theoreticalCR"] == 4


def test_preprocess_command(workspace, tmp_path):
    _, data, _ = workspace
    out = tmp_path / "pre"
    assert main(["preprocess", str(data), str(out), "--taper-margin", "2"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["files"]) == 4 and manifest["preprocess"]["taper"]["margin"] == 2
    expected = preprocess(np.load(data / "s0.npy"), PreprocessConfig(taper=TaperConfig(2)))
    assert np.array_equal(np.load(out / "s0.npy"), expected)


def _config(data):
    return {"version": 1, "runId": "cli", "outputDir": "results",
            "data": {"train": {"path": str(data), "preprocess": {"standardize": False,
                                                                  "lcn": None, "taper": None}}},
            "model": {"R": 2, "K": 4, "filterExtents": [3, 3], "epochs": 1},
            "tasks": [{"kind": "reconstruct"}]}


def test_run_and_compare(workspace, tmp_path, capsys):
    _, data, _ = workspace
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(_config(data)))
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "b")]) == EXIT_OK
    capsys.readouterr()
    delta = tmp_path / "delta.csv"
    assert main(["compare", str(tmp_path / "a" / "cli"), str(tmp_path / "b" / "cli"),
                 "--out", str(delta)]) == EXIT_OK
    assert "reconstruct" in capsys.readouterr().out
    with open(delta) as fh:
        (row,) = list(csv.DictReader(fh))
    assert float(row["delta"]) == 0.0


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["inpaint", "m.bin", "d", "--fraction", "1.5"]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_data_errors(workspace, tmp_path, capsys):
    _, data, model = workspace
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["infer", str(model), str(empty)]) == EXIT_DATA
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert main(["infer", str(bad), str(data), "--raw"]) == EXIT_DATA
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({**_config(data), "model": {"R": 0}}))
    assert main(["run", str(cfg)]) == EXIT_DATA
    assert "model.R" in capsys.readouterr().err


def test_numerical_failure_exit_code(workspace, tmp_path, capsys):
    _, data, _ = workspace
    config = _config(data)
    config["model"]["admm"] = {"max_iterations": 1, "primal_tolerance": 1e-15,
                               "dual_tolerance": 1e-15, "strict": True}
    cfg = tmp_path / "strict.yaml"
    cfg.write_text(yaml.safe_dump(config))
    assert main(["run", str(cfg), "--output-dir", str(tmp_path)]) == EXIT_NUMERICAL
    assert "did not converge" in capsys.readouterr().err


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "scsc.cli", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "inspect-model" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "scsc.cli"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
