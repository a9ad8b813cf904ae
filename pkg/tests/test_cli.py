import json
import subprocess
import sys

import numpy as np
import pytest

from ctin.cli import main
from ctin.dataio import load_dataset
from ctin.metrics import MetricReport

MODEL = {"window_len": 8, "model_dim": 8, "heads": 2, "decoder_layers": 1, "ffn_dim": 16}
TRAIN = {"batch_size": 8, "max_epochs": 2, "window_step": 20, "windows_per_epoch": 16, "val_windows": 8}
EVAL = {"window_step": 4, "t_i": 0.5}


def _json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = _json(root / "spec.json", {"corpus": {"n_sequences": 10, "duration": 2.0, "seed": 1}})
    assert main(["gen", "--spec", spec, "--out", str(root / "data")]) == 0
    return root


def test_gen_writes_sequences(workspace):
    data = load_dataset(workspace / "data")
    assert [n for n, _ in data] == [f"seq_{i:03d}" for i in range(10)]
    assert all(len(s) == 400 for _, s in data)


@pytest.mark.parametrize("doc", [{"trajectory_kind": "line", "duration": 1.0}, [{"trajectory_kind": "circle", "duration": 1.0}] * 2])
def test_gen_single_and_list_specs(tmp_path, doc):
    assert main(["gen", "--spec", _json(tmp_path / "s.json", doc), "--out", str(tmp_path / "d")]) == 0
    assert len(load_dataset(tmp_path / "d")) == (len(doc) if isinstance(doc, list) else 1)


def test_train_eval_baseline_report(workspace):
    w = workspace
    mcfg, tcfg, ecfg = _json(w / "m.json", MODEL), _json(w / "t.json", TRAIN), _json(w / "e.json", EVAL)
    ckpt = w / "ckpt.json"
    assert main(["train", "--data", str(w / "data"), "--model-config", mcfg, "--train-config", tcfg, "--out", str(ckpt)]) == 0
    doc = json.loads(ckpt.read_text())
    assert doc["model_config"]["model_dim"] == 8 and len(doc["split"]["test"]) == 1
    history = json.loads((w / "ckpt.history.json").read_text())
    assert len(history["val_loss"]) == 2

    assert main(["eval", "--ckpt", str(ckpt), "--data", str(w / "data"), "--out", str(w / "ctin.json"),
                 "--eval-config", ecfg, "--cdf-dir", str(w / "cdf")]) == 0
    rep = MetricReport.load(w / "ctin.json")
    assert [s.name for s in rep.sequences] == doc["split"]["test"]
    assert (w / "cdf" / "ctin_ate_cdf.csv").exists()

    for method in ("sins", "pdr"):
        assert main(["baseline", "--method", method, "--data", str(w / "data"), "--out", str(w / f"{method}.json"),
                     "--eval-config", ecfg, "--split", "all", "--gyro-bias", "0", "0", "0.02"]) == 0
        assert len(MetricReport.load(w / f"{method}.json").sequences) == 10

    out = w / "table.md"
    assert main(["report", "--inputs", str(w / "ctin.json"), str(w / "sins.json"), str(w / "pdr.json"), "--out", str(out)]) == 0
    assert "ate_improvement_pct" in out.read_text()
    assert out.with_suffix(".csv").read_text().startswith("dataset,method,ate")


def test_config_errors_exit_2(workspace, tmp_path, capsys):
    bad = _json(tmp_path / "bad.json", {"lr": -1})
    assert main(["train", "--data", str(workspace / "data"), "--train-config", bad, "--out", str(tmp_path / "c.json")]) == 2
    assert main(["gen", "--spec", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["gen", "--spec", str(tmp_path / "broken.json"), "--out", str(tmp_path)]) == 2
    assert main(["gen", "--spec", _json(tmp_path / "c.json", {"corpus": {"n_sequences": 2, "colour": 1}}), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_data_errors_exit_3(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "c.json")]) == 3
    assert main(["report", "--inputs", str(tmp_path / "missing.json"), "--out", str(tmp_path / "t.md")]) == 3
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "x.csv").write_text("t,gx\n0,1\n")
    assert main(["baseline", "--method", "sins", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "r.json"), "--split", "all"]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_4(workspace, tmp_path):
    tcfg = _json(tmp_path / "t.json", {**TRAIN, "lr": 1e10})
    mcfg = _json(tmp_path / "m.json", MODEL)
    assert main(["train", "--data", str(workspace / "data"), "--model-config", mcfg, "--train-config", tcfg,
                 "--out", str(tmp_path / "c.json")]) == 4


def test_gradcheck_exit_code(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 34 and all(line.startswith("PASS") for line in lines)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ctin", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen", "train", "eval", "baseline", "gradcheck", "report"):
        assert cmd in res.stdout
