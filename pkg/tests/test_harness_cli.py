import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from robeval.cli import main
from robeval.data import load_tensor, write_idx
from robeval.errors import ConfigError, InputError
from robeval.harness import (
    RunConfig,
    compare_pgd_apgd,
    gradient_masking_diagnostic,
    recompute_accuracies,
    zero_gradient_fraction,
)
from robeval.nn import mlp, save_weights
from robeval.threat import ThreatModel


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny IDX dataset of 10x10 images plus a matching 5-class model."""
    root = tmp_path_factory.mktemp("ws")
    net = mlp(100, 5, hidden=(16,), seed=9)
    imgs = np.random.default_rng(2).integers(0, 256, size=(24, 10, 10), dtype=np.uint8)
    labels = net.predict(imgs.reshape(24, -1) / 255.0).astype(np.uint8)
    labels[0] = (labels[0] + 1) % 5
    write_idx(root / "img.idx", imgs)
    write_idx(root / "lab.idx", labels)
    save_weights(net, root / "net.aafw")
    fast = {"apgd_iter": 8, "fab_iter": 8, "square_queries": 60, "n_target_classes": 2, "chunk_size": 8,
            "eot_samples": 2, "avg_samples": 2, "rand_square_queries": 20}
    (root / "fast.json").write_text(json.dumps(fast))
    return root


def _args(ws, *extra, out="out"):
    return ["--images", str(ws / "img.idx"), "--labels", str(ws / "lab.idx"), "--model", str(ws / "net.aafw"),
            "--config", str(ws / "fast.json"), "--out", str(ws / out), *extra]


def test_config_precedence_and_validation(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"eps": 0.1, "norm": "l2", "mode": "rand"}))
    cfg = RunConfig.load(path, {"eps": 0.2, "seed": None})
    assert cfg.eps == 0.2 and cfg.norm == "L2" and cfg.mode == "randomized" and cfg.seed == 0
    for bad in ({"epsilon": 1}, {"eps": -1}, {"norm": "l1"}, {"mode": "fast"}, {"scales": [0.0]}, {"subset": 0}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        RunConfig.load(path)
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")
    with pytest.raises(ConfigError, match="model"):
        RunConfig().require("model")


def test_evaluate_writes_consistent_reports(workspace, capsys):
    assert main(["evaluate", *_args(workspace, "--eps", "0.05"), "--subset", "20"]) == 0
    out = workspace / "out"
    assert "combined" in capsys.readouterr().out
    doc = json.loads((out / "report.json").read_text())
    assert doc["eps"] == 0.05 and doc["n_points"] == 20
    clean, per, combined = recompute_accuracies(doc)
    assert (clean, per, combined) == (doc["clean_accuracy"], doc["robust_accuracy"], doc["combined_robust_accuracy"])
    rows = {r["name"]: float(r["accuracy"]) for r in csv.DictReader(open(out / "report.csv"))}
    assert rows["combined"] == combined and rows["clean"] == clean
    assert load_tensor(out / "adversarial.aatn").shape == (20, 100)
    assert set(json.loads((out / "timing.json").read_text())) == set(doc["attacks"])


def test_attack_and_randomized_mode(workspace):
    assert main(["attack", *_args(workspace, out="a"), "--attack", "square", "--eps", "0.05"]) == 0
    assert json.loads((workspace / "a" / "report.json").read_text())["attacks"] == ["square"]
    assert main(["evaluate", *_args(workspace, out="r"), "--mode", "rand", "--subset", "6"]) == 0
    doc = json.loads((workspace / "r" / "report.json").read_text())
    assert doc["mode"] == "randomized" and doc["combined_robust_accuracy_std"] == 0


def test_exit_codes(workspace, tmp_path, capsys):
    assert main(["evaluate", "--images", str(workspace / "img.idx"), "--labels", str(workspace / "lab.idx")]) == 2
    assert main(["evaluate", *_args(workspace), "--model", str(tmp_path / "none.aafw")]) == 3
    (tmp_path / "junk.aafw").write_bytes(b"garbage")
    assert main(["evaluate", *_args(workspace), "--model", str(tmp_path / "junk.aafw")]) == 3
    save_weights(mlp(100, 3, hidden=(4,)), tmp_path / "k3.aafw")
    assert main(["evaluate", *_args(workspace), "--model", str(tmp_path / "k3.aafw")]) == 3
    save_weights(mlp(64, 5, hidden=(4,)), tmp_path / "d64.aafw")
    assert main(["evaluate", *_args(workspace), "--model", str(tmp_path / "d64.aafw")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["evaluate", *_args(workspace), "--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err


def test_gradcheck_and_train(workspace, capsys):
    assert main(["gradcheck", *_args(workspace)]) == 0
    assert "ce: max relative error" in capsys.readouterr().out
    assert main(["train", *_args(workspace, out="t"), "--epochs", "1"]) == 0
    assert (workspace / "t" / "model.aafw").is_file()


def test_compare_and_maskdiag_commands(workspace, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"budgets": [5, 10]}))
    args = ["--images", str(workspace / "img.idx"), "--labels", str(workspace / "lab.idx"),
            "--model", str(workspace / "net.aafw"), "--config", str(cfg), "--eps", "0.05"]
    assert main(["compare", *args, "--out", str(tmp_path / "cmp")]) == 0
    names = sorted(p.name for p in (tmp_path / "cmp").iterdir())
    assert "summary.csv" in names and "curve_ce_apgd_adaptive_10.csv" in names
    assert len([n for n in names if n.startswith("curve_")]) == 8
    assert main(["maskdiag", *args, "--scales", "1,100", "--out", str(tmp_path / "md")]) == 0
    lines = (tmp_path / "md" / "maskdiag.csv").read_text().splitlines()
    assert len(lines) == 3


def test_compare_rows_and_curves(rng):
    net = mlp(16, 4, hidden=(12,), seed=0)
    x = rng.uniform(size=(30, 16))
    y = net.predict(x)
    res = compare_pgd_apgd(net, x, y, ThreatModel("Linf", 0.05), budgets=(10,), losses=("ce", "cw"), baseline_iter=10)
    assert len(res["rows"]) == 2 * 7
    for best_loss, robust in res["curves"].values():
        assert np.all(np.diff(best_loss) >= 0) and np.all(np.diff(robust) <= 0)
        assert robust[0] == 1.0 and len(best_loss) == 11
    for loss in ("ce", "cw"):
        assert sum(r["best_overall"] for r in res["rows"] if r["loss"] == loss) == 1


def test_masking_diagnostic_rows(rng):
    net = mlp(16, 4, hidden=(12,), seed=0)
    x = rng.uniform(size=(20, 16))
    y = net.predict(x)
    rows = gradient_masking_diagnostic(net, x, y, ThreatModel("Linf", 0.05), scales=(1.0, 1e4), n_iter=10)
    assert rows[1]["zero_gradient_fraction"] >= rows[0]["zero_gradient_fraction"]
    np.testing.assert_array_equal(rows[0]["dlr_success"], rows[1]["dlr_success"])
    with pytest.raises(InputError):
        zero_gradient_fraction(net, x[:0], y[:0])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "robeval", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "evaluate" in res.stdout
