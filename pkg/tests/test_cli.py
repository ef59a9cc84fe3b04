import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from scaleformer.cli import main, resolve_configs
from scaleformer.fileio import read_pgm, write_pgm
from scaleformer.errors import ConfigError

TINY = {
    "model": {
        "input_size": 16, "stem_channels": 4, "channels": [4, 8, 8], "blocks": [1, 1, 1], "intra_stages": [2, 3, 4],
        "intra_heads": 2, "intra_mlp_ratio": 2.0, "inter_stages": [2, 3, 4], "inter_channels": 4, "inter_heads": 2,
        "inter_mlp_ratio": 2.0,
    },
    "train": {"num_samples": 4, "batch_size": 2, "epochs": 2},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def tree(path):
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


# config resolution -------------------------------------------------------------------------------


def test_precedence_flags_over_file_over_defaults(config):
    m, t = resolve_configs(config, [], {}, env={})
    assert t.epochs == 2 and t.learning_rate == 0.01 and m.input_size == 16
    m, t = resolve_configs(config, ["train.epochs=5", "model.use_inter=false"], {}, env={})
    assert t.epochs == 5 and m.use_inter is False
    m, t = resolve_configs(config, ["train.epochs=5"], {"train.epochs": 7}, env={})
    assert t.epochs == 7


def test_seed_env_and_flag(config):
    m, t = resolve_configs(config, [], {}, env={"SCALEFORMER_SEED": "11"})
    assert m.seed == t.seed == 11
    m, t = resolve_configs(config, [], {"seed": 3}, env={"SCALEFORMER_SEED": "11"})
    assert m.seed == t.seed == 3


def test_presets():
    _, t = resolve_configs(None, [], {"train_preset": "acdc"}, env={})
    assert (t.batch_size, t.learning_rate, t.epochs, t.optimizer) == (8, 3e-3, 200, "sgd")
    with pytest.raises(ConfigError):
        resolve_configs(None, [], {"train_preset": "kvasir"}, env={})


@pytest.mark.parametrize("item", ["train.bogus=1", "nosuch=1", "other.epochs=1", "epochs"])
def test_bad_set(item):
    with pytest.raises(ConfigError):
        resolve_configs(None, [item], {}, env={})


# subcommands ----------------------------------------------------------------------------------------


def test_gen_data_deterministic_and_p5(tmp_path):
    for d in ("a", "b"):
        assert main(["--quiet", "gen-data", "--seed", "3", "--n", "3", "--size", "16", "--out", str(tmp_path / d)]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    raw = (tmp_path / "a" / "images" / "0000.pgm").read_bytes()
    assert raw.startswith(b"P5\n16 16\n255\n") and len(raw) == len(b"P5\n16 16\n255\n") + 256
    mask = read_pgm(tmp_path / "a" / "masks" / "0000.pgm")
    assert set(np.unique(mask)) == {0, 1, 2}


def test_train_eval_export(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", config, "--out", str(out), "--checkpoint-every", "1"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("epoch")]
    assert len(lines) == 2 and "loss" in lines[0] and "dsc" in lines[0]
    assert (out / "checkpoints" / "epoch-0001" / "tensors.json").exists()
    rows = list(csv.DictReader((out / "metrics.csv").open()))
    assert [r["epoch"] for r in rows] == ["1", "2"] and list(rows[0]) == ["epoch", "step", "loss", "dsc"]

    data = tmp_path / "data"
    assert main(["--quiet", "gen-data", "--n", "2", "--size", "16", "--out", str(data)]) == 0
    report = tmp_path / "eval.csv"
    assert main(["eval", "--checkpoint", str(out / "final"), "--data", str(data), "--out", str(report),
                 "--hd-percentile", "100"]) == 0
    table = list(csv.DictReader(report.open()))
    assert list(table[0]) == ["sample", "class", "dsc", "iou", "hd", "hd_status"]
    assert len([r for r in table if r["sample"] != "mean"]) == 6
    assert table[-1]["class"] == "foreground"

    stem = tmp_path / "feat"
    assert main(["export-features", "--checkpoint", str(out / "final"), "--image", str(data / "images" / "0000.pgm"),
                 "--stage", "3", "--out", str(stem)]) == 0
    img = read_pgm(stem.with_suffix(".pgm"))
    assert img.shape == (4, 4) and img.min() == 0 and img.max() == 255
    meta = json.loads(stem.with_suffix(".json").read_text())
    assert meta["meta"] == {"kind": "trans", "stage": 3}
    assert meta["tensors"][0]["shape"] == [8, 4, 4]


def test_train_zero_epochs_writes_initial_checkpoint_only(tmp_path, config):
    out = tmp_path / "run"
    assert main(["--quiet", "train", "--config", config, "--out", str(out), "--epochs", "0"]) == 0
    assert sorted(tree(out)) == ["final/tensors.bin", "final/tensors.json"]
    meta = json.loads((out / "final" / "tensors.json").read_text())["meta"]
    assert meta["epoch"] == 0 and meta["step"] == 0


def test_train_twice_identical_bytes(tmp_path, config):
    for d in ("a", "b"):
        assert main(["--quiet", "train", "--config", config, "--out", str(tmp_path / d)]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_resume_continues_step_count(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--quiet", "train", "--config", config, "--out", str(a), "--epochs", "3"]) == 0
    assert main(["--quiet", "train", "--config", config, "--out", str(b), "--epochs", "2"]) == 0
    assert main(["--quiet", "train", "--config", config, "--out", str(b), "--epochs", "3", "--resume", str(b / "final")]) == 0
    meta = json.loads((b / "final" / "tensors.json").read_text())["meta"]
    assert (meta["epoch"], meta["step"]) == (3, 6)
    assert tree(a / "final") == tree(b / "final")


def test_train_on_pgm_dataset(tmp_path, config):
    data = tmp_path / "data"
    assert main(["--quiet", "gen-data", "--n", "2", "--size", "16", "--out", str(data)]) == 0
    assert main(["--quiet", "train", "--config", config, "--out", str(tmp_path / "r"), "--data", str(data), "--epochs", "1"]) == 0


def test_exit_codes(tmp_path, config, capsys):
    assert main(["train", "--config", config, "--out", str(tmp_path / "r"), "--set", "train.momentum=1.5"]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error:")
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "r")]) == 2
    assert main(["bench", "--variants", "local"]) == 2
    assert main(["bench", "--trials", "2"]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path), "--data", str(tmp_path)]) == 1
    # Conflicting model config on resume.
    assert main(["--quiet", "train", "--config", config, "--out", str(tmp_path / "r"), "--epochs", "0"]) == 0
    assert main(["train", "--config", config, "--out", str(tmp_path / "r2"), "--set", "model.num_classes=4",
                 "--resume", str(tmp_path / "r" / "final")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3(tmp_path, config, capsys):
    assert main(["train", "--config", config, "--out", str(tmp_path / "r"), "--lr", "1e30", "--epochs", "3"]) == 3
    assert "non-finite" in capsys.readouterr().err
    assert not (tmp_path / "r" / "final").exists()


def test_bench_reference_shape(tmp_path):
    out, svg = tmp_path / "b.csv", tmp_path / "b.svg"
    assert main(["bench", "--variants", "dualaxis,original", "--sizes", "8", "--trials", "3", "--out", str(out),
                 "--svg", str(svg)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert {r["variant"]: int(r["measured_macs"]) for r in rows} == {"dualaxis": 4608, "original": 32768}
    assert svg.read_bytes().startswith(b"<?xml")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "scaleformer", "bench", "--variants", "dualaxis", "--sizes", "4",
                           "--trials", "3"], capture_output=True, text=True, check=True)
    assert proc.stdout.splitlines()[0].startswith("variant,H,W,C")


def test_pgm_roundtrip(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_pgm(tmp_path / "x.pgm", img)
    assert (tmp_path / "x.pgm").read_bytes()[:11] == b"P5\n4 3\n255\n"
    np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), img)
