import hashlib
import json

import numpy as np
import pytest

from harlstm import __version__, metrics
from harlstm.cli import main
from harlstm.kvfile import read_kv

from conftest import write_config

SMALL = dict(architecture="1x1", hidden_width=4, epochs=2, batch_size=12, dropout_keep_prob=1.0)


@pytest.fixture
def run_cfg(tmp_path, uci_root):
    def make(name="exp.cfg", **kw):
        return write_config(tmp_path / name, dataset="uci", data_path=str(uci_root), **{**SMALL, **kw})
    return make


def read_tsv(path):
    lines = path.read_text().splitlines()
    head = lines[0].split("\t")
    return [dict(zip(head, line.split("\t"))) for line in lines[1:]]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_zero_epochs_writes_empty_table(tmp_path, run_cfg):
    out = tmp_path / "run"
    assert main(["train", str(run_cfg(epochs=0)), "--output-dir", str(out)]) == 0
    assert (out / "epochs.tsv").read_text().splitlines() == [
        "epoch\ttrain_loss\ttrain_accuracy\ttest_accuracy\ttrain_f1\ttest_f1"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["evaluations"] == 0 and summary["best"] is None
    assert (out / "checkpoint_final.bin").exists()


def test_identical_runs_are_byte_identical(tmp_path, run_cfg):
    cfg = str(run_cfg(epochs=1))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", cfg, "--output-dir", str(a)]) == 0
    assert main(["--output-dir", str(b), "train", cfg]) == 0
    for name in ("epochs.tsv", "checkpoint_final.bin", "checkpoint_best.bin", "confusion.tsv"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    # config.txt records the output_dir override, so it is the only text file that differs
    assert read_kv(a / "config.txt")["output_dir"] == str(a)


def test_confusion_rows_match_test_supports(tmp_path, run_cfg, uci_root):
    out = tmp_path / "run"
    assert main(["train", str(run_cfg(epochs=1, architecture="2x2", hidden_width=28)), "--output-dir", str(out)]) == 0
    cm = metrics.from_delimited((out / "confusion.tsv").read_text())
    labels = np.loadtxt(uci_root / "test" / "y_test.txt", dtype=int)
    assert cm.counts.shape == (6, 6)
    np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(labels - 1, minlength=6))


def test_summary_and_trend(tmp_path, run_cfg):
    out = tmp_path / "run"
    assert main(["train", str(run_cfg(epochs=3, eval_every=2)), "--output-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    trend = read_tsv(out / "trend.tsv")
    assert len(trend) == summary["evaluations"] == len(read_tsv(out / "epochs.tsv"))
    assert [int(r["epoch"]) for r in trend] == [2, 3]
    cm = metrics.from_delimited((out / "confusion.tsv").read_text())
    assert summary["final_test"]["accuracy"] == metrics.accuracy(cm)
    assert summary["artifact_version"] == __version__
    assert summary["num_cells"] == 2


def test_evaluate_reproduces_final_epoch(tmp_path, run_cfg, capsys):
    cfg = str(run_cfg())
    out = tmp_path / "run"
    assert main(["train", cfg, "--output-dir", str(out)]) == 0
    ckpt = out / "checkpoint_final.bin"
    before = sha(ckpt)
    last = read_tsv(out / "epochs.tsv")[-1]
    capsys.readouterr()
    assert main(["evaluate", str(ckpt), cfg]) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["accuracy"] == float(last["test_accuracy"])
    assert first["weighted_f1"] == float(last["test_f1"])
    assert main(["evaluate", str(ckpt), cfg]) == 0
    assert json.loads(capsys.readouterr().out) == first
    assert sha(ckpt) == before


def test_evaluate_writes_only_when_asked(tmp_path, run_cfg):
    cfg = str(run_cfg(epochs=1))
    out = tmp_path / "run"
    main(["train", cfg, "--output-dir", str(out)])
    listing = sorted(p.name for p in out.iterdir())
    assert main(["evaluate", str(out / "checkpoint_final.bin"), cfg]) == 0
    assert sorted(p.name for p in out.iterdir()) == listing
    ev = tmp_path / "eval"
    assert main(["evaluate", str(out / "checkpoint_final.bin"), cfg, "--output-dir", str(ev)]) == 0
    assert (ev / "evaluation.json").exists()


def test_evaluate_shape_mismatch(tmp_path, run_cfg, capsys):
    out = tmp_path / "run"
    main(["train", str(run_cfg(epochs=0)), "--output-dir", str(out)])
    wide = run_cfg("wide.cfg", hidden_width=64)
    capsys.readouterr()
    assert main(["evaluate", str(out / "checkpoint_final.bin"), str(wide)]) == 1
    err = capsys.readouterr().err
    assert "ShapeMismatchError" in err
    assert "input.W: checkpoint [4, 9] vs config [64, 9]" in err


def test_gridsearch_single_point_equals_train(tmp_path, run_cfg):
    cfg = str(run_cfg(epochs=1))
    grid = write_config(tmp_path / "grid.txt", learning_rate="0.001")
    assert main(["train", cfg, "--output-dir", str(tmp_path / "direct")]) == 0
    assert main(["gridsearch", cfg, str(grid), "--output-dir", str(tmp_path / "grid")]) == 0
    assert ((tmp_path / "grid" / "trial_001" / "epochs.tsv").read_bytes()
            == (tmp_path / "direct" / "epochs.tsv").read_bytes())


def test_gridsearch_ranks_and_repeats(tmp_path, run_cfg):
    cfg = str(run_cfg(epochs=1))
    grid = write_config(tmp_path / "grid.txt", learning_rate="0.001, 0.01", hidden_width="3, 5")
    outs = [tmp_path / "g1", tmp_path / "g2"]
    for out in outs:
        assert main(["gridsearch", cfg, str(grid), "--output-dir", str(out)]) == 0
    rows = read_tsv(outs[0] / "ranking.tsv")
    assert len(rows) == 4
    assert sorted(p.name for p in outs[0].glob("trial_*")) == [f"trial_{i:03d}" for i in range(1, 5)]
    f1 = [float(r["best_test_f1"]) for r in rows]
    assert f1 == sorted(f1, reverse=True)
    assert (outs[0] / "ranking.tsv").read_bytes() == (outs[1] / "ranking.tsv").read_bytes()


def test_gridsearch_bad_key_fails_before_training(tmp_path, run_cfg, capsys):
    grid = write_config(tmp_path / "grid.txt", learning_rate="0.001", momentum="0.9")
    out = tmp_path / "grid"
    assert main(["gridsearch", str(run_cfg()), str(grid), "--output-dir", str(out)]) == 1
    assert "momentum" in capsys.readouterr().err
    assert not out.exists()


def test_gridsearch_bad_value_fails_before_training(tmp_path, run_cfg):
    grid = write_config(tmp_path / "grid.txt", learning_rate="0.001, -1")
    out = tmp_path / "grid"
    assert main(["gridsearch", str(run_cfg()), str(grid), "--output-dir", str(out)]) == 1
    assert not out.exists()


def test_ablation_rows_recompute(tmp_path, run_cfg):
    out = tmp_path / "abl"
    assert main(["ablation", str(run_cfg(epochs=1)), "--output-dir", str(out)]) == 0
    rows = read_tsv(out / "ablation.tsv")
    assert [r["variant"] for r in rows] == ["baseline", "bidir", "residual", "residual_bidir"]
    for r in rows:
        cm = metrics.from_delimited((out / r["variant"] / "confusion.tsv").read_text())
        assert float(r["accuracy"]) == metrics.accuracy(cm)
        assert float(r["weighted_f1"]) == metrics.weighted_f1(cm)


def test_missing_data_names_component_and_marks_incomplete(tmp_path, capsys):
    cfg = write_config(tmp_path / "exp.cfg", dataset="uci", data_path="nowhere", **SMALL)
    out = tmp_path / "run"
    assert main(["train", str(cfg), "--output-dir", str(out)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("harlstm: error in data:")
    assert (out / "INCOMPLETE").exists()


def test_config_error_names_cli_component(tmp_path, capsys):
    cfg = write_config(tmp_path / "exp.cfg", hidden=3)
    assert main(["train", str(cfg)]) == 1
    assert "error in experiment-cli" in capsys.readouterr().err


def test_set_and_threads(tmp_path, run_cfg):
    out = tmp_path / "run"
    assert main(["--threads", "1", "train", str(run_cfg()), "--set", "epochs=0",
                 "--set", "seed=5", "--output-dir", str(out)]) == 0
    saved = read_kv(out / "config.txt")
    assert (saved["epochs"], saved["seed"], saved["threads"]) == ("0", "5", "1")


def test_toy_dataset_needs_no_files(tmp_path):
    cfg = write_config(tmp_path / "toy.cfg", dataset="toy", toy_samples=20, **SMALL)
    out = tmp_path / "run"
    assert main(["train", str(cfg), "--output-dir", str(out)]) == 0
    assert len(read_tsv(out / "epochs.tsv")) == 2


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    done = subprocess.run([sys.executable, "-m", "harlstm", "--version"], capture_output=True, text=True)
    assert done.returncode == 0 and __version__ in done.stdout
