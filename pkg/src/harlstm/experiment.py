"""Config-driven runs: data preparation, training, evaluation, grid search
and the four-variant ablation, each writing a self-describing run directory."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, metrics
from . import config as cfgmod
from .data import (
    apply_normalizer,
    fit_normalizer,
    load_uci,
    make_toy_dataset,
    prepare_generic,
    NormalizationStats,
)
from .layers import ConfigError
from .network import VARIANTS, expected_shapes, init_params
from .training import (
    Trial,
    TrainingDiverged,
    evaluate,
    grid_points,
    rank_trials,
    report_row,
    split_overrides,
    train,
)

log = logging.getLogger(__name__)

EPOCH_COLUMNS = ("epoch", "train_loss", "train_accuracy", "test_accuracy", "train_f1", "test_f1")
VARIANT_TITLES = {
    "baseline": "Baseline LSTM",
    "bidir": "Bidir-LSTM",
    "residual": "Res-LSTM",
    "residual_bidir": "Deep-Res-Bidir-LSTM",
}


class ShapeMismatchError(ValueError):
    pass


@dataclass
class Prepared:
    train: object
    test: object
    norm: NormalizationStats | None


def prepare_data(cfg, config_path=None):
    """Load and normalize the configured dataset; stats come from train only."""
    if cfg.dataset == "toy":
        T = cfg.window_length or 8
        d = cfg.input_channels or 2
        train_ds = make_toy_dataset(cfg.toy_samples, T, d, cfg.toy_noise, seed=cfg.seed * 2 + 101)
        test_ds = make_toy_dataset(cfg.toy_samples, T, d, cfg.toy_noise, seed=cfg.seed * 2 + 102)
        return Prepared(train_ds, test_ds, None)
    path = cfgmod.resolve_data_path(cfg, config_path)
    if cfg.dataset == "generic":
        if not cfg.window_length:
            raise ConfigError("generic datasets need window_length")
        train_ds, test_ds, stats = prepare_generic(
            path, cfg.window_length, cfg.window_overlap, cfg.target_std, cfg.normalize
        )
        return Prepared(train_ds, test_ds, stats)
    train_ds, test_ds = load_uci(path)
    stats = None
    if cfg.normalize:
        stats = fit_normalizer(train_ds, cfg.target_std)
        train_ds, test_ds = apply_normalizer(stats, train_ds), apply_normalizer(stats, test_ds)
    return Prepared(train_ds, test_ds, stats)


def architecture_for(cfg, data):
    return cfg.architecture(data.train.channels, data.train.class_count, data.train.samples.shape[1])


# ------------------------------------------------------------------ output

def _write_text(path, text):
    checkpoint.atomic_write_bytes(path, text.encode("utf-8"))


def _table(columns, rows):
    lines = ["\t".join(columns)]
    lines += ["\t".join(str(r[c]) if isinstance(r[c], int) else repr(float(r[c])) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def epoch_table(reports):
    return _table(EPOCH_COLUMNS, [report_row(r) for r in reports])


def _norm_group(norm):
    if norm is None:
        return {}
    return {"norm": {"mu": norm.mu, "sigma": norm.sigma, "target_std": np.array([norm.target_std])}}


def _checkpoint(store, cfg, arch, result, norm, kind):
    extra = _norm_group(norm)
    train_state = {}
    adam = None
    if kind == "final" and result is not None:
        adam = result.state.adam
        train_state = checkpoint.train_state_payload(result.state)
        if result.state.best_params is not None:
            extra["best.params"] = result.state.best_params.values
            extra["best.buffers"] = result.state.best_params.buffers
    meta = {
        "artifact_version": __version__,
        "kind": kind,
        # the run directory is not model state; leaving it out keeps reruns elsewhere byte-identical
        "config": cfgmod.dumps(replace(cfg, output_dir="")),
        "architecture": arch.to_dict(),
        "seed": cfg.seed,
    }
    return checkpoint.Checkpoint(store, adam, train_state, meta, extra)


def write_artifacts(out, cfg, arch, data, result, final_store):
    """Everything a run leaves behind. Returns the summary dict."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    reports = result.reports if result is not None else []
    final_cm = evaluate(arch, final_store, data.test, cfg.eval_batch_size)
    _write_text(out / "config.txt", cfgmod.dumps(cfg))
    _write_text(out / "epochs.tsv", epoch_table(reports))
    _write_text(out / "timing.tsv", _table(("epoch", "wall_time"), [report_row(r) for r in reports]))
    _write_text(out / "trend.tsv", _table(("epoch", "train_f1", "test_f1"), [report_row(r) for r in reports]))
    _write_text(out / "confusion.tsv", metrics.to_delimited(final_cm))
    _write_text(out / "confusion_percent.tsv", metrics.to_delimited(final_cm, percent=True))
    checkpoint.save(out / "checkpoint_final.bin", _checkpoint(final_store, cfg, arch, result, data.norm, "final"))
    best = result.best_report if result is not None else None
    if result is not None and result.best_params is not None:
        checkpoint.save(out / "checkpoint_best.bin",
                        _checkpoint(result.best_params, cfg, arch, None, data.norm, "best"))
        _write_text(out / "confusion_best.tsv", metrics.to_delimited(best.test_confusion))
    summary = {
        "artifact_version": __version__,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "architecture": arch.to_dict(),
        "num_cells": arch.num_cells,
        "evaluations": len(reports),
        "final_test": metrics.to_dict(final_cm),
        "best": None if best is None else {
            "epoch": best.epoch,
            "test_accuracy": best.test_accuracy,
            "test_f1": best.test_f1,
            "test_confusion": metrics.to_dict(best.test_confusion),
        },
    }
    _write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    incomplete = out / "INCOMPLETE"
    if incomplete.exists():
        incomplete.unlink()
    return summary


def _mark_incomplete(out, err):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "INCOMPLETE", f"{type(err).__name__}: {err}\n")


# ---------------------------------------------------------------- commands

def run_train(cfg, config_path=None, out=None, data=None):
    out = Path(out or cfg.output_dir)
    try:
        data = data or prepare_data(cfg, config_path)
        arch = architecture_for(cfg, data)
        store = init_params(arch, cfg.seed)
        try:
            result = train(arch, store, data.train, data.test, cfg.train_config())
        except TrainingDiverged as err:
            checkpoint.save(out / "checkpoint_last_good.bin",
                            _checkpoint(err.last_good, cfg, arch, None, data.norm, "last_good"))
            raise
        return write_artifacts(out, cfg, arch, data, result, result.final_params)
    except Exception as err:
        _mark_incomplete(out, err)
        raise


def check_shapes(ckpt, arch):
    want = expected_shapes(arch)
    have = {k: v.shape for k, v in ckpt.params.values.items()}
    have.update({k: v.shape for k, v in ckpt.params.buffers.items()})
    problems = []
    for k in sorted(set(want) | set(have)):
        if k not in have:
            problems.append(f"{k}: missing from checkpoint (config expects {list(want[k])})")
        elif k not in want:
            problems.append(f"{k}: present in checkpoint {list(have[k])} but not in config architecture")
        elif tuple(want[k]) != tuple(have[k]):
            problems.append(f"{k}: checkpoint {list(have[k])} vs config {list(want[k])}")
    if problems:
        raise ShapeMismatchError("checkpoint does not fit the configured architecture:\n  " + "\n  ".join(problems))


def run_evaluate(checkpoint_path, cfg, config_path=None, out=None):
    """Infer-mode test metrics for a saved checkpoint; reads files only."""
    ckpt = checkpoint.load(checkpoint_path)
    version = ckpt.meta.get("artifact_version")
    if version != __version__:
        raise checkpoint.CheckpointError(f"checkpoint written by version {version}, this is {__version__}")
    norm_saved = ckpt.extra.get("norm")
    cfg_eval = replace(cfg, normalize=False) if norm_saved is not None else cfg
    data = prepare_data(cfg_eval, config_path)
    if norm_saved is not None:
        stats = NormalizationStats(norm_saved["mu"], norm_saved["sigma"], float(norm_saved["target_std"][0]))
        data = Prepared(data.train, apply_normalizer(stats, data.test), stats)
    arch = architecture_for(cfg, data)
    check_shapes(ckpt, arch)
    cm = evaluate(arch, ckpt.params, data.test, cfg.eval_batch_size)
    report = metrics.to_dict(cm)
    if out is not None:
        out = Path(out)
        _write_text(out / "evaluation.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
        _write_text(out / "confusion.tsv", metrics.to_delimited(cm))
        _write_text(out / "confusion_percent.tsv", metrics.to_delimited(cm, percent=True))
    return report, cm


def run_gridsearch(cfg, grid, config_path=None, out=None):
    """One sub-directory per grid point plus ``ranking.tsv``.

    Trials share the config seed, so every trial differs from the base run
    only in the swept settings.
    """
    out = Path(out or cfg.output_dir)
    arch_probe = cfg.architecture(1, 1, 1)
    points = grid_points(grid)
    for p in points:
        split_overrides(p, arch_probe, cfg.train_config())
    data = prepare_data(cfg, config_path)
    trials, dirs = [], {}
    for i, point in enumerate(points, start=1):
        trial_cfg = cfg.with_overrides({k: cfgmod._fmt(v) for k, v in point.items()})
        name = f"trial_{i:03d}"
        summary = run_train(trial_cfg, config_path, out / name, data=data)
        best = summary["best"] or {"test_f1": 0.0, "test_accuracy": 0.0}
        final = summary["final_test"]
        trial = Trial(point, None, trial_cfg.train_config(), best["test_f1"], best["test_accuracy"],
                      final["weighted_f1"], final["accuracy"], [])
        trials.append(trial)
        dirs[id(trial)] = name
    ranked = rank_trials(trials)
    rows = ["rank\ttrial\tsettings\tbest_test_f1\tbest_test_accuracy\tfinal_test_f1\tfinal_test_accuracy"]
    for r, t in enumerate(ranked, start=1):
        rows.append(f"{r}\t{dirs[id(t)]}\t{t.label}\t{t.best_test_f1!r}\t{t.best_test_accuracy!r}"
                    f"\t{t.final_test_f1!r}\t{t.final_test_accuracy!r}")
    _write_text(out / "ranking.tsv", "\n".join(rows) + "\n")
    return ranked


def run_ablation(cfg, config_path=None, out=None, variants=tuple(VARIANTS)):
    """Train the four architecture variants under one budget and seed."""
    out = Path(out or cfg.output_dir)
    data = prepare_data(cfg, config_path)
    rows = []
    for name in variants:
        residual, bidirectional = VARIANTS[name]
        vcfg = replace(cfg, residual=residual, bidirectional=bidirectional)
        summary = run_train(vcfg, config_path, out / name, data=data)
        final = summary["final_test"]
        rows.append({"variant": name, "title": VARIANT_TITLES[name],
                     "accuracy": final["accuracy"], "weighted_f1": final["weighted_f1"],
                     "best_accuracy": summary["best"]["test_accuracy"] if summary["best"] else final["accuracy"],
                     "best_f1": summary["best"]["test_f1"] if summary["best"] else final["weighted_f1"]})
    lines = ["variant\ttitle\taccuracy\tweighted_f1\tbest_accuracy\tbest_f1"]
    lines += [f"{r['variant']}\t{r['title']}\t{r['accuracy']!r}\t{r['weighted_f1']!r}"
              f"\t{r['best_accuracy']!r}\t{r['best_f1']!r}" for r in rows]
    _write_text(out / "ablation.tsv", "\n".join(lines) + "\n")
    return rows
