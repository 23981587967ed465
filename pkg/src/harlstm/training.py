"""Loss, gradient clipping, Adam and the epoch loop."""
from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import metrics
from . import tensor as tn
from .layers import ConfigError
from .network import (
    NetworkArchitecture,
    apply_bn_stats,
    init_params,
    is_weight,
    network_forward,
    predict_scores,
)
from .params import backward_into
from .tensor import Tensor

log = logging.getLogger(__name__)


class LabelError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    """Loss went non-finite. ``last_good`` is the store before the bad step."""

    def __init__(self, message, last_good, reports):
        super().__init__(message)
        self.last_good = last_good
        self.reports = reports


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    l2_lambda: float = 0.0015
    clip_norm: float = 15.0
    batch_size: int = 100
    epochs: int = 25
    dropout_keep_prob: float = 0.85
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    eval_every: int = 1
    eval_batch_size: int = 256

    def __post_init__(self):
        checks = [
            ("learning_rate", self.learning_rate > 0),
            ("l2_lambda", self.l2_lambda >= 0),
            ("clip_norm", self.clip_norm > 0),
            ("batch_size", self.batch_size >= 1),
            ("epochs", self.epochs >= 0),
            ("dropout_keep_prob", 0 < self.dropout_keep_prob <= 1),
            ("adam_beta1", 0 < self.adam_beta1 < 1),
            ("adam_beta2", 0 < self.adam_beta2 < 1),
            ("adam_epsilon", self.adam_epsilon > 0),
            ("eval_every", self.eval_every >= 1),
            ("eval_batch_size", self.eval_batch_size >= 1),
        ]
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ConfigError(f"invalid training settings: " + ", ".join(f"{b}={getattr(self, b)}" for b in bad))

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def like(cls, store):
        return cls({k: np.zeros_like(v) for k, v in store.items()},
                   {k: np.zeros_like(v) for k, v in store.items()}, 0)

    def copy(self):
        return AdamState({k: v.copy() for k, v in self.m.items()},
                         {k: v.copy() for k, v in self.v.items()}, self.t)


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    train_f1: float
    test_f1: float
    wall_time: float = 0.0
    test_confusion: metrics.ConfusionMatrix | None = None


# ---------------------------------------------------------------- loss

def _check_one_hot(labels):
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if y.ndim != 2 or not np.isin(y, (0.0, 1.0)).all() or not (y.sum(axis=1) == 1).all():
        raise LabelError("labels must be one-hot rows (entries 0/1, one 1 per row)")
    return y


def l2_penalty(params, l2_lambda):
    """``l2_lambda * 0.5 * sum ||W||^2`` over weight matrices only."""
    terms = [tn.sum_(tn.mul(params[k], params[k])) for k in sorted(params) if is_weight(k)]
    if not terms or l2_lambda == 0:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = tn.add(total, t)
    return tn.mul(total, 0.5 * l2_lambda)


def classification_loss(logits, labels, params=None, l2_lambda=0.0):
    """Mean per-class sigmoid cross entropy plus L2 decay on weights."""
    y = _check_one_hot(labels)
    loss = tn.mean(tn.sigmoid_cross_entropy(logits, y))
    if params and l2_lambda:
        loss = tn.add(loss, l2_penalty(params, l2_lambda))
    return loss


# ------------------------------------------------------------ optimizer

def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(grads[k] * grads[k])) for k in sorted(grads))))


def clip_gradients(grads, clip_norm):
    """Scale all gradients jointly so their global L2 norm is at most ``clip_norm``.

    Returns ``(grads, scale)``; below the threshold the input dict comes
    back untouched and ``scale`` is 1.
    """
    if clip_norm <= 0:
        raise ConfigError("clip_norm must be positive")
    for k in sorted(grads):
        if not np.isfinite(grads[k]).all():
            raise NonFiniteError(f"non-finite gradient for {k}")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads, 1.0
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}, scale


def adam_step(store, grads, state, cfg):
    """One bias-corrected Adam update; replaces the arrays in ``store``."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k in store.paths():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        state.m[k], state.v[k] = m, v
        store.values[k] = store.values[k] - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon)
    return store, state


# ------------------------------------------------------------ evaluation

def evaluate(arch, store, dataset, batch_size=256):
    """Infer-mode confusion matrix for ``dataset``; touches no state."""
    scores = predict_scores(arch, store, dataset.samples, batch_size)
    preds = np.argmax(scores, axis=1) if len(scores) else np.zeros(0, dtype=np.int64)
    return metrics.confusion(preds, dataset.labels, arch.num_classes, dataset.class_names)


def _scores(cm):
    return metrics.accuracy(cm), metrics.weighted_f1(cm)


# ------------------------------------------------------------ the loop

@dataclass
class TrainState:
    """Everything needed to continue a run bitwise: optimizer, RNG, best-so-far."""

    epoch: int
    adam: AdamState
    rng_state: dict
    best_params: object = None
    best_report: EpochReport | None = None


@dataclass
class TrainResult:
    reports: list
    final_params: object
    best_params: object
    best_report: EpochReport | None
    state: TrainState


def train(arch, params, train_data, test_data, cfg, resume=None, on_epoch=None, on_step=None):
    """Mini-batch training with per-epoch infer-mode evaluation.

    ``params`` is updated in place and also returned as ``final_params``.
    ``resume`` continues from a :class:`TrainState` (e.g. from a
    checkpoint). ``on_epoch(report, store)`` runs after each evaluation;
    ``on_step(epoch, step, store)`` after each optimizer update.
    """
    if len(train_data) == 0 or len(test_data) == 0:
        raise ConfigError("train and test sets must be non-empty")
    if arch.dropout_keep_prob != cfg.dropout_keep_prob:
        arch = replace(arch, dropout_keep_prob=cfg.dropout_keep_prob)
    store = params
    if resume is None:
        rng = np.random.default_rng([cfg.seed, 1])
        state = TrainState(0, AdamState.like(store), rng.bit_generator.state)
    else:
        state = resume
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng_state
    reports = []
    n = len(train_data)
    for epoch in range(state.epoch + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            leaves = store.as_tensors(requires_grad=True)
            bn_stats = {}
            logits = network_forward(arch, leaves, Tensor(train_data.samples[idx]), "train", rng, bn_stats)
            loss = classification_loss(logits, train_data.one_hot(idx), leaves, cfg.l2_lambda)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}", store.copy(), reports)
            grads = backward_into(loss, leaves, store)
            grads, _ = clip_gradients(grads, cfg.clip_norm)
            adam_step(store, grads, state.adam, cfg)
            apply_bn_stats(store, bn_stats, arch.bn_momentum)
            loss_sum += float(loss.data) * len(idx)
            if on_step is not None:
                on_step(epoch, step, store)
        state.epoch = epoch
        state.rng_state = rng.bit_generator.state
        if epoch % cfg.eval_every and epoch != cfg.epochs:
            continue
        train_acc, train_f1 = _scores(evaluate(arch, store, train_data, cfg.eval_batch_size))
        test_cm = evaluate(arch, store, test_data, cfg.eval_batch_size)
        test_acc, test_f1 = _scores(test_cm)
        report = EpochReport(epoch, loss_sum / n, train_acc, test_acc, train_f1, test_f1,
                             time.perf_counter() - t0, test_cm)
        reports.append(report)
        if state.best_report is None or report.test_f1 > state.best_report.test_f1:
            state.best_report = report
            state.best_params = store.copy()
        log.info("epoch %d loss %.5f train acc %.4f test acc %.4f test f1 %.4f",
                 epoch, report.train_loss, train_acc, test_acc, test_f1)
        if on_epoch is not None:
            on_epoch(report, store)
    return TrainResult(reports, store, state.best_params, state.best_report, state)


# ------------------------------------------------------------ grid search

@dataclass
class Trial:
    overrides: dict
    arch: NetworkArchitecture
    cfg: TrainConfig
    best_test_f1: float
    best_test_accuracy: float
    final_test_f1: float
    final_test_accuracy: float
    reports: list

    @property
    def label(self):
        return ",".join(f"{k}={self.overrides[k]}" for k in sorted(self.overrides))


def split_overrides(overrides, arch, cfg):
    """Apply ``name -> value`` overrides to whichever dataclass owns each name."""
    arch_names, cfg_names = set(NetworkArchitecture.field_names()), set(TrainConfig.field_names())
    unknown = sorted(set(overrides) - arch_names - cfg_names)
    if unknown:
        raise ConfigError(f"unknown hyper-parameter(s) {unknown}; valid names: {sorted(arch_names | cfg_names)}")
    a = {k: v for k, v in overrides.items() if k in arch_names}
    c = {k: v for k, v in overrides.items() if k in cfg_names}
    if "dropout_keep_prob" in overrides:
        a["dropout_keep_prob"] = c["dropout_keep_prob"] = overrides["dropout_keep_prob"]
    return replace(arch, **a), replace(cfg, **c)


def grid_points(grid):
    """Cartesian product of the grid, keys in the given order."""
    if not grid:
        raise ConfigError("grid must contain at least one hyper-parameter")
    keys = list(grid)
    for k in keys:
        if not len(grid[k]):
            raise ConfigError(f"grid entry {k!r} has no values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def rank_trials(trials):
    """Best test F1 first, then test accuracy, then the override label."""
    return sorted(trials, key=lambda t: (-t.best_test_f1, -t.best_test_accuracy, t.label))


def run_trial(arch, cfg, overrides, train_data, test_data):
    arch, cfg = split_overrides(overrides, arch, cfg)
    store = init_params(arch, cfg.seed)
    result = train(arch, store, train_data, test_data, cfg)
    best, final = result.best_report, (result.reports[-1] if result.reports else None)
    return Trial(
        overrides=dict(overrides), arch=arch, cfg=cfg,
        best_test_f1=best.test_f1 if best else 0.0,
        best_test_accuracy=best.test_accuracy if best else 0.0,
        final_test_f1=final.test_f1 if final else 0.0,
        final_test_accuracy=final.test_accuracy if final else 0.0,
        reports=result.reports,
    )


def grid_search(arch, base_cfg, grid, train_data, test_data, workers=1):
    """Train every grid point and return the trials ranked.

    Every trial starts from ``base_cfg.seed`` (common random numbers), so
    trials differ only in the swept settings and a one-point grid
    reproduces a direct :func:`train` call.
    """
    points = grid_points(grid)
    for p in points:
        split_overrides(p, arch, base_cfg)  # reject bad names/values before any trial runs
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_trial, arch, base_cfg, p, train_data, test_data) for p in points]
            trials = [f.result() for f in futures]
    else:
        trials = [run_trial(arch, base_cfg, p, train_data, test_data) for p in points]
    return rank_trials(trials)


def report_row(report):
    d = asdict(report)
    d.pop("test_confusion", None)
    return d
