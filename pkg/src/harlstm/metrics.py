"""Confusion matrix and the classification scores derived from it.

Rows are actual classes and columns predicted classes throughout.
"""
from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np


class LabelError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


class UndefinedMetricWarning(UserWarning):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"confusion counts must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        if not self.class_names:
            self.class_names = [str(c) for c in range(self.num_classes)]

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def supports(self):
        """Actual-class sample counts (row sums)."""
        return self.counts.sum(axis=1)

    def normalized_percent(self):
        """Each row scaled to sum to 100; empty rows stay zero."""
        rows = self.supports.astype(float)[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(rows > 0, 100.0 * self.counts / rows, 0.0)
        return pct


@dataclass
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    weighted_f1: float
    undefined: list = field(default_factory=list)


def confusion(predictions, actuals, num_classes, class_names=None):
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    actuals = np.asarray(actuals, dtype=np.int64).ravel()
    if predictions.shape != actuals.shape:
        raise LabelError(f"{len(predictions)} predictions vs {len(actuals)} actual labels")
    for name, v in (("prediction", predictions), ("actual", actuals)):
        bad = np.flatnonzero((v < 0) | (v >= num_classes))
        if bad.size:
            raise LabelError(f"{name} label {v[bad[0]]} at index {bad[0]} outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (actuals, predictions), 1)
    return ConfusionMatrix(counts, list(class_names) if class_names else [])


def _require_samples(cm):
    if cm.total == 0:
        raise UndefinedMetricError("metric undefined on an empty confusion matrix")


def accuracy(cm):
    _require_samples(cm)
    return float(np.trace(cm.counts)) / cm.total


def _ratio(num, den):
    out = np.zeros(len(num))
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out, np.flatnonzero(~ok)


def precision_recall(cm, warn=True):
    """Per-class precision and recall.

    A zero denominator yields a score of 0; with ``warn`` an
    :class:`UndefinedMetricWarning` names the affected classes.
    """
    _require_samples(cm)
    diag = np.diag(cm.counts).astype(float)
    prec, no_pred = _ratio(diag, cm.counts.sum(axis=0).astype(float))
    rec, no_act = _ratio(diag, cm.counts.sum(axis=1).astype(float))
    if warn and (no_pred.size or no_act.size):
        names = [cm.class_names[i] for i in sorted(set(no_pred) | set(no_act))]
        warnings.warn(f"precision/recall undefined for classes {names}; reported as 0",
                      UndefinedMetricWarning, stacklevel=2)
    return prec, rec


def f1_binary(prec, recall):
    if prec + recall == 0:
        return 0.0
    return 2.0 * prec * recall / (prec + recall)


def _f1_vector(prec, rec):
    den = prec + rec
    out = np.zeros_like(den)
    ok = den > 0
    out[ok] = 2.0 * prec[ok] * rec[ok] / den[ok]
    return out


def weighted_f1(cm, warn=False):
    """Support-weighted mean of per-class F1, supports being row sums."""
    prec, rec = precision_recall(cm, warn=warn)
    weights = cm.supports / cm.total
    return float(np.sum(weights * _f1_vector(prec, rec)))


def class_scores(cm, warn=False):
    prec, rec = precision_recall(cm, warn=warn)
    undefined = sorted(
        set(np.flatnonzero(cm.counts.sum(axis=0) == 0)) | set(np.flatnonzero(cm.supports == 0))
    )
    return ClassScores(
        precision=prec,
        recall=rec,
        f1=_f1_vector(prec, rec),
        support=cm.supports.copy(),
        accuracy=accuracy(cm),
        weighted_f1=weighted_f1(cm),
        undefined=[cm.class_names[i] for i in undefined],
    )


def to_delimited(cm, delimiter="\t", percent=False):
    """Matrix as text: header row, one row per actual class ending in its
    recall, then a precision row whose last cell is the accuracy."""
    scores = class_scores(cm)
    body = cm.normalized_percent() if percent else cm.counts
    buf = io.StringIO()
    buf.write(delimiter.join(["actual\\predicted", *cm.class_names, "recall"]) + "\n")
    for c, name in enumerate(cm.class_names):
        cells = [f"{v:.4f}" if percent else str(int(v)) for v in body[c]]
        buf.write(delimiter.join([name, *cells, repr(float(scores.recall[c]))]) + "\n")
    prec = [repr(float(p)) for p in scores.precision]
    buf.write(delimiter.join(["precision", *prec, repr(scores.accuracy)]) + "\n")
    return buf.getvalue()


def from_delimited(text, delimiter="\t"):
    """Counts matrix back from :func:`to_delimited` output (count form only)."""
    rows = [line.split(delimiter) for line in text.strip().splitlines()]
    names = rows[0][1:-1]
    body = rows[1 : 1 + len(names)]
    if [r[0] for r in body] != names:
        raise ValueError("row labels do not match the header")
    return ConfusionMatrix(np.array([[int(v) for v in r[1:-1]] for r in body]), names)


def to_dict(cm):
    scores = class_scores(cm)
    return {
        "class_names": list(cm.class_names),
        "counts": cm.counts.tolist(),
        "precision": scores.precision.tolist(),
        "recall": scores.recall.tolist(),
        "f1": scores.f1.tolist(),
        "support": scores.support.tolist(),
        "accuracy": scores.accuracy,
        "weighted_f1": scores.weighted_f1,
    }


def from_dict(d):
    return ConfusionMatrix(np.array(d["counts"]), list(d["class_names"]))


def to_json(cm):
    return json.dumps(to_dict(cm), indent=2, sort_keys=True)
