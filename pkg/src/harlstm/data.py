"""Sensor data ingestion and preprocessing.

Two sources converge on :class:`WindowedDataset`: the pre-windowed UCI HAR
layout (:func:`load_uci`) and generic per-time-step label streams read
through a manifest (:func:`load_generic`), which go through
:func:`interpolate_gaps`, the normalizer and :func:`slide_windows`.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kvfile import read_kv

log = logging.getLogger(__name__)

UCI_CHANNELS = (
    "body_acc_x", "body_acc_y", "body_acc_z",
    "body_gyro_x", "body_gyro_y", "body_gyro_z",
    "total_acc_x", "total_acc_y", "total_acc_z",
)
UCI_CLASSES = (
    "WALKING", "WALKING_UPSTAIRS", "WALKING_DOWNSTAIRS", "SITTING", "STANDING", "LAYING",
)
UCI_WINDOW = 128


class DataPathError(FileNotFoundError):
    pass


class ConsistencyError(ValueError):
    pass


class ParseError(ValueError):
    pass


class UnrecoverableChannelError(ValueError):
    pass


@dataclass
class RawSeries:
    """One continuous recording: ``values`` [time, d] with NaN gaps, one label per step."""

    values: np.ndarray
    labels: np.ndarray
    null_class: int = 0
    name: str = ""
    gap_count: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.values):
            raise ConsistencyError(
                f"series {self.name!r}: {len(self.labels)} labels for {len(self.values)} time steps"
            )

    @property
    def channels(self):
        return self.values.shape[1]

    def __len__(self):
        return len(self.values)


@dataclass
class WindowedDataset:
    samples: np.ndarray  # [n, T, channels]
    labels: np.ndarray  # [n]
    class_count: int
    window_size: int
    step: int
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise ConsistencyError(f"{len(self.samples)} windows but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConsistencyError(f"labels must lie in [0, {self.class_count})")
        if not self.class_names:
            self.class_names = [str(c) for c in range(self.class_count)]

    def __len__(self):
        return len(self.labels)

    @property
    def channels(self):
        return self.samples.shape[2] if self.samples.ndim == 3 else 0

    def one_hot(self, idx=None):
        labels = self.labels if idx is None else self.labels[idx]
        return np.eye(self.class_count)[labels]

    def subset(self, idx):
        return WindowedDataset(self.samples[idx], self.labels[idx], self.class_count,
                               self.window_size, self.step, list(self.class_names))


# ----------------------------------------------------------------- UCI HAR

def _load_matrix(path):
    if not path.is_file():
        raise DataPathError(f"missing data file: {path}")
    return np.loadtxt(path, dtype=np.float64, ndmin=2)


def load_uci_split(root, split):
    root = Path(root)
    signals = root / split / "Inertial Signals"
    label_path = root / split / f"y_{split}.txt"
    channels = [_load_matrix(signals / f"{name}_{split}.txt") for name in UCI_CHANNELS]
    rows = {name: m.shape[0] for name, m in zip(UCI_CHANNELS, channels)}
    if len(set(rows.values())) != 1:
        raise ConsistencyError(f"{split}: channel files disagree on row count: {rows}")
    widths = {m.shape[1] for m in channels}
    if widths != {UCI_WINDOW}:
        raise ConsistencyError(f"{split}: expected {UCI_WINDOW} values per row, found {sorted(widths)}")
    labels = _load_matrix(label_path).ravel()
    n = next(iter(rows.values()))
    if len(labels) != n:
        raise ConsistencyError(f"{split}: {n} signal rows but {len(labels)} labels in {label_path.name}")
    labels = labels.astype(np.int64) - 1
    if labels.size and (labels.min() < 0 or labels.max() >= len(UCI_CLASSES)):
        raise ConsistencyError(f"{split}: labels must be integers 1..{len(UCI_CLASSES)}")
    samples = np.stack(channels, axis=-1)
    return WindowedDataset(samples, labels, len(UCI_CLASSES), UCI_WINDOW, UCI_WINDOW // 2,
                           list(UCI_CLASSES))


def load_uci(root):
    """``(train, test)`` windows of shape [rows, 128, 9] with 0-based labels."""
    return load_uci_split(root, "train"), load_uci_split(root, "test")


def write_uci_layout(root, split, samples, labels):
    """Write ``samples`` [n, 128, 9] and 0-based ``labels`` in the UCI file layout."""
    signals = Path(root) / split / "Inertial Signals"
    signals.mkdir(parents=True, exist_ok=True)
    for c, name in enumerate(UCI_CHANNELS):
        np.savetxt(signals / f"{name}_{split}.txt", samples[:, :, c], fmt="%.8e")
    np.savetxt(Path(root) / split / f"y_{split}.txt", np.asarray(labels) + 1, fmt="%d")


# ---------------------------------------------------------------- cleaning

def interpolate_gaps(series):
    """Fill NaN runs linearly between neighbours; edges copy the nearest value."""
    values = series.values.copy()
    idx = np.arange(len(values), dtype=np.float64)
    for c in range(values.shape[1]):
        col = values[:, c]
        gaps = np.isnan(col)
        if not gaps.any():
            continue
        if gaps.all():
            raise UnrecoverableChannelError(f"series {series.name!r}: channel {c} has no observed values")
        col[gaps] = np.interp(idx[gaps], idx[~gaps], col[~gaps])
    return RawSeries(values, series.labels.copy(), series.null_class, series.name, 0)


@dataclass
class NormalizationStats:
    mu: np.ndarray
    sigma: np.ndarray
    target_std: float = 0.5


def _stack_channels(data):
    if isinstance(data, RawSeries):
        return data.values
    if isinstance(data, WindowedDataset):
        data = data.samples
    if isinstance(data, (list, tuple)):
        return np.concatenate([_stack_channels(s) for s in data], axis=0)
    arr = np.asarray(data, dtype=np.float64)
    return arr.reshape(-1, arr.shape[-1])


def fit_normalizer(train, target_std=0.5):
    """Per-channel mean and population standard deviation of the training data."""
    flat = _stack_channels(train)
    mu = flat.mean(axis=0)
    sigma = flat.std(axis=0)
    dead = np.flatnonzero(sigma == 0)
    if dead.size:
        warnings.warn(f"channels {dead.tolist()} have zero variance; using sigma = 1",
                      RuntimeWarning, stacklevel=2)
        sigma = sigma.copy()
        sigma[dead] = 1.0
    return NormalizationStats(mu, sigma, float(target_std))


def apply_normalizer(stats, data):
    """``target_std * (x - mu) / sigma`` over the last axis."""
    if isinstance(data, RawSeries):
        return RawSeries(apply_normalizer(stats, data.values), data.labels.copy(),
                         data.null_class, data.name, data.gap_count)
    if isinstance(data, WindowedDataset):
        return WindowedDataset(apply_normalizer(stats, data.samples), data.labels.copy(),
                               data.class_count, data.window_size, data.step, list(data.class_names))
    x = np.asarray(data, dtype=np.float64)
    return stats.target_std * (x - stats.mu) / stats.sigma


# --------------------------------------------------------------- windowing

def window_step(window, overlap):
    """Hop between window starts; 50% overlap of an even window gives T/2."""
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    return max(1, int(math.floor(window * (1.0 - overlap) + 0.5)))


def window_count(length, window, step):
    return 0 if window > length else (length - window) // step + 1


def slide_windows(series, window, overlap=0.5, step=None, num_classes=None, class_names=None):
    """Cut one or more series into [n, window, d] samples labelled by their last step.

    Windows never cross from one series into the next.
    """
    many = series if isinstance(series, (list, tuple)) else [series]
    step = window_step(window, overlap) if step is None else int(step)
    if step < 1:
        raise ValueError("step must be >= 1")
    chunks, labels = [], []
    for s in many:
        n = window_count(len(s), window, step)
        if n == 0:
            warnings.warn(f"series {s.name!r} of length {len(s)} is shorter than window {window}",
                          RuntimeWarning, stacklevel=2)
            continue
        starts = np.arange(n) * step
        chunks.append(np.stack([s.values[a : a + window] for a in starts]))
        labels.append(s.labels[starts + window - 1])
    channels = many[0].channels if many else 0
    samples = np.concatenate(chunks) if chunks else np.zeros((0, window, channels))
    labels = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return WindowedDataset(samples, labels, num_classes, window, step, list(class_names or []))


def check_window_duration(window, sample_rate):
    """Warn when a window spans less than 0.5 s or more than 5 s."""
    if not sample_rate:
        return
    seconds = window / float(sample_rate)
    if not 0.5 <= seconds <= 5.0:
        warnings.warn(f"window of {window} steps at {sample_rate} Hz spans {seconds:.2f} s; "
                      "0.5 s to 5 s usually works best", UserWarning, stacklevel=2)


# ----------------------------------------------------------------- generic

@dataclass
class Manifest:
    path: Path
    files: list
    train_files: list
    test_files: list
    delimiter: str = ","
    channels: int = 0
    label_column: int = -1
    gap: str = "NaN"
    sample_rate: float = 0.0
    null_class: int = 0
    num_classes: int = 0
    class_names: list = field(default_factory=list)
    skip_header: int = 0


_DELIMS = {"comma": ",", "tab": "\t", "space": " ", "whitespace": None, "semicolon": ";"}


def _split_list(text):
    return [p.strip() for p in text.split(",") if p.strip()]


def read_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise DataPathError(f"missing manifest: {path}")
    kv = read_kv(path)
    known = {"files", "train_files", "test_files", "delimiter", "channels", "label_column",
             "gap", "sample_rate", "null_class", "num_classes", "class_names", "skip_header"}
    unknown = sorted(set(kv) - known)
    if unknown:
        raise ParseError(f"{path}: unknown manifest keys {unknown}; valid keys are {sorted(known)}")
    if "channels" not in kv:
        raise ParseError(f"{path}: manifest must declare 'channels'")
    delim = kv.get("delimiter", "comma")
    return Manifest(
        path=path,
        files=_split_list(kv.get("files", "")),
        train_files=_split_list(kv.get("train_files", "")),
        test_files=_split_list(kv.get("test_files", "")),
        delimiter=_DELIMS.get(delim, delim),
        channels=int(kv["channels"]),
        label_column=int(kv.get("label_column", "-1")),
        gap=kv.get("gap", "NaN"),
        sample_rate=float(kv.get("sample_rate", "0")),
        null_class=int(kv.get("null_class", "0")),
        num_classes=int(kv.get("num_classes", "0")),
        class_names=_split_list(kv.get("class_names", "")),
        skip_header=int(kv.get("skip_header", "0")),
    )


def _read_series(file_path, m):
    if not file_path.is_file():
        raise DataPathError(f"missing data file: {file_path}")
    width = m.channels + 1
    label_col = m.label_column % width
    values, labels, gaps = [], [], 0
    with open(file_path, newline="", encoding="utf-8") as fh:
        rows = (line.split() for line in fh) if m.delimiter is None else csv.reader(fh, delimiter=m.delimiter)
        for lineno, row in enumerate(rows, start=1):
            if lineno <= m.skip_header or not row:
                continue
            if len(row) != width:
                raise ParseError(f"{file_path}:{lineno}: expected {width} columns, found {len(row)}")
            cells = [c.strip() for c in row]
            lab = cells.pop(label_col)
            labels.append(m.null_class if lab == m.gap or lab == "" else int(float(lab)))
            vals = []
            for c in cells:
                if c == m.gap or c == "":
                    vals.append(np.nan)
                    gaps += 1
                else:
                    try:
                        vals.append(float(c))
                    except ValueError:
                        raise ParseError(f"{file_path}:{lineno}: not a number: {c!r}") from None
            values.append(vals)
    if gaps:
        log.info("%s: %d gap cells", file_path.name, gaps)
    arr = np.array(values, dtype=np.float64).reshape(-1, m.channels)
    return RawSeries(arr, np.array(labels, dtype=np.int64), m.null_class, file_path.name, gaps)


def load_generic(manifest_path, split=None):
    """Parse every file the manifest lists under ``files`` (or
    ``{split}_files``) into a :class:`RawSeries`, in manifest order."""
    m = read_manifest(manifest_path)
    names = m.files if split is None else getattr(m, f"{split}_files")
    if not names:
        key = "files" if split is None else f"{split}_files"
        raise ParseError(f"{m.path}: manifest lists no '{key}'")
    return [_read_series(m.path.parent / n, m) for n in names]


def prepare_generic(manifest_path, window, overlap=0.5, target_std=0.5, normalize=True):
    """Manifest -> normalized (train, test) windows plus the fitted stats.

    Falls back to the ``files`` list for training when no ``train_files``
    are given; the normalizer only ever sees training series.
    """
    m = read_manifest(manifest_path)
    check_window_duration(window, m.sample_rate)
    train = [interpolate_gaps(s) for s in load_generic(manifest_path, "train" if m.train_files else None)]
    test = [interpolate_gaps(s) for s in load_generic(manifest_path, "test")] if m.test_files else []
    stats = fit_normalizer(train, target_std) if normalize else None
    if stats is not None:
        train = [apply_normalizer(stats, s) for s in train]
        test = [apply_normalizer(stats, s) for s in test]
    labels = np.concatenate([s.labels for s in train + test])
    classes = m.num_classes or int(labels.max()) + 1
    names = m.class_names or None
    return (
        slide_windows(train, window, overlap, num_classes=classes, class_names=names),
        slide_windows(test, window, overlap, num_classes=classes, class_names=names),
        stats,
    )


# -------------------------------------------------------------------- toy

def make_toy_dataset(n, window=8, channels=2, noise=0.5, seed=0):
    """Two-class windows whose label is the sign of channel 0 at the last step.

    The decisive value has magnitude in [0.5, 1.5]; everything else is
    Gaussian noise, so a threshold at zero on ``x[:, -1, 0]`` is exact.
    """
    rng = np.random.default_rng(seed)
    samples = rng.normal(0.0, noise, size=(n, window, channels))
    labels = rng.integers(0, 2, size=n)
    magnitude = rng.uniform(0.5, 1.5, size=n)
    samples[:, -1, 0] = np.where(labels == 1, magnitude, -magnitude)
    return WindowedDataset(samples, labels, 2, window, window, ["negative", "positive"])
