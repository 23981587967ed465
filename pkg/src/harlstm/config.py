"""Experiment configuration files.

A config is a flat ``key = value`` file. Keys are the fields of
:class:`ExperimentConfig`; unknown keys are rejected. ``architecture = 2x2``
is shorthand for ``residual_blocks = 2`` plus ``bidir_layers_per_block = 2``.
Architecture sizes left at 0 (``input_channels``, ``num_classes``,
``window_length``) are taken from the dataset.
"""
from __future__ import annotations

import hashlib
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .kvfile import format_kv, parse_kv, read_kv
from .layers import ConfigError
from .network import NetworkArchitecture, parse_shorthand
from .training import TrainConfig

_TRAIN = set(TrainConfig.field_names())
_ARCH = set(NetworkArchitecture.field_names())


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    dataset: str = "uci"
    data_path: str = ""
    normalize: bool = True
    target_std: float = 0.5
    window_overlap: float = 0.5
    toy_samples: int = 200
    toy_noise: float = 0.5
    # architecture
    residual_blocks: int = 2
    bidir_layers_per_block: int = 2
    hidden_width: int = 28
    input_channels: int = 0
    num_classes: int = 0
    window_length: int = 0
    dropout_placement: str = "depth"
    residual: bool = True
    bidirectional: bool = True
    batch_norm: bool = True
    bn_momentum: float = 0.99
    bn_beta_init: float = 0.0
    # training
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
    # run
    output_dir: str = "runs/default"
    threads: int = 0

    def __post_init__(self):
        if self.dataset not in ("uci", "generic", "toy"):
            raise ConfigError(f"dataset must be uci, generic or toy, got {self.dataset!r}")
        for name in ("residual_blocks", "bidir_layers_per_block", "hidden_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1 (blocks and layers are counted from 1)")
        self.train_config()  # validates training ranges

    def train_config(self):
        return TrainConfig(**{k: getattr(self, k) for k in TrainConfig.field_names()})

    def architecture(self, input_channels=None, num_classes=None, window_length=None):
        """Network description, filling size fields left at 0 from the data."""
        sizes = {
            "input_channels": self.input_channels or input_channels,
            "num_classes": self.num_classes or num_classes,
            "window_length": self.window_length or window_length,
        }
        missing = [k for k, v in sizes.items() if not v]
        if missing:
            raise ConfigError(f"cannot infer {missing} without a dataset")
        given = {k: getattr(self, k) for k in _ARCH if k not in sizes}
        return NetworkArchitecture(**given, **sizes)

    def with_overrides(self, overrides):
        """Copy with string overrides applied (same rules as the file)."""
        base = to_mapping(self)
        if "architecture" in overrides:
            del base["residual_blocks"], base["bidir_layers_per_block"]
        return from_mapping({**base, **overrides}, source="overrides")

    def digest(self):
        return hashlib.sha256(dumps(self).encode("utf-8")).hexdigest()


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_TYPES = typing.get_type_hints(ExperimentConfig)


def _coerce(key, text, source):
    kind = _TYPES[key]
    try:
        if kind is bool:
            low = text.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{source}: {key} expects {kind.__name__}, got {text!r}") from None


def from_mapping(raw, source="<config>"):
    raw = dict(raw)
    values = {}
    if "architecture" in raw:
        both = {"residual_blocks", "bidir_layers_per_block"} & set(raw)
        if both:
            raise ConfigError(f"{source}: 'architecture' conflicts with {sorted(both)}")
        n, m = parse_shorthand(raw.pop("architecture"))
        values["residual_blocks"], values["bidir_layers_per_block"] = n, m
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {unknown}; valid keys: {sorted(_FIELDS) + ['architecture']}")
    for key, text in raw.items():
        values[key] = _coerce(key, text, source)
    return ExperimentConfig(**values)


def loads(text, source="<string>"):
    return from_mapping(parse_kv(text, source), source)


def load(path):
    return from_mapping(read_kv(path), source=str(path))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_mapping(cfg):
    return {f.name: _fmt(getattr(cfg, f.name)) for f in fields(ExperimentConfig)}


def dumps(cfg):
    return format_kv(to_mapping(cfg).items(), header="harlstm experiment config")


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"override must be key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def load_grid(path):
    """Grid file: ``key = v1, v2, ...`` per line; values are coerced per key."""
    raw = read_kv(path)
    grid = {}
    for key, text in raw.items():
        if key not in _TRAIN and key not in _ARCH:
            valid = sorted(_TRAIN | _ARCH)
            raise ConfigError(f"{path}: grid key {key!r} is not a hyper-parameter; valid names: {valid}")
        items = [p.strip() for p in text.split(",") if p.strip()]
        if not items:
            raise ConfigError(f"{path}: grid key {key!r} has no values")
        grid[key] = [_coerce(key, item, str(path)) for item in items]
    if not grid:
        raise ConfigError(f"{path}: empty grid")
    return grid


def resolve_data_path(cfg, config_path):
    """``data_path`` relative to the config file's directory."""
    p = Path(cfg.data_path)
    if not p.is_absolute() and config_path is not None:
        p = Path(config_path).parent / p
    return p


