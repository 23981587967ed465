"""Deep residual bidirectional LSTM classifier: architecture, init, forward."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import tensor as tn
from .layers import (
    ConfigError,
    GATES,
    batch_norm,
    dropout,
    residual_block_forward,
    scope,
    update_running_stats,
)
from .params import ParamStore
from .tensor import DimensionError, Tensor

# (residual, bidirectional) for the four compared variants
VARIANTS = {
    "baseline": (False, False),
    "bidir": (False, True),
    "residual": (True, False),
    "residual_bidir": (True, True),
}


@dataclass(frozen=True)
class NetworkArchitecture:
    """Declarative shape of the classifier.

    Blocks and layers are counted from 1, so ``residual_blocks=2,
    bidir_layers_per_block=2`` is the "2x2" network with 8 LSTM cells.
    """

    residual_blocks: int = 2
    bidir_layers_per_block: int = 2
    hidden_width: int = 28
    input_channels: int = 9
    num_classes: int = 6
    window_length: int = 128
    dropout_keep_prob: float = 0.85
    dropout_placement: str = "depth"
    residual: bool = True
    bidirectional: bool = True
    batch_norm: bool = True
    bn_momentum: float = 0.99
    bn_beta_init: float = 0.0

    def __post_init__(self):
        for name in ("residual_blocks", "bidir_layers_per_block", "hidden_width",
                     "input_channels", "num_classes", "window_length"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1 (indexing starts at 1), got {getattr(self, name)}")
        if not 0.0 < self.dropout_keep_prob <= 1.0:
            raise ConfigError(f"dropout_keep_prob must be in (0, 1], got {self.dropout_keep_prob}")
        if self.dropout_placement not in ("depth", "output"):
            raise ConfigError(f"dropout_placement must be 'depth' or 'output', got {self.dropout_placement!r}")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ConfigError(f"bn_momentum must be in (0, 1), got {self.bn_momentum}")

    @property
    def num_cells(self):
        per_layer = 2 if self.bidirectional else 1
        return self.residual_blocks * self.bidir_layers_per_block * per_layer

    def variant(self, name):
        residual, bidirectional = VARIANTS[name]
        return replace(self, residual=residual, bidirectional=bidirectional)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def parse_shorthand(text):
    """``"2x2"`` (or ``"2×2"``) -> ``(residual_blocks, bidir_layers_per_block)``."""
    m = re.fullmatch(r"\s*(\d+)\s*[x×X*]\s*(\d+)\s*", text)
    if not m:
        raise ConfigError(f"architecture shorthand must look like '2x2', got {text!r}")
    n, k = int(m.group(1)), int(m.group(2))
    if n < 1 or k < 1:
        raise ConfigError(f"block and layer counts start at 1, got {text!r}")
    return n, k


def block_prefix(block, layer=None):
    """1-based parameter path prefix, e.g. ``block1.layer2``."""
    return f"block{block}" if layer is None else f"block{block}.layer{layer}"


def _glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_params(arch, seed=0):
    """Fresh ParamStore for ``arch``.

    Weights are Glorot-uniform from ``default_rng([seed, 0])``; forget,
    input and output gate biases start at 1, candidate and other biases at
    0, batch-norm scale at 1 and offset at ``arch.bn_beta_init``.
    """
    rng = np.random.default_rng([seed, 0])
    h, d = arch.hidden_width, arch.input_channels
    store = ParamStore()
    store.set("input.W", _glorot(rng, h, d))
    store.set("input.b", np.zeros(h))
    directions = ("forward", "backward") if arch.bidirectional else ("forward",)
    for b in range(1, arch.residual_blocks + 1):
        for k in range(1, arch.bidir_layers_per_block + 1):
            pre = block_prefix(b, k)
            for direction in directions:
                for g in GATES:
                    store.set(f"{pre}.{direction}.W_{g}", _glorot(rng, h, 2 * h))
                    store.set(f"{pre}.{direction}.b_{g}", np.full(h, 0.0 if g == "c" else 1.0))
            store.set(f"{pre}.W_proj", _glorot(rng, h, len(directions) * h))
            store.set(f"{pre}.b_proj", np.zeros(h))
        if arch.batch_norm:
            store.set(f"block{b}.bn.alpha", np.ones(h))
            store.set(f"block{b}.bn.beta", np.full(h, arch.bn_beta_init))
            store.set_buffer(f"block{b}.bn.running_mean", np.zeros(h))
            store.set_buffer(f"block{b}.bn.running_var", np.ones(h))
    store.set("head.W", _glorot(rng, arch.num_classes, h))
    store.set("head.b", np.zeros(arch.num_classes))
    return store


def expected_shapes(arch):
    """Path -> shape for every entry :func:`init_params` creates."""
    store = init_params(arch)
    out = {k: v.shape for k, v in store.values.items()}
    out.update({k: v.shape for k, v in store.buffers.items()})
    return out


def is_weight(path):
    """Weight matrices take L2 decay; biases and batch-norm affine do not."""
    return path.rsplit(".", 1)[-1].startswith("W")


def network_forward(arch, params, X, mode="infer", rng=None, bn_stats=None):
    """Class scores ``[batch, num_classes]`` from windows ``X`` ``[batch, T, d]``.

    ``params`` is a ParamStore or a path -> Tensor mapping from
    :meth:`ParamStore.as_tensors`. Only the last time step reaches the
    output head. In train mode, dropout draws from ``rng`` and each block's
    batch statistics land in ``bn_stats`` (if given) keyed by block prefix.
    """
    if isinstance(params, ParamStore):
        params = params.as_tensors()
    X = tn.as_tensor(X)
    if X.ndim != 3 or X.shape[1:] != (arch.window_length, arch.input_channels):
        raise DimensionError(
            f"input {X.shape} does not match [batch, {arch.window_length}, {arch.input_channels}]"
        )
    if mode not in ("train", "infer"):
        raise ConfigError(f"unknown mode {mode!r}")
    keep = arch.dropout_keep_prob
    depth_dropout = arch.dropout_placement == "depth"

    out = tn.relu(_affine_steps(X, params["input.W"], params["input.b"]))
    if depth_dropout:
        out = dropout(out, keep, rng, mode)
    for b in range(1, arch.residual_blocks + 1):
        layers = [scope(params, block_prefix(b, k)) for k in range(1, arch.bidir_layers_per_block + 1)]
        out = residual_block_forward(
            layers,
            scope(params, f"block{b}.bn"),
            out,
            mode=mode,
            residual=arch.residual,
            bidirectional=arch.bidirectional,
            use_bn=arch.batch_norm,
            stats_out=bn_stats,
            key=f"block{b}.bn",
        )
        if depth_dropout:
            out = dropout(out, keep, rng, mode)
    last = out[:, arch.window_length - 1, :]
    if not depth_dropout:
        last = dropout(last, keep, rng, mode)
    return tn.add(tn.matmul(last, tn.transpose(params["head.W"])), params["head.b"])


def _affine_steps(X, W, b):
    B, T, d = X.shape
    flat = tn.reshape(X, (B * T, d))
    return tn.reshape(tn.add(tn.matmul(flat, tn.transpose(W)), b), (B, T, W.shape[0]))


def apply_bn_stats(store, bn_stats, momentum):
    """Fold batch statistics collected in train mode into the running buffers."""
    for key in sorted(bn_stats):
        mu, var = bn_stats[key]
        rm, rv = update_running_stats(
            store.buffers[f"{key}.running_mean"], store.buffers[f"{key}.running_var"], mu, var, momentum
        )
        store.set_buffer(f"{key}.running_mean", rm)
        store.set_buffer(f"{key}.running_var", rv)


def predict_scores(arch, store, X, batch_size=256):
    """Infer-mode class scores for a numpy array of windows, in fixed-size chunks."""
    tensors = store.as_tensors()
    chunks = [
        network_forward(arch, tensors, Tensor(X[i : i + batch_size]), mode="infer").data
        for i in range(0, len(X), batch_size)
    ]
    if not chunks:
        return np.zeros((0, arch.num_classes))
    return np.concatenate(chunks, axis=0)


__all__ = [
    "NetworkArchitecture",
    "VARIANTS",
    "apply_bn_stats",
    "batch_norm",
    "block_prefix",
    "expected_shapes",
    "init_params",
    "is_weight",
    "network_forward",
    "parse_shorthand",
    "predict_scores",
]
