"""Recurrent building blocks: LSTM cell and layer, bidirectional layer,
batch normalization, dropout and the residual block.

Parameter arguments are mappings from local names (``W_f``, ``b_proj``,
``alpha`` ...) to Tensors or arrays; :func:`scope` extracts such a mapping
from a flat path-keyed dict.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import DimensionError, Tensor

GATES = ("f", "i", "o", "c")
BN_EPS = 1e-5


class ConfigError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


def scope(params, prefix):
    """Sub-mapping of ``params`` under ``prefix.``, with the prefix removed."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


@dataclass
class LstmState:
    h: Tensor
    C: Tensor

    @classmethod
    def zeros(cls, batch, hidden):
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


def _fused_gates(params):
    # One [h+d, 4h] matrix so each step needs a single matmul. Gate order f,i,o,c
    # puts the three sigmoid gates side by side.
    W = tn.concat([params["W_" + g] for g in GATES], axis=0)
    b = tn.concat([params["b_" + g] for g in GATES], axis=0)
    return tn.transpose(W), b


def _gate_logits(h_prev, x_t, Wt, b):
    """``[h_{t-1}, x_t] @ Wt + b`` as one graph node."""
    hx = np.concatenate([h_prev.data, x_t.data], axis=1)
    n = h_prev.shape[1]

    def backward(g):
        dhx = g @ Wt.data.T
        return dhx[:, :n], dhx[:, n:], hx.T @ g, g.sum(axis=0)

    return tn.make_node(hx @ Wt.data + b.data, (h_prev, x_t, Wt, b), backward)


def _gate_activations(z, h):
    # sigmoid(u) = (1 + tanh(u/2)) / 2, so one tanh call covers all four gates
    scale = np.ones(4 * h)
    scale[: 3 * h] = 0.5
    t = np.tanh(z.data * scale)
    return 0.5 + 0.5 * t[:, : 3 * h], t[:, 3 * h :]


def _cell_update(z, C_prev, s, c_tilde, h):
    """``C_t = f*C_{t-1} + i*c_tilde`` as one graph node over gate logits ``z``."""
    f, i = s[:, :h], s[:, h : 2 * h]
    C = f * C_prev.data + i * c_tilde

    def backward(g):
        dz = np.empty(z.shape)
        dz[:, :h] = g * C_prev.data * f * (1.0 - f)
        dz[:, h : 2 * h] = g * c_tilde * i * (1.0 - i)
        dz[:, 2 * h : 3 * h] = 0.0
        dz[:, 3 * h :] = g * i * (1.0 - c_tilde * c_tilde)
        return dz, g * f

    return tn.make_node(C, (z, C_prev), backward)


def _hidden_output(z, C, s, h):
    """``h_t = o * tanh(C_t)`` as one graph node."""
    o = s[:, 2 * h :]
    tc = np.tanh(C.data)

    def backward(g):
        dz_o = g * tc * o * (1.0 - o)
        return tn.SliceGrad((slice(None), slice(2 * h, 3 * h)), dz_o), g * o * (1.0 - tc * tc)

    return tn.make_node(o * tc, (z, C), backward)


def _step(Wt, b, x_t, state):
    h = state.h.shape[1]
    if Wt.shape[0] != h + x_t.shape[1]:
        raise DimensionError(
            f"LSTM weights expect {Wt.shape[0] - h} input features, got x_t {x_t.shape}"
        )
    z = _gate_logits(state.h, x_t, Wt, b)
    s, c_tilde = _gate_activations(z, h)
    C = _cell_update(z, state.C, s, c_tilde, h)
    return LstmState(_hidden_output(z, C, s, h), C)


def lstm_cell_step(params, x_t, state):
    """Advance one LSTM cell by one time step.

    ``params`` holds ``W_f, W_i, W_c, W_o`` of shape ``[h, h+d]`` (applied
    to ``[h_{t-1}, x_t]``) and biases ``b_f, b_i, b_c, b_o`` of length h.
    """
    params = {k: tn.as_tensor(v) for k, v in params.items()}
    state = LstmState(tn.as_tensor(state.h), tn.as_tensor(state.C))
    if state.h.shape != state.C.shape:
        raise DimensionError(f"state h {state.h.shape} and C {state.C.shape} differ")
    Wt, b = _fused_gates(params)
    return _step(Wt, b, tn.as_tensor(x_t), state)


def lstm_layer_forward(params, X):
    """Unroll an LSTM over ``X`` of shape ``[batch, T, d]`` from a zero state.

    Returns the hidden output for every step, shape ``[batch, T, h]``.
    """
    X = tn.as_tensor(X)
    if X.ndim != 3:
        raise DimensionError(f"expected [batch, T, d] input, got {X.shape}")
    B, T, _ = X.shape
    if T == 0:
        raise ValueError("empty sequence: T must be at least 1")
    params = {k: tn.as_tensor(v) for k, v in params.items()}
    Wt, b = _fused_gates(params)
    state = LstmState.zeros(B, params["W_f"].shape[0])
    outputs = []
    for t in range(T):
        state = _step(Wt, b, X[:, t, :], state)
        outputs.append(state.h)
    return tn.stack(outputs, axis=1)


def _affine_time(X, W, b):
    # [B, T, k] -> [B, T, n] with W of shape [n, k]
    B, T, k = X.shape
    flat = tn.reshape(X, (B * T, k))
    out = tn.add(tn.matmul(flat, tn.transpose(W)), b)
    return tn.reshape(out, (B, T, W.shape[0]))


def bidir_layer_forward(params, X, bidirectional=True):
    """``ReLU(W_proj . concat(fwd_t, bwd_t) + b_proj)`` for every step.

    ``params`` holds ``forward.*`` and ``backward.*`` cell parameters and
    ``W_proj`` ([h, 2h]), ``b_proj``. With ``bidirectional=False`` only the
    forward cell runs and ``W_proj`` is [h, h].
    """
    X = tn.as_tensor(X)
    fwd = lstm_layer_forward(scope(params, "forward"), X)
    if bidirectional:
        bwd = tn.reverse_time(lstm_layer_forward(scope(params, "backward"), tn.reverse_time(X)))
        feats = tn.concat_features(fwd, bwd)
    else:
        feats = fwd
    W = tn.as_tensor(params["W_proj"])
    if W.shape[1] != feats.shape[-1]:
        raise DimensionError(f"W_proj {W.shape} does not accept {feats.shape[-1]} features")
    return tn.relu(_affine_time(feats, W, tn.as_tensor(params["b_proj"])))


def batch_norm(x, params, mode="train", eps=BN_EPS, stats_out=None, key=None):
    """Normalize each feature of ``x`` ([N, h]) over the N axis.

    Train mode uses batch statistics and, when ``stats_out`` is a dict,
    stores ``(mean, var)`` under ``key`` for a later running-average update.
    Infer mode uses ``running_mean``/``running_var`` and records nothing.
    """
    x = tn.as_tensor(x)
    alpha = tn.as_tensor(params["alpha"])
    beta = tn.as_tensor(params["beta"])
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError(f"batch norm needs N >= 2 rows in train mode, got {x.shape[0]}")
        mu = tn.mean(x, axis=0, keepdims=True)
        xc = tn.sub(x, mu)
        var = tn.mean(tn.mul(xc, xc), axis=0, keepdims=True)
        x_hat = tn.mul(xc, tn.power(tn.add(var, eps), -0.5))
        if stats_out is not None:
            stats_out[key] = (mu.data[0].copy(), var.data[0].copy())
    elif mode == "infer":
        rm = np.asarray(tn.as_tensor(params["running_mean"]).data)
        rv = np.asarray(tn.as_tensor(params["running_var"]).data)
        x_hat = tn.mul(tn.sub(x, rm), 1.0 / np.sqrt(rv + eps))
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return tn.add(tn.mul(x_hat, alpha), beta)


def update_running_stats(running_mean, running_var, batch_mean, batch_var, momentum):
    """Exponential moving average; returns the new (mean, var) arrays."""
    return (
        momentum * running_mean + (1.0 - momentum) * batch_mean,
        momentum * running_var + (1.0 - momentum) * batch_var,
    )


def dropout(x, keep_prob, rng=None, mode="train"):
    """Inverted dropout: survivors are scaled by ``1/keep_prob``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must be in (0, 1], got {keep_prob}")
    x = tn.as_tensor(x)
    if mode != "train" or keep_prob == 1.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs a random generator")
    mask = (rng.random(x.shape) < keep_prob) / keep_prob
    return tn.mul(x, mask)


def residual_block_forward(
    layers, bn, X, mode="train", residual=True, bidirectional=True, use_bn=True,
    stats_out=None, key=None,
):
    """Run the block's layers, add the block input back, then batch-normalize.

    ``layers`` is a list of per-layer parameter mappings, ``bn`` the block's
    batch-norm mapping.
    """
    X = tn.as_tensor(X)
    hidden = layers[0]["W_proj"].shape[0]
    if X.shape[-1] != hidden:
        raise DimensionError(
            f"block input width {X.shape[-1]} does not match hidden width {hidden}; "
            "add an input projection layer to reach width h"
        )
    out = X
    for lp in layers:
        out = bidir_layer_forward(lp, out, bidirectional=bidirectional)
    if residual:
        out = tn.add(out, X)
    if not use_bn:
        return out
    B, T, h = out.shape
    y = batch_norm(tn.reshape(out, (B * T, h)), bn, mode=mode, stats_out=stats_out, key=key)
    return tn.reshape(y, (B, T, h))
