"""Named parameter storage and the finite-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, Tensor


class ParamStore:
    """Trainable parameters plus non-trainable buffers, keyed by dotted path.

    Trainable entries (``values``) receive gradients; buffers hold state such
    as batch-norm running statistics. Iteration is always in sorted path
    order so reductions and serialization are deterministic.
    """

    def __init__(self, values=None, buffers=None):
        self.values = {k: np.array(v, dtype=DTYPE) for k, v in (values or {}).items()}
        self.buffers = {k: np.array(v, dtype=DTYPE) for k, v in (buffers or {}).items()}
        self.grads = {}

    def __contains__(self, path):
        return path in self.values or path in self.buffers

    def __getitem__(self, path):
        if path in self.values:
            return self.values[path]
        return self.buffers[path]

    def __len__(self):
        return len(self.values)

    def paths(self):
        return sorted(self.values)

    def items(self):
        return [(k, self.values[k]) for k in self.paths()]

    def set(self, path, value):
        self.values[path] = np.array(value, dtype=DTYPE)

    def set_buffer(self, path, value):
        self.buffers[path] = np.array(value, dtype=DTYPE)

    def num_scalars(self):
        return int(sum(v.size for v in self.values.values()))

    def copy(self):
        out = ParamStore(self.values, self.buffers)
        out.grads = {k: v.copy() for k, v in self.grads.items()}
        return out

    def as_tensors(self, requires_grad=False):
        """Wrap every entry as a leaf Tensor. Buffers never require grad."""
        out = {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.values.items()}
        out.update({k: Tensor(v, name=k) for k, v in self.buffers.items()})
        return out

    def collect_grads(self, leaves):
        """Copy ``.grad`` off the leaves built by :meth:`as_tensors`.

        Parameters that did not take part in the graph get zero gradients.
        """
        self.grads = {}
        for path in self.paths():
            g = leaves[path].grad if path in leaves else None
            self.grads[path] = np.zeros_like(self.values[path]) if g is None else np.array(g)
        return self.grads

    def equals(self, other):
        """Bitwise equality of values and buffers."""
        if self.values.keys() != other.values.keys() or self.buffers.keys() != other.buffers.keys():
            return False
        return all(np.array_equal(self.values[k], other.values[k]) for k in self.values) and all(
            np.array_equal(self.buffers[k], other.buffers[k]) for k in self.buffers
        )


def backward_into(loss, leaves, store):
    """Run ``loss.backward()`` and return ``store``'s refreshed gradients."""
    for t in leaves.values():
        t.grad = None
    loss.backward()
    return store.collect_grads(leaves)


class GradCheckError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter_path: str
    epsilon: float
    checked: int = 0


def grad_check(loss_fn, params, epsilon=1e-5, paths=None):
    """Compare analytic gradients against central finite differences.

    Parameters
    ----------
    loss_fn : callable
        Maps a dict of path -> Tensor (as produced by
        :meth:`ParamStore.as_tensors`) to a scalar Tensor. It must be
        deterministic: no dropout, no hidden RNG draws.
    params : ParamStore
        Evaluation point. Left unchanged.
    epsilon : float
        Perturbation applied to one scalar at a time.
    paths : iterable of str, optional
        Restrict the check to these parameters.

    Returns
    -------
    GradCheckReport
        The worst ``|a - n| / max(|a|, |n|, 1e-8)`` over every scalar checked.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    leaves = params.as_tensors(requires_grad=True)
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data).all():
        raise GradCheckError("loss is not finite at the evaluation point")
    analytic = backward_into(loss, leaves, params)

    worst, worst_path, checked = 0.0, "", 0
    base = params.as_tensors()
    for path in paths if paths is not None else params.paths():
        value = params.values[path]
        for idx in np.ndindex(value.shape):
            losses = []
            for sign in (1.0, -1.0):
                bumped = value.copy()
                bumped[idx] += sign * epsilon
                trial = dict(base)
                trial[path] = Tensor(bumped, name=path)
                lv = float(loss_fn(trial).data)
                if not np.isfinite(lv):
                    raise GradCheckError(f"non-finite loss while perturbing {path}{list(idx)}")
                losses.append(lv)
            numeric = (losses[0] - losses[1]) / (2.0 * epsilon)
            a = float(analytic[path][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if err > worst or not worst_path:
                worst, worst_path = err, f"{path}{list(idx)}"
    return GradCheckReport(worst, worst_path, epsilon, checked)
