"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When at least one input requires a
gradient, the result records its parents and a backward closure; otherwise
no graph is built, which keeps inference passes cheap.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=DTYPE)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf
        that requires a gradient."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        owned = set()
        for node in _toposort(self):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            owned.discard(id(node))
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                _accumulate(grads, owned, id(parent), parent.shape, pg)


class SliceGrad:
    """Gradient that is zero outside ``index``; avoids a dense temporary."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


def _accumulate(grads, owned, key, shape, pg):
    # arrays in ``owned`` were allocated here and may be updated in place
    cur = grads.get(key)
    if isinstance(pg, SliceGrad):
        if cur is None:
            cur = np.zeros(shape, dtype=DTYPE)
        elif key not in owned:
            cur = cur.copy()
        cur[pg.index] += pg.value
        grads[key] = cur
        owned.add(key)
    elif cur is None:
        grads[key] = pg
    elif key in owned:
        cur += pg
    else:
        grads[key] = cur + pg
        owned.add(key)


def _toposort(root):
    # iterative DFS; unrolled sequences are far deeper than the recursion limit
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, backward):
    """Build an op result; ``backward`` maps the output grad to one grad per parent."""
    out = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=DTYPE)
    data.flags.writeable = False
    out.data = data
    out.grad = None
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from None
    return make_node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from None
    return make_node(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    return make_node(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def power(x, p):
    """Elementwise ``x**p`` for a constant real exponent."""
    x = as_tensor(x)
    y = x.data ** p
    return make_node(y, (x,), lambda g: (g * p * x.data ** (p - 1),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return make_node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# --------------------------------------------------------------- activations

def _stable_sigmoid(x):
    # e^x/(1+e^x) on the negative side, so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_values(x):
    """Overflow-free logistic function on a raw array.

    Uses ``0.5 * (1 + tanh(x/2))``: one transcendental call, exact 0/1
    saturation at the extremes, absolute error near machine epsilon.
    """
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x):
    x = as_tensor(x)
    y = sigmoid_values(x.data)
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh_act(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


# ----------------------------------------------------------- shape plumbing

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_node(data, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def concat_features(a, b):
    """Join two ``[..., T, h]`` tensors on the feature axis, ``a`` first."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_features needs matching leading dims: {a.shape} vs {b.shape}")
    return concat([a, b], axis=-1)


def split_features(x, width):
    """Inverse of :func:`concat_features` for a left part of ``width`` columns."""
    return getitem(x, (..., slice(None, width))), getitem(x, (..., slice(width, None)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(data, tuple(tensors), backward)


def getitem(x, index):
    x = as_tensor(x)

    def backward(g):
        if _has_advanced(index):
            full = np.zeros(x.shape, dtype=DTYPE)
            np.add.at(full, index, g)
            return (full,)
        return (SliceGrad(index, g),)

    return make_node(x.data[index], (x,), backward)


def _has_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reverse_time(x):
    """Reverse the time axis, the second-to-last one (``[T, d]`` or ``[B, T, d]``)."""
    x = as_tensor(x)
    return make_node(np.flip(x.data, axis=-2), (x,), lambda g: (np.flip(g, axis=-2),))


def reshape(x, shape):
    x = as_tensor(x)
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x):
    x = as_tensor(x)
    return make_node(x.data.T, (x,), lambda g: (g.T,))


# ---------------------------------------------------------------- reductions

def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def sigmoid_cross_entropy(logits, labels):
    """Elementwise ``max(z,0) - z*y + log(1+exp(-|z|))``; ``labels`` is constant."""
    z = as_tensor(logits)
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=DTYPE)
    if y.shape != z.shape:
        raise DimensionError(f"logits {z.shape} and labels {y.shape} differ")
    data = np.maximum(z.data, 0.0) - z.data * y + np.log1p(np.exp(-np.abs(z.data)))
    return make_node(data, (z,), lambda g: (g * (_stable_sigmoid(z.data) - y),))
