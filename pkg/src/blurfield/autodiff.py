"""Reverse-mode automatic differentiation over dense float64 tensors.

A Graph is an append-only tape of operation records. Ops compute with numpy
eagerly and, when a graph is active and an input requires gradients, push a
record holding a vector-Jacobian closure. backward() replays the tape in
reverse. Dense tensors only; slices copy.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np
from scipy.special import expit

_uid = itertools.count()
_tls = threading.local()


def _active_graph():
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Value node: float64 ndarray plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "uid", "name", "_creator")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.uid = next(_uid)
        self.name = name
        self._creator = None  # graph that produced this tensor, if any

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays become constant tensors
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return slice_op(self, key)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("out_uid", "parents", "vjp", "op")

    def __init__(self, out_uid, parents, vjp, op):
        self.out_uid = out_uid
        self.parents = parents
        self.vjp = vjp
        self.op = op


class Graph:
    """Append-only operation tape; use as a context manager around a step."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_tls, "stack"):
            _tls.stack = []
        _tls.stack.append(self)
        return self

    def __exit__(self, *exc):
        _tls.stack.pop()
        return False


def record(out, parents, vjp, op):
    """Attach a tape record for `out`; returns `out` for chaining."""
    g = _active_graph()
    if g is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._creator = g
        g.nodes.append(_Record(out.uid, parents, vjp, op))
    return out


def custom(parents, out_data, vjp, op="custom"):
    """Fused operation: caller supplies forward value and the vjp closure.

    vjp(gout) must return one gradient array (or None) per parent, already
    reduced to the parent's shape.
    """
    return record(Tensor(out_data), list(parents), vjp, op)


def backward(graph, loss):
    """Accumulate d(loss)/d(leaf) into .grad for every leaf on the tape."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    grads = {loss.uid: np.ones_like(loss.data)}
    for rec in reversed(graph.nodes):
        g = grads.pop(rec.out_uid, None)
        if g is None:
            continue
        pgrads = rec.vjp(g)
        for p, pg in zip(rec.parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if p._creator is graph:
                if p.uid in grads:
                    grads[p.uid] += pg
                else:
                    # copy: vjp outputs may alias forward buffers
                    grads[p.uid] = np.array(pg, dtype=np.float64, copy=True)
            else:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += pg


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(
            f"{op}: incompatible shapes {a.data.shape} and {b.data.shape}"
        ) from None


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record(out, [a, b], vjp, "add")


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return record(out, [a, b], vjp, "sub")


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return record(out, [a, b], vjp, "mul")


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("div", a, b)
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return record(out, [a, b], vjp, "div")


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    out = Tensor(a.data @ b.data)

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return record(out, [a, b], vjp, "matmul")


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    x = _wrap(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))
    axes = _axis_tuple(axis, x.data.ndim)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape),)

    return record(out, [x], vjp, "sum")


def mean(x, axis=None, keepdims=False):
    x = _wrap(x)
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    axes = _axis_tuple(axis, x.data.ndim)
    count = 1
    for a in axes:
        count *= x.data.shape[a]

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.data.shape),)

    return record(out, [x], vjp, "mean")


def exp(x):
    x = _wrap(x)
    out = Tensor(np.exp(x.data))
    y = out.data

    def vjp(g):
        return (g * y,)

    return record(out, [x], vjp, "exp")


def log(x):
    x = _wrap(x)
    out = Tensor(np.log(x.data))

    def vjp(g):
        return (g / x.data,)

    return record(out, [x], vjp, "log")


def sqrt(x):
    x = _wrap(x)
    out = Tensor(np.sqrt(x.data))
    y = out.data

    def vjp(g):
        return (g * (0.5 / y),)

    return record(out, [x], vjp, "sqrt")


def power(x, p):
    x = _wrap(x)
    p = float(p)
    out = Tensor(x.data**p)

    def vjp(g):
        return (g * p * x.data ** (p - 1.0),)

    return record(out, [x], vjp, "power")


def relu(x):
    x = _wrap(x)
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0

    def vjp(g):
        return (g * mask,)

    return record(out, [x], vjp, "relu")


def softplus(x):
    x = _wrap(x)
    out = Tensor(np.logaddexp(0.0, x.data))
    s = expit(x.data)

    def vjp(g):
        return (g * s,)

    return record(out, [x], vjp, "softplus")


def sigmoid(x):
    x = _wrap(x)
    y = expit(x.data)
    out = Tensor(y)

    def vjp(g):
        return (g * y * (1.0 - y),)

    return record(out, [x], vjp, "sigmoid")


def tanh(x):
    x = _wrap(x)
    y = np.tanh(x.data)
    out = Tensor(y)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return record(out, [x], vjp, "tanh")


def sin(x):
    x = _wrap(x)
    out = Tensor(np.sin(x.data))

    def vjp(g):
        return (g * np.cos(x.data),)

    return record(out, [x], vjp, "sin")


def cos(x):
    x = _wrap(x)
    out = Tensor(np.cos(x.data))

    def vjp(g):
        return (-g * np.sin(x.data),)

    return record(out, [x], vjp, "cos")


def clip(x, lo, hi):
    """Clamp with straight-through gradient strictly inside (lo, hi)."""
    x = _wrap(x)
    out = Tensor(np.clip(x.data, lo, hi))
    mask = (x.data > lo) & (x.data < hi)

    def vjp(g):
        return (g * mask,)

    return record(out, [x], vjp, "clip")


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.array(p, copy=True) for p in np.split(g, splits, axis=axis))

    return record(out, tensors, vjp, "concat")


def stack(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(np.array(moved[i], copy=True) for i in range(len(tensors)))

    return record(out, tensors, vjp, "stack")


def slice_op(x, key):
    """Basic slicing; returns a copy (dense tensors, no views)."""
    x = _wrap(x)
    out = Tensor(np.array(x.data[key], copy=True))

    def vjp(g):
        # basic slicing cannot repeat elements, so scatter-assign-add suffices
        gx = np.zeros_like(x.data)
        gx[key] += g
        return (gx,)

    return record(out, [x], vjp, "slice")


def broadcast_to(x, shape):
    x = _wrap(x)
    shape = tuple(shape)
    try:
        out = Tensor(np.broadcast_to(x.data, shape).copy())
    except ValueError:
        raise ValueError(
            f"broadcast: cannot broadcast {x.data.shape} to {shape}"
        ) from None

    def vjp(g):
        return (_unbroadcast(g, x.data.shape),)

    return record(out, [x], vjp, "broadcast")


def reshape(x, shape):
    x = _wrap(x)
    out = Tensor(x.data.reshape(shape).copy())

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return record(out, [x], vjp, "reshape")


def transpose(x, axes):
    """Permute array dimensions."""
    x = _wrap(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ValueError(
            f"transpose: axes {axes} is not a permutation of "
            f"0..{x.data.ndim - 1}")
    inv = tuple(int(i) for i in np.argsort(axes))
    out = Tensor(np.transpose(x.data, axes).copy())

    def vjp(g):
        return (np.transpose(g, inv),)

    return record(out, [x], vjp, "transpose")


def take_rows(table, idx):
    """Row gather from a 2D table by an integer index array."""
    table = _wrap(table)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(table.data[idx])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return record(out, [table], vjp, "take_rows")


def softmax(x, axis=-1):
    """Numerically stable softmax; the max shift is treated as a constant."""
    x = _wrap(x)
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = exp(sub(x, Tensor(shift)))
    return div(e, sum_(e, axis=axis, keepdims=True))


__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "custom",
    "record",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "sum_",
    "mean",
    "exp",
    "log",
    "sqrt",
    "power",
    "relu",
    "softplus",
    "sigmoid",
    "tanh",
    "sin",
    "cos",
    "clip",
    "concat",
    "stack",
    "slice_op",
    "broadcast_to",
    "reshape",
    "transpose",
    "take_rows",
    "softmax",
]
