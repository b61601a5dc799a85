"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Graph` is an append-only list of nodes.  Every op applied to a tensor
that belongs to a graph appends a node holding the forward value and a
vector-Jacobian closure; :func:`backward` walks the list once in reverse.
Tensors built outside a graph carry no node and operate as plain constants,
so model code runs unchanged for evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels

SQRT_EPS = 1e-12


class AutodiffError(ValueError):
    pass


@dataclass
class _Node:
    kind: str
    inputs: tuple
    value: np.ndarray
    vjp: Optional[Callable]
    is_param: bool = False


@dataclass
class Graph:
    nodes: list = field(default_factory=list)

    def _append(self, kind, inputs, value, vjp, is_param=False) -> "Tensor":
        self.nodes.append(_Node(kind, tuple(inputs), value, vjp, is_param))
        return Tensor(value, graph=self, node_id=len(self.nodes) - 1)

    def param(self, value) -> "Tensor":
        """Leaf whose gradient :func:`backward` reports."""
        return self._append("param", (), np.array(value, dtype=np.float64), None, True)

    def constant(self, value) -> "Tensor":
        return self._append("const", (), np.array(value, dtype=np.float64), None)

    def params(self):
        return [i for i, n in enumerate(self.nodes) if n.is_param]


class Tensor:
    __slots__ = ("value", "graph", "node_id")
    __array_priority__ = 100

    def __init__(self, value, graph: Optional[Graph] = None, node_id: Optional[int] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.graph = graph
        self.node_id = node_id

    @property
    def shape(self):
        return self.value.shape

    @property
    def data(self):
        return self.value.ravel()

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        tag = "" if self.node_id is None else f", node={self.node_id}"
        return f"Tensor({self.value!r}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _graph_of(tensors: Sequence[Tensor]) -> Optional[Graph]:
    graph = None
    for t in tensors:
        if t.graph is None:
            continue
        if graph is None:
            graph = t.graph
        elif t.graph is not graph:
            raise AutodiffError("tensors belong to different graphs")
    return graph


def _record(kind: str, inputs: Sequence[Tensor], value: np.ndarray, vjp) -> Tensor:
    graph = _graph_of(inputs)
    if graph is None:
        return Tensor(value)
    ids = tuple(t.node_id if t.graph is graph else None for t in inputs)
    return graph._append(kind, ids, value, vjp)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(kind, a: Tensor, b: Tensor):
    if a.shape == b.shape:
        return a.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise AutodiffError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _record("add", (a, b), a.value + b.value,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _record("sub", (a, b), a.value - b.value,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _record("mul", (a, b), av * bv,
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _record("div", (a, b), out,
                   lambda g: (_unbroadcast(g / bv, av.shape),
                              _unbroadcast(-g * out / bv, bv.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[1] != bv.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

    def vjp(g):
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return _record("matmul", (a, b), av @ bv, vjp)


# -- elementwise unary ------------------------------------------------------

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", (a,), -a.value, lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _record("log", (a,), np.log(av), lambda g: (g / av,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.value, 0.0)
    return _record("relu", (a,), out, lambda g: (g * (out > 0),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def sqrt(a) -> Tensor:
    """Square root with the derivative evaluated at ``a + 1e-12``."""
    a = as_tensor(a)
    av = a.value
    return _record("sqrt", (a,), np.sqrt(av),
                   lambda g: (g * 0.5 / np.sqrt(av + SQRT_EPS),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.value)
    return _record("abs", (a,), np.abs(a.value), lambda g: (g * sign,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    p = float(exponent)
    return _record("pow", (a,), av ** p, lambda g: (g * p * av ** (p - 1.0),))


def clip_max(a, upper: float) -> Tensor:
    """min(a, upper); zero gradient where clamped."""
    a = as_tensor(a)
    mask = a.value < upper
    return _record("clip_max", (a,), np.minimum(a.value, upper), lambda g: (g * mask,))


def clip_min(a, lower: float) -> Tensor:
    """max(a, lower); zero gradient where clamped."""
    a = as_tensor(a)
    mask = a.value > lower
    return _record("clip_min", (a,), np.maximum(a.value, lower), lambda g: (g * mask,))


# -- reductions -------------------------------------------------------------

def _expand(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    return _record("sum", (a,), np.sum(a.value, axis=axis),
                   lambda g: (_expand(g, shape, axis).copy(),))


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    count = a.value.size if axis is None else shape[axis]
    return _record("mean", (a,), np.mean(a.value, axis=axis),
                   lambda g: (_expand(g, shape, axis) / count,))


def max(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    """Evaluation-only maximum: the result is cut from the graph."""
    a = as_tensor(a)
    return Tensor(np.max(a.value, axis=axis))


def softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record("softmax", (a,), out, vjp)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _record("log_softmax", (a,), out, vjp)


# -- indexing / shape -------------------------------------------------------

def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    basic = isinstance(index, (slice, int)) or (
        isinstance(index, tuple) and all(isinstance(i, (slice, int)) for i in index))

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record("getitem", (a,), a.value[index], vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(old),))


def take_rows(a, cols) -> Tensor:
    """out[i] = a[i, cols[i]] for a 2-D tensor."""
    a = as_tensor(a)
    cols = np.asarray(cols, dtype=np.intp)
    if a.value.ndim != 2 or cols.shape != (a.shape[0],):
        raise AutodiffError(f"take_rows: incompatible shapes {a.shape} and {cols.shape}")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[rows, cols] = g
        return (full,)

    return _record("take_rows", (a,), a.value[rows, cols], vjp)


# -- fused kernel -----------------------------------------------------------

def laplacian_quadform(r, w, bandwidth: float) -> Tensor:
    """s = sum_ij w_i w_j exp(-|r_i - r_j| / bandwidth) over 1-D ``r`` and ``w``."""
    r, w = as_tensor(r), as_tensor(w)
    if r.value.ndim != 1 or r.shape != w.shape:
        raise AutodiffError(f"laplacian_quadform: incompatible shapes {r.shape} and {w.shape}")
    s, kw, dr = _kernels.laplacian_quadform(r.value, w.value, float(bandwidth))
    return _record("laplacian_quadform", (r, w), np.float64(s),
                   lambda g: (g * dr, g * 2.0 * kw))


# -- backward ---------------------------------------------------------------

class Gradients(dict):
    """node-id -> gradient array; also indexable by the parameter tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            if key.node_id is None:
                raise AutodiffError("tensor is not part of a graph")
            key = key.node_id
        return dict.__getitem__(self, key)


def backward(root: Tensor) -> Gradients:
    """Gradients of scalar ``root`` w.r.t. every parameter leaf of its graph."""
    if root.graph is None or root.node_id is None:
        raise AutodiffError("backward: root is not part of a graph")
    if root.value.size != 1:
        raise AutodiffError(f"backward: root must be scalar, got shape {root.shape}")
    nodes = root.graph.nodes
    adj: list = [None] * (root.node_id + 1)
    adj[root.node_id] = np.ones_like(root.value)
    for i in range(root.node_id, -1, -1):
        g = adj[i]
        node = nodes[i]
        if g is None or node.vjp is None:
            continue
        for src, gi in zip(node.inputs, node.vjp(g)):
            if src is None:
                continue
            adj[src] = gi if adj[src] is None else adj[src] + gi
    out = Gradients()
    for i, node in enumerate(nodes):
        if node.is_param:
            g = adj[i] if i < len(adj) else None
            out[i] = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=np.float64)
    return out


def grad(root: Tensor, tensor: Tensor) -> np.ndarray:
    if tensor.graph is None or tensor.node_id is None:
        raise AutodiffError("cannot take the gradient of a tensor outside any graph")
    return backward(root)[tensor.node_id]
