"""Reverse-mode differentiation over numpy arrays.

A :class:`GradTape` records every op whose inputs depend on a registered
parameter. Ops are plain functions taking and returning :class:`Node`; nodes
built only from constants are never recorded, so frozen weights cost nothing
on the backward pass.

    tape = GradTape()
    p = tape.param(np.ones((2, 3)), "p")
    loss = sum_all(mul(p, p))
    grads = tape.backward(loss)      # {"p": 2 * ones}
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .errors import NumericError, ShapeError, UsageError


class Node:
    __slots__ = ("value", "tape", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, tape=None, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        tag = self.name or ("param" if self.requires_grad else "const")
        return f"Node({tag}, shape={self.value.shape})"


class GradTape:
    """Single-writer record of differentiable ops for one training step."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def param(self, value, name: str) -> Node:
        if name in self.params:
            raise UsageError(f"parameter {name!r} registered twice")
        node = Node(np.asarray(value, dtype=np.float64), self, True, name=name)
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64))

    def _record(self, node: Node):
        self.nodes.append(node)

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        if loss.value.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads = {name: np.zeros_like(p.value) for name, p in self.params.items()}
        if not loss.requires_grad:
            return grads
        acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        # creation order is a topological order, so reversing it visits each node once
        for node in reversed(self.nodes):
            g = acc.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.backward_fn is None:
                    grads[parent.name] = grads[parent.name] + pg
                else:
                    key = id(parent)
                    acc[key] = acc[key] + pg if key in acc else pg
        return grads


def const(value) -> Node:
    return Node(np.asarray(value, dtype=np.float64))


def _lift(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _make(value, parents: tuple, backward_fn: Callable) -> Node:
    tape = next((p.tape for p in parents if p.requires_grad), None)
    if tape is None:
        return Node(value)
    node = Node(value, tape, True, parents, backward_fn)
    tape._record(node)
    return node


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it flows into."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return _make(a.value + b.value, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    return _make(a.value - b.value, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (unbroadcast(g * bv, av.shape), unbroadcast(g * av, bv.shape)))


def div(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (unbroadcast(g / bv, av.shape), unbroadcast(-g * out / bv, bv.shape)))


def scale(a: Node, c: float) -> Node:
    return _make(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    out = T.matmul(av, bv)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb

    return _make(out, (a, b), back)


def transpose(a: Node) -> Node:
    return _make(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Node, shape) -> Node:
    old = a.value.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(nodes, axis: int = 0) -> Node:
    nodes = [_lift(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def take(a: Node, index, axis: int = 0) -> Node:
    """Select entries along one axis by integer index array or slice."""
    idx = np.arange(a.value.shape[axis])[index] if isinstance(index, slice) else np.asarray(index)
    out = np.take(a.value, idx, axis=axis)

    def back(g):
        full = np.zeros_like(a.value)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _make(out, (a,), back)


def sum_all(a: Node) -> Node:
    return _make(np.array(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sum_axis(a: Node, axis: int, keepdims: bool = False) -> Node:
    shape = a.value.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean_axis(a: Node, axis: int, keepdims: bool = False) -> Node:
    return scale(sum_axis(a, axis, keepdims), 1.0 / a.value.shape[axis])


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Node) -> Node:
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def sigmoid(a: Node) -> Node:
    s = T.sigmoid(a.value)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Node) -> Node:
    x = a.value
    s = T.sigmoid(x)
    return _make(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),))


def softplus(a: Node) -> Node:
    x = a.value
    return _make(T.softplus(x), (a,), lambda g: (g * T.sigmoid(x),))


def softmax_rows(a: Node) -> Node:
    s = T.softmax_rows(a.value)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (a,), back)


def log_softmax_rows(a: Node) -> Node:
    out = T.log_softmax_rows(a.value)
    s = np.exp(out)
    return _make(out, (a,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


def bce_with_logits(x: Node, target: np.ndarray) -> Node:
    """Elementwise binary cross-entropy of logits against a fixed 0/1 target."""
    xv = x.value
    out = np.maximum(xv, 0.0) - xv * target + np.log1p(np.exp(-np.abs(xv)))
    return _make(out, (x,), lambda g: (g * (T.sigmoid(xv) - target),))


def layer_norm(x: Node, gamma=None, beta=None, eps: float = 1e-5) -> Node:
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(xv.var(axis=-1, keepdims=True) + eps)
    xhat = (xv - mu) * inv
    n = xv.shape[-1]

    def back(g):
        gx = inv / n * (n * g - g.sum(axis=-1, keepdims=True)
                        - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        return (gx,)

    out = _make(xhat, (x,), back)
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out


def dwconv1d(x: Node, kernel, bias=None) -> Node:
    x, kernel = _lift(x), _lift(kernel)
    xv, kv = x.value, kernel.value
    n = xv.shape[0]
    k = kv.shape[0]
    left = (k - 1) // 2
    out = T.dwconv1d(xv, kv)

    def back(g):
        gp = np.zeros((n + k - 1, xv.shape[1]))
        xp = np.zeros_like(gp)
        xp[left:left + n] = xv
        gk = np.zeros_like(kv)
        for i in range(k):
            gp[i:i + n] += g * kv[i]
            gk[i] = (g * xp[i:i + n]).sum(axis=0)
        return gp[left:left + n], gk

    node = _make(out, (x, kernel), back)
    if bias is not None:
        node = add(node, bias)
    return node


def check_finite(node: Node, what: str = "value"):
    if not np.all(np.isfinite(node.value)):
        raise NumericError(f"non-finite entries in {what}")


def linear(x, w, b=None) -> Node:
    """Affine projection x @ w (+ b)."""
    if _lift(w).value.shape[0] != _lift(x).value.shape[-1]:
        raise ShapeError(f"linear: input {_lift(x).value.shape} vs weight {_lift(w).value.shape}")
    out = matmul(x, w)
    return add(out, b) if b is not None else out
