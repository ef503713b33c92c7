"""Minimal tape-based reverse-mode automatic differentiation over numpy arrays.

Only the primitives the solver networks need are provided: affine maps,
elementwise smooth nonlinearities, sums, products and squares, plus the
slicing/stacking glue used by the recurrent layer.

Usage::

    w = Tensor(np.ones((3, 1)), requires_grad=True)
    with Tape() as tape:
        loss = mean(square(matmul(x, w)))
    (gw,) = tape.gradient(loss, [w])

Outside an active tape, operations evaluate eagerly and record nothing.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import MVFBSDEError


class AutodiffError(MVFBSDEError):
    """Raised on misuse of the tape (non-scalar loss, unrecorded node...)."""


_ACTIVE: list["Tape"] = []


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        value = np.asarray(value)
        if value.dtype.kind != "f":
            value = value.astype(np.float64)
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records operations in creation order; replays them backwards.

    Nodes are appended when they are produced, so the list is already in
    topological order and the backward sweep is a single reversed pass.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def backward(self, loss: Tensor) -> None:
        if loss.value.size != 1:
            raise AutodiffError(
                f"backward needs a scalar loss, got shape {loss.value.shape}"
            )
        if loss._backward is None and not loss.requires_grad:
            raise AutodiffError("loss was not recorded on this tape")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)

    def gradient(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar loss; zeros for leaves the loss does not touch."""
        for leaf in wrt:
            leaf.grad = None
        self.backward(loss)
        return [
            np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad
            for leaf in wrt
        ]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._backward is not None):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.value.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _accumulate_at(t: Tensor, index, g: np.ndarray) -> None:
    """Scatter-add into a slice of t.grad without materialising a full copy."""
    if not (t.requires_grad or t._backward is not None):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad[index] += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _record(value: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(value)
    if _ACTIVE and any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = parents
        out._backward = backward
        _ACTIVE[-1].nodes.append(out)
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _record(a.value + b.value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _record(a.value - b.value, (a, b), backward)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record(-a.value, (a,), lambda g: _accumulate(a, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.value, a.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return _record(a.value * b.value, (a, b), backward)


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _record(a.value**2, (a,), lambda g: _accumulate(a, 2.0 * a.value * g))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise AutodiffError("matmul expects 2-D operands")

    def backward(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return _record(a.value @ b.value, (a, b), backward)


def affine(x, w, b) -> Tensor:
    """x @ w + b with one fused node."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)

    def backward(g):
        _accumulate(x, g @ w.value.T)
        _accumulate(w, x.value.T @ g)
        _accumulate(b, _unbroadcast(g, b.shape))

    return _record(x.value @ w.value + b.value, (x, w, b), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.value)
    return _record(y, (a,), lambda g: _accumulate(a, g * (1.0 - y * y)))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _record(y, (a,), lambda g: _accumulate(a, g * y * (1.0 - y)))


def total(a, axis=None) -> Tensor:
    """Sum over ``axis`` (all axes by default)."""
    a = _as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, shape))

    return _record(a.value.sum(axis=axis), (a,), backward)


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape))

    return _record(np.asarray(a.value.mean()), (a,), backward)


def columns(a, start: int, stop: int) -> Tensor:
    """a[:, start:stop] for a 2-D tensor."""
    a = _as_tensor(a)

    index = (slice(None), slice(start, stop))
    return _record(a.value[index], (a,), lambda g: _accumulate_at(a, index, g))


def row(a, j: int) -> Tensor:
    """a[j] along the leading axis."""
    a = _as_tensor(a)
    return _record(a.value[j], (a,), lambda g: _accumulate_at(a, j, g))


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    inverse = tuple(np.argsort(axes))
    return _record(
        a.value.transpose(axes), (a,), lambda g: _accumulate(a, g.transpose(inverse))
    )


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    ax = axis % parts[0].value.ndim
    edges = np.cumsum([0] + [p.value.shape[ax] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, edges[:-1], edges[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])

    return _record(
        np.concatenate([p.value for p in parts], axis=ax), tuple(parts), backward
    )


def stack(parts: Sequence, axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]

    def backward(g):
        lead = (slice(None),) * axis
        for i, p in enumerate(parts):
            _accumulate(p, g[lead + (i,)])

    return _record(np.stack([p.value for p in parts], axis=axis), tuple(parts), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _record(a.value.reshape(shape), (a,), lambda g: _accumulate(a, g.reshape(old)))
