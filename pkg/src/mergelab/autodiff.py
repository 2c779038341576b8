"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every op here dispatches on its argument types: given at least one Tensor it
records a graph node, given plain ndarrays it just computes. Forward code is
therefore written once and runs taped (training) or untaped (inference, where
the tape would only cost time).

All values are float64. Gradients accumulate into ``Tensor.grad`` when
``backward`` is called on a scalar loss.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, ShapeError


class Tensor:
    """A node in the computation graph: value, accumulated grad, and the
    closure that routes an upstream gradient to its parents."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _any_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    if not _any_tensor(a, b):
        return out

    def back(g):
        if isinstance(a, Tensor):
            _accumulate(a, _unbroadcast(g, av.shape))
        if isinstance(b, Tensor):
            _accumulate(b, _unbroadcast(g, bv.shape))

    return Tensor(out, tuple(x for x in (a, b) if isinstance(x, Tensor)), back)


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    if not _any_tensor(a, b):
        return out

    def back(g):
        if isinstance(a, Tensor):
            _accumulate(a, _unbroadcast(g, av.shape))
        if isinstance(b, Tensor):
            _accumulate(b, _unbroadcast(-g, bv.shape))

    return Tensor(out, tuple(x for x in (a, b) if isinstance(x, Tensor)), back)


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if not _any_tensor(a, b):
        return out

    def back(g):
        if isinstance(a, Tensor):
            _accumulate(a, _unbroadcast(g * bv, av.shape))
        if isinstance(b, Tensor):
            _accumulate(b, _unbroadcast(g * av, bv.shape))

    return Tensor(out, tuple(x for x in (a, b) if isinstance(x, Tensor)), back)


def affine(x, W, b):
    """x @ W.T + b with W shaped (out, in); x may be (in,) or (batch, in)."""
    xv, Wv, bv = value_of(x), value_of(W), value_of(b)
    if xv.shape[-1] != Wv.shape[1]:
        raise ShapeError(f"affine input width {xv.shape[-1]} != {Wv.shape[1]}")
    out = xv @ Wv.T + bv
    if not _any_tensor(x, W, b):
        return out

    def back(g):
        if isinstance(x, Tensor):
            _accumulate(x, g @ Wv)
        if isinstance(W, Tensor):
            gW = np.outer(g, xv) if xv.ndim == 1 else g.T @ xv
            _accumulate(W, gW)
        if isinstance(b, Tensor):
            _accumulate(b, g if xv.ndim == 1 else g.sum(axis=0))

    return Tensor(out, tuple(t for t in (x, W, b) if isinstance(t, Tensor)), back)


def relu(x):
    xv = value_of(x)
    out = np.maximum(xv, 0.0)
    if not isinstance(x, Tensor):
        return out

    def back(g):
        _accumulate(x, g * (xv > 0.0))

    return Tensor(out, (x,), back)


def sigmoid(x):
    xv = value_of(x)
    # split by sign to avoid overflow in exp
    out = np.where(xv >= 0, 1.0 / (1.0 + np.exp(-np.abs(xv))),
                   np.exp(-np.abs(xv)) / (1.0 + np.exp(-np.abs(xv))))
    if not isinstance(x, Tensor):
        return out

    def back(g):
        _accumulate(x, g * out * (1.0 - out))

    return Tensor(out, (x,), back)


def tanh(x):
    xv = value_of(x)
    out = np.tanh(xv)
    if not isinstance(x, Tensor):
        return out

    def back(g):
        _accumulate(x, g * (1.0 - out * out))

    return Tensor(out, (x,), back)


def concat(parts, axis=-1):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not _any_tensor(*parts):
        return out

    widths = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + widths)

    def back(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(part, Tensor):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                _accumulate(part, g[tuple(index)])

    return Tensor(out, tuple(p for p in parts if isinstance(p, Tensor)), back)


def sum_all(x):
    xv = value_of(x)
    out = xv.sum()
    if not isinstance(x, Tensor):
        return out

    def back(g):
        _accumulate(x, np.broadcast_to(g, xv.shape))

    return Tensor(out, (x,), back)


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every reachable Tensor's ``.grad``.

    Iterative topological order, so horizon-length recurrent chains do not
    hit the interpreter recursion limit.
    """
    if not isinstance(loss, Tensor):
        raise InvalidInputError("backward needs a Tensor (was forward taped?)")
    if loss.value.size != 1:
        raise InvalidInputError(f"loss must be scalar, got shape {loss.value.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
