"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation on `Tensor` records its parents and a
vector-Jacobian closure; `backward` walks the recorded graph once, in
reverse topological order, and accumulates gradients into the leaves.
The graph lives only as long as the output tensor, so consecutive
forward/backward passes are fully independent.

Gradient buffers follow one ownership rule: accumulation never mutates an
existing array (`parent.grad = parent.grad + piece`), so vjp closures are
free to hand back views of upstream gradients. Treat `.grad` as read-only.

Everything is float64. Desk-scale networks are small enough that the
precision is free, and the finite-difference gradient checks require it.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, UsageError

Array = np.ndarray

_grad_enabled: bool = True


class no_grad:
    """Context manager that disables graph recording (forward values only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_array(value) -> Array:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A dense float64 array plus an optional slot in the current graph."""

    __slots__ = ("data", "grad", "requires_grad", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._vjps: tuple = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; non-Tensor operands are treated as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other if isinstance(other, Tensor) else Tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def sum(self, axis=None):
        return tsum(self, axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def mean(self, axis=None):
        return tmean(self, axis)


def _make(data: Array, vjps: Sequence[tuple]) -> Tensor:
    """Build an op result; vjps is a sequence of (parent, closure) pairs."""
    out = Tensor(data)
    if _grad_enabled:
        live = tuple((p, fn) for p, fn in vjps if p.requires_grad)
        if live:
            out.requires_grad = True
            out._vjps = live
    return out


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Reduce `grad` back to `shape` after a broadcasted elementwise op."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        data = a.data + b.data
        return _make(data, (
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ))
    data = a.data + b
    return _make(data, ((a, lambda g: _unbroadcast(g, a.data.shape)),))


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        data = a.data - b.data
        return _make(data, (
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ))
    data = a.data - b
    return _make(data, ((a, lambda g: _unbroadcast(g, a.data.shape)),))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, ((a, lambda g: -g),))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        data = a.data * b.data
        bd, ad = b.data, a.data
        return _make(data, (
            (a, lambda g: _unbroadcast(g * bd, ad.shape)),
            (b, lambda g: _unbroadcast(g * ad, bd.shape)),
        ))
    data = a.data * b
    return _make(data, ((a, lambda g: _unbroadcast(g * b, a.data.shape)),))


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        data = a.data / b.data
        ad, bd = a.data, b.data
        return _make(data, (
            (a, lambda g: _unbroadcast(g / bd, ad.shape)),
            (b, lambda g: _unbroadcast(-g * ad / (bd * bd), bd.shape)),
        ))
    return mul(a, 1.0 / b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise UsageError("matmul expects 2-D operands")
    data = a.data @ b.data
    ad, bd = a.data, b.data
    return _make(data, (
        (a, lambda g: g @ bd.T),
        (b, lambda g: ad.T @ g),
    ))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, ((a, lambda g: g * out * (1.0 - out)),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, ((a, lambda g: g * (1.0 - out * out)),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)
    sig = sigmoid_array(a.data)
    return _make(out, ((a, lambda g: g * sig),))


def sigmoid_array(x: Array) -> Array:
    """Numerically stable sigmoid on a plain array (no graph)."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, ((a, lambda g: g * out),))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), ((a, lambda g: g / ad),))


def pow_const(a: Tensor, p: float) -> Tensor:
    """a ** p for a scalar exponent.

    Subgradient choice: where the base is exactly 0 and p < 1 the true
    derivative diverges; the contribution is defined as 0 there so that a
    saturated gate (base 0, chained through a 0-derivative sigmoid) stays
    finite instead of producing inf * 0.
    """
    ad = a.data
    out = ad ** p

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            local = np.where(ad == 0.0, 0.0, p * ad ** (p - 1.0))
        return g * local

    return _make(out, ((a, vjp),))


def maximum(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        mask = a.data >= b.data
        data = np.where(mask, a.data, b.data)
        return _make(data, (
            (a, lambda g: _unbroadcast(g * mask, a.data.shape)),
            (b, lambda g: _unbroadcast(g * ~mask, b.data.shape)),
        ))
    mask = a.data >= b
    data = np.where(mask, a.data, b)
    return _make(data, ((a, lambda g: g * mask),))


def minimum(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        mask = a.data <= b.data
        data = np.where(mask, a.data, b.data)
        return _make(data, (
            (a, lambda g: _unbroadcast(g * mask, a.data.shape)),
            (b, lambda g: _unbroadcast(g * ~mask, b.data.shape)),
        ))
    mask = a.data <= b
    data = np.where(mask, a.data, b)
    return _make(data, ((a, lambda g: g * mask),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    return minimum(maximum(a, lo), hi)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return _make(a.data.reshape(shape), ((a, lambda g: g.reshape(orig)),))


def tsum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape)
        return np.broadcast_to(np.expand_dims(g, axis), shape)

    return _make(data, ((a, vjp),))


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def concat(parts: Iterable[Tensor], axis: int = 1) -> Tensor:
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=axis)
    vjps = []
    off = 0
    for p in parts:
        w = p.data.shape[axis]
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(off, off + w)
        vjps.append((p, (lambda s: (lambda g: g[tuple(s)]))(tuple(sl))))
        off += w
    return _make(data, vjps)


def col_slice(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor."""
    data = a.data[:, start:stop]
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return full

    return _make(data, ((a, vjp),))


def custom_op(data: Array, vjps: Sequence[tuple]) -> Tensor:
    """Build an op node from precomputed forward data and hand-written vjps.

    Extension point for fused kernels: `vjps` is a sequence of
    (parent_tensor, closure) pairs where each closure maps the output
    gradient to that parent's gradient contribution. The closures of one
    node are all invoked with the same accumulated output gradient, once,
    during backward, so they may share lazily computed intermediates.
    Respects no_grad like every built-in op.
    """
    return _make(np.asarray(data, dtype=float), vjps)


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every reachable tensor that requires grad."""
    if loss.data.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise UsageError("backward target carries no graph (built under no_grad, or no input requires grad)")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._vjps:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, fn in node._vjps:
            piece = fn(g)
            if parent.grad is None:
                parent.grad = piece
            else:
                parent.grad = parent.grad + piece


def grad_map(loss: Tensor, params: dict[str, Tensor]) -> dict[str, Array]:
    """Run backward and return a gradient per named parameter.

    Parameters unreachable from the loss get exact zeros.
    """
    backward(loss)
    out = {}
    for name, p in params.items():
        out[name] = np.zeros_like(p.data) if p.grad is None else p.grad
    return out


def check_finite(value: Array | Tensor, what: str) -> None:
    arr = value.data if isinstance(value, Tensor) else value
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
