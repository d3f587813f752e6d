"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every trainable model in the package is written in terms of the primitives
defined here, so that ``grad_check`` covers all of them.  Values are plain
``np.ndarray`` (2-D matrices are the common case; leading batch axes are
allowed and broadcast like ``np.matmul``).
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2


class Tensor:
    """A node on the tape: value, accumulated gradient and backward rule."""

    __slots__ = ("value", "grad", "parents", "op", "_backward", "requires_grad", "name")

    def __init__(
        self,
        value,
        parents: tuple["Tensor", ...] = (),
        op: str = "leaf",
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        requires_grad: bool | None = None,
        name: str | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.op = op
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(op={self.op}, shape={self.shape})"

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

    def __getitem__(self, index):
        return getitem(self, index)


def param(value, name: str | None = None) -> Tensor:
    """Leaf that receives a gradient."""
    return Tensor(value, requires_grad=True, name=name)


def const(value) -> Tensor:
    """Leaf that never receives a gradient."""
    return Tensor(value, requires_grad=False)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else const(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.value + b.value, (a, b), "add", back)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.value - b.value, (a, b), "sub", back)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Tensor(a.value * b.value, (a, b), "mul", back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.value * c, (a,), "scale", lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ValueError(f"matmul: batch dims do not broadcast, {a.shape} @ {b.shape}") from None

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape)
        return ga, gb

    return Tensor(out, (a, b), "matmul", back)


# ---------------------------------------------------------------------------
# structural


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (default: columns)."""
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ValueError("concat: no operands")
    ndim = parts[0].value.ndim
    ax = axis % ndim
    for p in parts[1:]:
        if p.value.ndim != ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ValueError(f"concat: shape mismatch {parts[0].shape} vs {p.shape} on axis {axis}")
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return Tensor(np.concatenate([p.value for p in parts], axis=ax), tuple(parts), "concat", back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    return Tensor(a.value.reshape(shape), (a,), "reshape", lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return Tensor(np.transpose(a.value, axes), (a,), "transpose", lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing."""
    out = a.value[index]

    def back(g):
        full = np.zeros_like(a.value)
        full[index] = g
        return (full,)

    return Tensor(out.copy(), (a,), "getitem", back)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    out = np.broadcast_to(a.value, shape).copy()
    return Tensor(out, (a,), "broadcast", lambda g: (_unbroadcast(g, src),))


def sum_all(a: Tensor) -> Tensor:
    src = a.shape
    return Tensor(
        np.array([[a.value.sum()]]), (a,), "sum", lambda g: (np.full(src, g.reshape(())),)
    )


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.value.size
        src = a.shape
        return Tensor(
            np.array([[a.value.mean()]]), (a,), "mean", lambda g: (np.full(src, g.reshape(()) / n),)
        )
    n = a.shape[axis]
    src = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, src).copy(),)

    return Tensor(a.value.mean(axis=axis, keepdims=keepdims), (a,), "mean", back)


# ---------------------------------------------------------------------------
# activations


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor(s, (a,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return Tensor(t, (a,), "tanh", lambda g: (g * (1.0 - t * t),))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = a.value
    pos = x > 0
    out = np.where(pos, x, slope * x)
    return Tensor(out, (a,), "leaky_relu", lambda g: (np.where(pos, g, slope * g),))


def elu(a: Tensor) -> Tensor:
    x = a.value
    neg = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    d = np.where(x > 0, 1.0, neg + 1.0)
    return Tensor(out, (a,), "elu", lambda g: (g * d,))


def glu(a: Tensor) -> Tensor:
    """Gated linear unit: split the last axis in half, ``P * sigmoid(Q)``."""
    c = a.shape[-1]
    if c % 2:
        raise ValueError(f"glu: last dim must be even, got {a.shape}")
    h = c // 2
    p, q = a.value[..., :h], a.value[..., h:]
    e = np.exp(-np.abs(q))
    s = np.where(q >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def back(g):
        return (np.concatenate([g * s, g * p * s * (1.0 - s)], axis=-1),)

    return Tensor(p * s, (a,), "glu", back)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis (row-wise for a matrix).

    Entries where ``mask`` is False get probability exactly 0.  Every row must
    keep at least one unmasked entry.
    """
    x = a.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ValueError("softmax: a row has no admissible entries")
        x = np.where(mask, x, -np.inf)
    e = x - x.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor(s, (a,), "softmax", back)


# ---------------------------------------------------------------------------
# losses


def masked_mse(pred: Tensor, target, mask) -> Tensor:
    """Mean squared error over entries where ``mask`` is nonzero."""
    target = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"masked_mse: pred {pred.shape} vs target {target.shape}")
    mask = np.broadcast_to(mask, pred.shape)
    n = mask.sum()
    if n <= 0:
        raise ValueError("masked_mse: empty mask")
    diff = (pred.value - target) * mask
    loss = float((diff * diff).sum() / n)
    return Tensor(
        np.array([[loss]]), (pred,), "masked_mse", lambda g: (g.reshape(()) * 2.0 * diff / n,)
    )


def mse(pred: Tensor, target) -> Tensor:
    return masked_mse(pred, target, np.ones(pred.shape))


# ---------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> list[np.ndarray]:
    """Populate ``.grad`` on every node reachable from ``loss``.

    Returns the gradients of ``params`` in order; a parameter the loss does
    not depend on gets an all-zero gradient.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    params = list(params)
    order = _topological(loss)
    for node in order:
        node.grad = None
    for p in params:
        p.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for p, g in zip(node.parents, node._backward(node.grad)):
            if g is None or not p.requires_grad:
                continue
            p.grad = g.copy() if p.grad is None else p.grad + g
    out = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.value)
        out.append(p.grad)
    return out
