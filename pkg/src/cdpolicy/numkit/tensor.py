"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records its parents and a closure that pushes the output adjoint back
to them. ``backward`` walks the recorded nodes in exact reverse topological
order. Inside ``no_grad()`` nothing is recorded, which is how inference and
the target branch of distillation run.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shapes."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    def __add__(self, other):
        return add(self, as_tensor(other, self.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other, self.shape))

    def __rsub__(self, other):
        return sub(as_tensor(other, self.shape), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_tensor(other, self.shape))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, shape: tuple[int, ...] | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        arr = np.broadcast_to(arr, shape)
    return Tensor(arr)


def _node(data: np.ndarray, op: str, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add ``g`` into ``t.grad``; ``owned`` marks a fresh array that may be adopted without a copy."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned and g.dtype == np.float64 else np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, "add", (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, "sub", (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)

    def backward(g):
        _accum(a, g * b.data, owned=True)
        _accum(b, g * a.data, owned=True)

    return _node(a.data * b.data, "mul", (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        _accum(a, g * c, owned=True)

    return _node(a.data * c, "scale", (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - y * y), owned=True)

    return _node(y, "tanh", (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask, owned=True)

    return _node(a.data * mask, "relu", (a,), backward)


def _mish_parts(x: np.ndarray):
    # tanh(softplus(x)) = n / (n + 2) with n = e^x (e^x + 2); one exp instead of three
    e = np.exp(np.minimum(x, 20.0))
    n = e * (e + 2.0)
    th = n / (n + 2.0)
    return e, th


def mish(a: Tensor) -> Tensor:
    x = a.data
    e, th = _mish_parts(x)
    y = x * th

    def backward(g):
        # d/dx tanh(softplus(x)) = (1 - th^2) * sigmoid(x)
        sig = e / (1.0 + e)
        _accum(a, g * (th + x * (1.0 - th * th) * sig), owned=True)

    return _node(y, "mish", (a,), backward)


_ACTIVATIONS = {"mish": mish, "tanh": tanh, "relu": relu}


def activation(kind: str) -> Callable[[Tensor], Tensor]:
    try:
        return _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T, owned=True)
        if b.requires_grad:
            _accum(b, a.data.T @ g, owned=True)

    return _node(a.data @ b.data, "matmul", (a, b), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``x`` (B, n), ``w`` (n, m), ``b`` (m,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: input {x.shape} does not match weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} does not match weight {w.shape}")

    def backward(g):
        if x.requires_grad:
            _accum(x, g @ w.data.T, owned=True)
        if w.requires_grad:
            _accum(w, x.data.T @ g, owned=True)
        if b.requires_grad:
            _accum(b, g.sum(axis=0), owned=True)

    return _node(x.data @ w.data + b.data, "affine", (x, w, b), backward)


# ---------------------------------------------------------------- structure


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None

    def backward(g):
        _accum(a, g.reshape(src))

    return _node(y, "reshape", (a,), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    ax = axis % parts[0].data.ndim
    for p in parts[1:]:
        if p.data.ndim != parts[0].data.ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(p.data.ndim) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]}")

    def backward(g):
        lo = 0
        for p in parts:
            hi = lo + p.shape[ax]
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accum(p, g[tuple(idx)])
            lo = hi

    return _node(np.concatenate([p.data for p in parts], axis=ax), "concat", parts, backward)


def max_pool(a: Tensor, axis: int = 1) -> Tensor:
    """Max over one axis; the adjoint goes to the first maximizer."""
    ax = axis % a.data.ndim
    if not (_GRAD_ENABLED and a.requires_grad):
        return _node(a.data.max(axis=ax), "max_pool", (a,), None)
    idx = np.argmax(a.data, axis=ax)
    y = np.take_along_axis(a.data, np.expand_dims(idx, ax), axis=ax).squeeze(ax)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
        _accum(a, full)

    return _node(y, "max_pool", (a,), backward)


# ---------------------------------------------------------------- reductions


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the op name
    def backward(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _node(np.array(a.data.sum()), "sum", (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _node(np.array(a.data.mean()), "mean", (a,), backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    _same_shape("mse", pred, target)
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        d = (2.0 / n) * g * diff
        _accum(pred, d)
        _accum(target, -d)

    return _node(np.array(np.mean(diff * diff)), "mse", (pred, target), backward)


# ---------------------------------------------------------------- backward


def topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ShapeError(f"backward: output must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` for every named parameter leaf.

    Parameters the loss does not depend on get all-zero gradients.
    """
    for p in params.values():
        p.grad = None
    backward(loss)
    return {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for k, p in params.items()
    }


def leaves(arrays: dict[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in arrays.items()}
