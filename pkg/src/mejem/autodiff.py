"""Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive records its parents and a local backward rule on the output
tensor (define-by-run). :func:`backward` linearises the recorded graph into a
tape in topological order and replays it once in reverse.

Only leaf tensors (``requires_grad=True`` and no parents) receive ``.grad``;
gradients accumulate across calls until :meth:`Tensor.zero_grad`.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "tensor",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "relu",
    "square",
    "hinge",
    "logsumexp",
    "softmax",
    "gather",
    "take_rows",
    "concat",
    "sum",
    "mean",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, parents: Sequence[Tensor], rule: Callable, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
        out.op = op
    return out


def _tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    if root.shape != ():
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones((), dtype=np.float64)}
    for node in reversed(_tape(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), rule, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a row vector added to every row of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _record(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return _record(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)
    return _record(x.data * c, (x,), lambda g: (g * c,), "scale")


def neg(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _record(-x.data, (x,), lambda g: (-g,), "neg")


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def square(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _record(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


def hinge(x: Tensor, c: float = 0.0) -> Tensor:
    """max(x - c, 0) elementwise; zero subgradient at the kink."""
    x = _as_tensor(x)
    shifted = x.data - float(c)
    mask = shifted > 0
    return _record(np.where(mask, shifted, 0.0), (x,), lambda g: (g * mask,), "hinge")


def logsumexp(x: Tensor) -> Tensor:
    """Stable log-sum-exp over the last axis of an ``[n, K]`` (or ``[K]``) tensor."""
    x = _as_tensor(x)
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"logsumexp over an empty axis: shape {x.shape}")
    m = np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (m + np.log(s))[..., 0]
    p = e / s

    def rule(g):
        return (g[..., None] * p,)

    return _record(out, (x,), rule, "logsumexp")


def softmax(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax over an empty axis: shape {x.shape}")
    e = np.exp(x.data - np.max(x.data, axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return _record(p, (x,), rule, "softmax")


def gather(x: Tensor, index) -> Tensor:
    """Pick ``x[i, index[i]]`` for every row of an ``[n, K]`` tensor."""
    x = _as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape != (x.shape[0],):
        raise DimensionError(f"gather shape mismatch: {x.shape} by index {idx.shape}")
    rows = np.arange(x.shape[0])

    def rule(g):
        out = np.zeros_like(x.data)
        np.add.at(out, (rows, idx), g)
        return (out,)

    return _record(x.data[rows, idx], (x,), rule, "gather")


def take_rows(x: Tensor, rows) -> Tensor:
    x = _as_tensor(x)
    rows = np.asarray(rows, dtype=np.int64)

    def rule(g):
        out = np.zeros_like(x.data)
        np.add.at(out, rows, g)
        return (out,)

    return _record(x.data[rows], (x,), rule, "take_rows")


def concat(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[0] for p in parts])[:-1]
    trailing = {p.shape[1:] for p in parts}
    if len(trailing) != 1:
        raise DimensionError(f"concat shape mismatch: {[p.shape for p in parts]}")

    def rule(g):
        return tuple(np.split(g, sizes, axis=0))

    return _record(np.concatenate([p.data for p in parts], axis=0), parts, rule, "concat")


def sum(x: Tensor) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    return _record(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    return _record(np.mean(x.data), (x,), lambda g: (np.full(x.shape, g / n),), "mean")
