"""Minimal dense-tensor reverse-mode differentiation.

Tensors wrap 2-D (or 1-D / scalar) float64 numpy arrays. Every op executed
while grad mode is on records its parents and a local backward rule; the
resulting tape is walked once in reverse topological order by `backward`.

Broadcasting is deliberately limited to the bias-add case ``(B, n) + (n,)``
and multiplication by a Python scalar. Any other shape mismatch raises
`ShapeError`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "ComputationGraph",
    "GradCheckResult",
    "backward",
    "concat",
    "grad_check",
    "grad_enabled",
    "no_grad",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("data", "requires_grad", "name", "op", "_parents", "_backward", "kink_margin")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None
        # distance of the closest input to a non-differentiable point, for kinked ops
        self.kink_margin: float | None = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def _make(self, data, parents: Sequence[Tensor], op: str, fn) -> Tensor:
        out = Tensor(data)
        out.op = op
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = fn
        return out

    # -------------------------------------------------------------- arithmetic
    def __add__(self, other) -> Tensor:
        if not isinstance(other, Tensor):
            if np.ndim(other) != 0:
                raise ShapeError("only scalars may be added to a Tensor without wrapping")
            c = float(other)
            return self._make(self.data + c, (self,), "add_scalar", lambda g: (g,))
        a, b = self.data, other.data
        if a.shape == b.shape:
            return self._make(a + b, (self, other), "add", lambda g: (g, g))
        if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
            return self._make(a + b, (self, other), "add_bias", lambda g: (g, g.sum(axis=0)))
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return self._make(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other) -> Tensor:
        if not isinstance(other, Tensor):
            return self + (-float(other))
        if self.shape != other.shape:
            raise ShapeError(f"cannot subtract shapes {self.shape} and {other.shape}")
        return self._make(self.data - other.data, (self, other), "sub", lambda g: (g, -g))

    def __rsub__(self, other) -> Tensor:
        return (-self) + other

    def __mul__(self, other) -> Tensor:
        if not isinstance(other, Tensor):
            if np.ndim(other) != 0:
                raise ShapeError("only scalars may multiply a Tensor without wrapping")
            c = float(other)
            return self._make(self.data * c, (self,), "mul_scalar", lambda g: (g * c,))
        if self.shape != other.shape:
            raise ShapeError(f"cannot multiply shapes {self.shape} and {other.shape}")
        a, b = self.data, other.data
        return self._make(a * b, (self, other), "mul", lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __matmul__(self, other: Tensor) -> Tensor:
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
        return self._make(a @ b, (self, other), "matmul", lambda g: (g @ b.T, a.T @ g))

    # ---------------------------------------------------------------- unary
    def tanh(self) -> Tensor:
        y = np.tanh(self.data)
        return self._make(y, (self,), "tanh", lambda g: (g * (1.0 - y * y),))

    def relu(self) -> Tensor:
        x = self.data
        out = self._make(np.maximum(x, 0.0), (self,), "relu", lambda g: (g * (x > 0.0),))
        out.kink_margin = float(np.min(np.abs(x))) if x.size else None
        return out

    def exp(self) -> Tensor:
        y = np.exp(self.data)
        return self._make(y, (self,), "exp", lambda g: (g * y,))

    def square(self) -> Tensor:
        x = self.data
        return self._make(x * x, (self,), "square", lambda g: (2.0 * x * g,))

    def sum(self, axis: int | None = None) -> Tensor:
        x = self.data
        if axis is None:
            return self._make(np.sum(x), (self,), "sum", lambda g: (np.broadcast_to(g, x.shape).copy(),))
        if x.ndim != 2 or axis not in (0, 1):
            raise ShapeError("axis sums are only defined for 2-D tensors")

        def _back(g):
            return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

        return self._make(np.sum(x, axis=axis), (self,), f"sum{axis}", _back)

    def mean(self) -> Tensor:
        return self.sum() * (1.0 / self.data.size)

    def cols(self, start: int, stop: int) -> Tensor:
        """Column slice ``[:, start:stop]`` of a 2-D tensor."""
        x = self.data
        if x.ndim != 2:
            raise ShapeError("cols() needs a 2-D tensor")

        def _back(g):
            full = np.zeros_like(x)
            full[:, start:stop] = g
            return (full,)

        return self._make(x[:, start:stop].copy(), (self,), "cols", _back)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate 2-D tensors along columns (axis=1) or rows (axis=0)."""
    arrays = [t.data for t in tensors]
    if any(a.ndim != 2 for a in arrays):
        raise ShapeError("concat needs 2-D tensors")
    other = 1 - axis
    if len({a.shape[other] for a in arrays}) != 1:
        raise ShapeError(f"concat mismatch: {[a.shape for a in arrays]}")
    bounds = np.cumsum([0] + [a.shape[axis] for a in arrays])

    def _back(g):
        if axis == 1:
            return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(arrays)))
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(arrays)))

    return tensors[0]._make(np.concatenate(arrays, axis=axis), tuple(tensors), "concat", _back)


@dataclass
class ComputationGraph:
    """Recorded tape: nodes in topological order plus the named leaves."""

    nodes: list[Tensor]
    parameters: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def trace(cls, loss: Tensor, parameters: Mapping[str, Tensor] | None = None) -> ComputationGraph:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order, dict(parameters or {}))

    def kink_margins(self) -> list[float]:
        return [n.kink_margin for n in self.nodes if n.kink_margin is not None]


def backward(loss: Tensor, parameters: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar `loss` with respect to every named parameter.

    Parameters that the loss does not depend on get a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = ComputationGraph.trace(loss, parameters)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return {
        name: grads.get(id(p), np.zeros_like(p.data)).reshape(p.data.shape)
        for name, p in parameters.items()
    }


@dataclass
class GradCheckResult:
    max_error: float
    per_parameter: dict[str, float]
    absolute: dict[str, bool]
    unreliable: bool

    def passed(self, tol: float) -> bool:
        return self.max_error < tol and not self.unreliable


def grad_check(
    loss_fn: Callable[[], Tensor],
    parameters: Mapping[str, Tensor],
    epsilon: float = 1e-6,
    floor: float = 1e-10,
) -> GradCheckResult:
    """Compare `backward` against central finite differences.

    Error per parameter tensor is ``|a - n| / (|a| + |n| + 1e-12)`` using
    Euclidean norms. When both norms fall below `floor` the absolute error is
    reported instead. The check is flagged unreliable when a kinked op (relu)
    has an input within `10 * epsilon` of its kink.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    loss = loss_fn()
    graph = ComputationGraph.trace(loss, parameters)
    unreliable = any(m <= 10.0 * epsilon for m in graph.kink_margins())
    analytic = backward(loss, parameters)

    per_param: dict[str, float] = {}
    absolute: dict[str, bool] = {}
    with no_grad():
        for name, p in parameters.items():
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            numeric = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                plus = loss_fn().item()
                flat[i] = orig - epsilon
                minus = loss_fn().item()
                flat[i] = orig
                numeric[i] = (plus - minus) / (2.0 * epsilon)
            a = analytic[name].reshape(-1)
            diff = float(np.linalg.norm(a - numeric))
            scale = float(np.linalg.norm(a) + np.linalg.norm(numeric))
            if scale < floor:
                per_param[name] = diff
                absolute[name] = True
            else:
                per_param[name] = diff / (scale + 1e-12)
                absolute[name] = False
    worst = max(per_param.values(), default=0.0)
    return GradCheckResult(worst, per_param, absolute, unreliable)
