"""Minimal reverse-mode automatic differentiation on float64 numpy arrays."""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "ShapeError",
    "Value",
    "constant",
    "param",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "slice_axis",
    "tanh",
    "sigmoid",
    "gelu",
    "exp",
    "log",
    "sqrt",
    "square",
    "softmax",
    "l2_normalize",
    "cosine_similarity",
    "mean",
    "sum_",
    "min_over_axis",
    "max_over_axis",
    "backward",
    "gradients",
    "zero_grad",
]

_NORM_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes do not conform; message names both shapes."""


class Value:
    """Node in the computation graph: a dense array plus gradient plumbing.

    `data` is always a float64 ndarray. `grad` is filled in by backward()
    and has the same shape as `data`. Graphs are acyclic by construction;
    parent order is fixed, which makes the backward traversal deterministic.
    """

    __slots__ = ("data", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(
        self,
        data,
        parents: tuple = (),
        op: str = "leaf",
        requires_grad: bool = False,
        backward_fn: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._backward = backward_fn

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Value(op={self.op!r}, shape={self.data.shape})"

    # operator sugar; scalars and arrays are promoted to constants
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return mul(self, constant(-1.0))


def constant(data) -> Value:
    return Value(data, op="const", requires_grad=False)


def param(data) -> Value:
    return Value(data, op="param", requires_grad=True)


def _lift(x) -> Value:
    return x if isinstance(x, Value) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` by summing over broadcast axes."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcastable(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise binary ops

def add(a: Value, b: Value) -> Value:
    a, b = _lift(a), _lift(b)
    _broadcastable(a.data, b.data, "add")
    out = Value(a.data + b.data, (a, b), "add")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    out._backward = bwd
    return out


def sub(a: Value, b: Value) -> Value:
    a, b = _lift(a), _lift(b)
    _broadcastable(a.data, b.data, "sub")
    out = Value(a.data - b.data, (a, b), "sub")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    out._backward = bwd
    return out


def mul(a: Value, b: Value) -> Value:
    a, b = _lift(a), _lift(b)
    _broadcastable(a.data, b.data, "mul")
    out = Value(a.data * b.data, (a, b), "mul")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = bwd
    return out


def div(a: Value, b: Value) -> Value:
    a, b = _lift(a), _lift(b)
    _broadcastable(a.data, b.data, "div")
    out = Value(a.data / b.data, (a, b), "div")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# linear algebra / structure

def matmul(a: Value, b: Value) -> Value:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform")
    out = Value(a.data @ b.data, (a, b), "matmul")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out._backward = bwd
    return out


def transpose(a: Value) -> Value:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got shape {a.data.shape}")
    out = Value(a.data.T, (a,), "transpose")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.T)

    out._backward = bwd
    return out


def reshape(a: Value, shape: Sequence[int]) -> Value:
    shape = tuple(shape)
    if int(np.prod(a.data.shape)) != int(np.prod(shape)):
        raise ShapeError(f"reshape: cannot reshape {a.data.shape} to {shape}")
    out = Value(a.data.reshape(shape), (a,), "reshape")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    out._backward = bwd
    return out


def concat(parts: Iterable[Value], axis: int = 0) -> Value:
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input")
    ref = parts[0].data.shape
    for p in parts[1:]:
        if len(p.data.shape) != len(ref):
            raise ShapeError(f"concat: rank mismatch {ref} vs {p.data.shape}")
    out = Value(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), "concat")
    sizes = [p.data.shape[axis] for p in parts]

    def bwd(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                p.accumulate(g[tuple(index)])
            offset += size

    out._backward = bwd
    return out


def slice_axis(a: Value, axis: int, start: int, stop: int) -> Value:
    n = a.data.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of bounds for axis {axis} of {a.data.shape}")
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Value(a.data[index], (a,), "slice")

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            a.accumulate(full)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def tanh(a: Value) -> Value:
    y = np.tanh(a.data)
    out = Value(y, (a,), "tanh")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - y * y))

    out._backward = bwd
    return out


def sigmoid(a: Value) -> Value:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Value(y, (a,), "sigmoid")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * y * (1.0 - y))

    out._backward = bwd
    return out


def gelu(a: Value) -> Value:
    """Exact (erf-based) gaussian error linear unit."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    out = Value(x * cdf, (a,), "gelu")

    def bwd(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
            a.accumulate(g * (cdf + x * pdf))

    out._backward = bwd
    return out


def exp(a: Value) -> Value:
    y = np.exp(a.data)
    out = Value(y, (a,), "exp")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * y)

    out._backward = bwd
    return out


def log(a: Value) -> Value:
    out = Value(np.log(a.data), (a,), "log")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g / a.data)

    out._backward = bwd
    return out


def sqrt(a: Value) -> Value:
    y = np.sqrt(a.data)
    out = Value(y, (a,), "sqrt")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * 0.5 / y)

    out._backward = bwd
    return out


def square(a: Value) -> Value:
    out = Value(a.data * a.data, (a,), "square")

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * 2.0 * a.data)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# normalizations and similarities

def softmax(a: Value, axis: int = -1) -> Value:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Value(y, (a,), "softmax")

    def bwd(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a.accumulate(y * (g - dot))

    out._backward = bwd
    return out


def l2_normalize(a: Value, axis: int = -1) -> Value:
    """x / max(||x||, 1e-12) along `axis`."""
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    safe = np.maximum(norm, _NORM_FLOOR)
    y = a.data / safe
    out = Value(y, (a,), "l2_normalize")

    def bwd(g):
        if a.requires_grad:
            # where the norm is clamped the scale is constant wrt x
            live = (norm > _NORM_FLOOR).astype(np.float64)
            dot = (g * a.data).sum(axis=axis, keepdims=True)
            a.accumulate(g / safe - live * a.data * dot / (safe ** 3))

    out._backward = bwd
    return out


def cosine_similarity(a: Value, b: Value, axis: int = -1) -> Value:
    """Cosine of the angle between `a` and `b` along `axis` (norms clamped at 1e-12)."""
    a, b = _lift(a), _lift(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"cosine_similarity: shapes {a.data.shape} and {b.data.shape} differ")
    na = np.maximum(np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True)), _NORM_FLOOR)
    nb = np.maximum(np.sqrt((b.data * b.data).sum(axis=axis, keepdims=True)), _NORM_FLOOR)
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    y = dot / (na * nb)
    out = Value(np.squeeze(y, axis=axis), (a, b), "cosine_similarity")

    def bwd(g):
        g = np.expand_dims(g, axis=axis)
        if a.requires_grad:
            a.accumulate(g * (b.data / (na * nb) - y * a.data / (na * na)))
        if b.requires_grad:
            b.accumulate(g * (a.data / (na * nb) - y * b.data / (nb * nb)))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# reductions

def sum_(a: Value, axis: int | None = None) -> Value:
    out = Value(a.data.sum(axis=axis), (a,), "sum")

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate(np.full_like(a.data, g))
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    out._backward = bwd
    return out


def mean(a: Value, axis: int | None = None) -> Value:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = Value(a.data.mean(axis=axis), (a,), "mean")

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a.accumulate(np.full_like(a.data, g / count))
            else:
                a.accumulate(np.broadcast_to(np.expand_dims(g / count, axis), a.data.shape))

    out._backward = bwd
    return out


def _extreme_over_axis(a: Value, axis: int, arg_fn, val_fn, opname: str) -> Value:
    idx = arg_fn(a.data, axis=axis)
    out = Value(val_fn(a.data, axis=axis), (a,), opname)

    def bwd(g):
        if a.requires_grad:
            # subgradient: route to the first achieving index along the axis
            full = np.zeros_like(a.data)
            grid = np.indices(out.data.shape)
            index = list(grid)
            index.insert(axis if axis >= 0 else a.data.ndim + axis, idx)
            full[tuple(index)] = g
            a.accumulate(full)

    out._backward = bwd
    return out


def min_over_axis(a: Value, axis: int) -> Value:
    return _extreme_over_axis(a, axis, np.argmin, np.min, "min_over_axis")


def max_over_axis(a: Value, axis: int) -> Value:
    return _extreme_over_axis(a, axis, np.argmax, np.max, "max_over_axis")


# ---------------------------------------------------------------------------
# backward pass

def _toposort(root: Value) -> list[Value]:
    """Deterministic iterative topological order (parents visited in tuple order)."""
    order: list[Value] = []
    visited: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        # reversed so that parents are emitted left-to-right in `order`
        for p in reversed(node.parents):
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Value) -> None:
    """Populate `.grad` on every node reachable from a scalar `root`."""
    if root.data.shape != ():
        raise ShapeError(f"backward: root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        root.grad = np.ones_like(root.data)
        return
    order = _toposort(root)
    root.accumulate(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def gradients(root: Value, leaves: Sequence[Value]) -> dict[int, np.ndarray]:
    """Run backward and return {id(leaf): grad} for the requested leaves."""
    backward(root)
    out = {}
    for leaf in leaves:
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        out[id(leaf)] = g
    return out


def zero_grad(values: Iterable[Value]) -> None:
    for v in values:
        v.grad = None
