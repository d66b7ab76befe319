"""
Primitive operations on RealArrays.

Every function computes its forward value with numpy and hands a
vector-Jacobian product to ``emit`` so an active CompGraph can record it.
Broadcasting is limited to what rank-2 batches need: scalars, row vectors
against matrices, and column vectors against matrices.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from app.core.exceptions import IndexRangeError, ShapeError
from app.core.tensor import RealArray, as_array, emit

NORMALIZE_EPS = 1e-12


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: RealArray, b: RealArray) -> tuple[int, ...]:
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeError(op, a.shape, b.shape, detail="rank > 2")
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# Elementwise binary
# ---------------------------------------------------------------------------

def add(a, b) -> RealArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return emit("add", (a, b), a.data + b.data, vjp)


def sub(a, b) -> RealArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return emit("sub", (a, b), a.data - b.data, vjp)


def mul(a, b) -> RealArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("mul", a, b)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return emit("mul", (a, b), a.data * b.data, vjp)


def scale(a, factor: float) -> RealArray:
    a = as_array(a)
    factor = float(factor)
    return emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def matmul(a, b) -> RealArray:
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return emit("matmul", (a, b), a.data @ b.data, vjp)


# ---------------------------------------------------------------------------
# Elementwise unary
# ---------------------------------------------------------------------------

def exp(x) -> RealArray:
    x = as_array(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return emit("exp", (x,), out, lambda g: (g * out,))


def log(x) -> RealArray:
    x = as_array(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return emit("log", (x,), out, lambda g: (g / x.data,))


def square(x) -> RealArray:
    x = as_array(x)
    return emit("square", (x,), x.data * x.data, lambda g: (2.0 * g * x.data,))


def leaky_relu(x, slope: float = 0.2) -> RealArray:
    x = as_array(x)
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)
    return emit("leaky_relu", (x,), out, lambda g: (np.where(positive, g, slope * g),))


def softplus(x) -> RealArray:
    """log(1 + e^x), evaluated without overflow."""
    x = as_array(x)
    out = np.logaddexp(0.0, x.data)
    return emit("softplus", (x,), out, lambda g: (g * expit(x.data),))


def clamp_nonpos(x) -> RealArray:
    """min(x, 0); derivative 1 only where x < 0 strictly."""
    x = as_array(x)
    active = x.data < 0
    return emit("clamp_nonpos", (x,), np.where(active, x.data, 0.0),
                lambda g: (np.where(active, g, 0.0),))


def clamp_nonneg(x) -> RealArray:
    """max(x, 0); derivative 1 only where x > 0 strictly."""
    x = as_array(x)
    active = x.data > 0
    return emit("clamp_nonneg", (x,), np.where(active, x.data, 0.0),
                lambda g: (np.where(active, g, 0.0),))


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------

def sum(x, axis: Optional[int] = None) -> RealArray:  # noqa: A001 - mirrors numpy
    x = as_array(x)
    _check_axis("sum", x, axis)
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return emit("sum", (x,), out, vjp)


def mean(x, axis: Optional[int] = None) -> RealArray:
    x = as_array(x)
    _check_axis("mean", x, axis)
    count = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis), 1.0 / count)


def _check_axis(op: str, x: RealArray, axis: Optional[int]) -> None:
    if axis is not None and not 0 <= axis < x.ndim:
        raise IndexRangeError(op, axis, x.ndim)


def transpose(x) -> RealArray:
    x = as_array(x)
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape, detail="expected rank 2")
    return emit("transpose", (x,), x.data.T, lambda g: (g.T,))


def reshape(x, shape: Sequence[int]) -> RealArray:
    x = as_array(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError("reshape", x.shape, shape)
    return emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def broadcast_to(x, shape: Sequence[int]) -> RealArray:
    x = as_array(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, shape) from None
    return emit("broadcast_to", (x,), out, lambda g: (_unbroadcast(g, x.shape),))


def concat_cols(a, b) -> RealArray:
    a, b = as_array(a), as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError("concat_cols", a.shape, b.shape)
    split = a.shape[1]
    return emit("concat_cols", (a, b), np.concatenate([a.data, b.data], axis=1),
                lambda g: (g[:, :split], g[:, split:]))


def _check_indices(op: str, index: np.ndarray, extent: int) -> np.ndarray:
    index = np.asarray(index)
    if index.ndim != 1 or not np.issubdtype(index.dtype, np.integer):
        raise ShapeError(op, index.shape, detail="indices must be a 1-D integer vector")
    bad = np.flatnonzero((index < 0) | (index >= extent))
    if bad.size:
        raise IndexRangeError(op, int(index[bad[0]]), extent)
    return index


def take_rows(table, index) -> RealArray:
    """table[index] for a 2-D table and a 1-D integer index."""
    table = as_array(table)
    if table.ndim != 2:
        raise ShapeError("take_rows", table.shape, detail="expected rank 2")
    index = _check_indices("take_rows", index, table.shape[0])

    def vjp(g):
        grad = np.zeros(table.shape)
        np.add.at(grad, index, g)
        return (grad,)

    return emit("take_rows", (table,), table.data[index], vjp)


def take_per_row(x, index) -> RealArray:
    """x[i, index[i]] for every row i."""
    x = as_array(x)
    if x.ndim != 2:
        raise ShapeError("take_per_row", x.shape, detail="expected rank 2")
    index = _check_indices("take_per_row", index, x.shape[1])
    if index.shape[0] != x.shape[0]:
        raise ShapeError("take_per_row", x.shape, index.shape)
    rows = np.arange(x.shape[0])

    def vjp(g):
        grad = np.zeros(x.shape)
        grad[rows, index] = g
        return (grad,)

    return emit("take_per_row", (x,), x.data[rows, index], vjp)


# ---------------------------------------------------------------------------
# Row-wise composites with closed-form VJPs
# ---------------------------------------------------------------------------

def _rows(op: str, x: RealArray) -> None:
    if x.ndim != 2:
        raise ShapeError(op, x.shape, detail="expected rank 2")


def row_softmax(x) -> RealArray:
    x = as_array(x)
    _rows("row_softmax", x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return emit("row_softmax", (x,), out, vjp)


def log_softmax_rows(x) -> RealArray:
    x = as_array(x)
    _rows("log_softmax_rows", x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return emit("log_softmax_rows", (x,), out, vjp)


def l2_normalize_rows(x, eps: float = NORMALIZE_EPS) -> RealArray:
    """Divide every row by max(||row||, eps)."""
    x = as_array(x)
    _rows("l2_normalize_rows", x)
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    scaled = norms > eps
    denom = np.where(scaled, norms, eps)
    out = x.data / denom

    def vjp(g):
        radial = (g * out).sum(axis=1, keepdims=True)
        return (np.where(scaled, (g - out * radial) / denom, g / eps),)

    return emit("l2_normalize_rows", (x,), out, vjp)


def clip_row_norms(x, max_norm: float) -> RealArray:
    """Rescale rows whose L2 norm exceeds ``max_norm`` back onto that radius."""
    x = as_array(x)
    _rows("clip_row_norms", x)
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    clipped = norms > max_norm
    safe = np.where(clipped, norms, 1.0)
    out = np.where(clipped, x.data * (max_norm / safe), x.data)

    def vjp(g):
        unit = x.data / safe
        radial = (g * unit).sum(axis=1, keepdims=True)
        return (np.where(clipped, max_norm * (g - unit * radial) / safe, g),)

    return emit("clip_row_norms", (x,), out, vjp)
