"""Elementwise, reduction, shape and loss ops.

Broadcasting is limited to scalar-tensor pairs (a python number or a
single-element tensor against any tensor); everything else must match
exactly.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import DimensionError, Tensor, as_tensor, make_result, precision

CLAMP_EPS = 1e-8


def _scalar_like(t: Tensor) -> bool:
    return t.data.size == 1


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.full(shape, g.sum(), dtype=g.dtype)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_scalar_like(a) or _scalar_like(b)):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def _broadcast_data(a: Tensor, b: Tensor) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Operand data plus the result shape (the non-scalar operand's shape)."""
    da, db = a.data, b.data
    if da.shape == db.shape:
        return da, db, da.shape
    if not _scalar_like(a):
        shape = a.shape
    elif not _scalar_like(b):
        shape = b.shape
    else:
        shape = a.shape if a.ndim >= b.ndim else b.shape
    if _scalar_like(a):
        da = da.reshape(())
    if _scalar_like(b):
        db = db.reshape(())
    return da, db, shape


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    da, db, shape = _broadcast_data(a, b)
    return make_result((da + db).reshape(shape), (a, b),
                       lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    da, db, shape = _broadcast_data(a, b)
    return make_result((da - db).reshape(shape), (a, b),
                       lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    da, db, shape = _broadcast_data(a, b)
    return make_result((da * db).reshape(shape), (a, b),
                       lambda g: (_reduce_to(g * db, a.shape), _reduce_to(g * da, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")
    da, db, shape = _broadcast_data(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):  # make_result reports non-finite output
        out = (da / db).reshape(shape)
    return make_result(out, (a, b),
                       lambda g: (_reduce_to(g / db, a.shape), _reduce_to(-g * out / db, b.shape)), "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector products: (r,k)@(k,c), (r,k)@(k,), (k,)@(k,c), (k,)@(k,)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul expects 1-D or 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return make_result(A @ B, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``w @ x + b`` for a single vector ``x`` and weight of shape (out, in)."""
    y = matmul(w, x)
    return y if b is None else add(y, b)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make_result(t, (x,), lambda g: (g * (1 - t * t),), "tanh")


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return make_result(e, (x,), lambda g: (g * e,), "exp")


def log(x: Tensor, eps: float = CLAMP_EPS) -> Tensor:
    """Natural log with the input clamped below at ``eps`` (zero gradient where clamped)."""
    safe = np.maximum(x.data, eps)
    live = x.data > eps
    return make_result(np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0),), "log")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of nothing")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise DimensionError(f"stack: shapes differ {[t.shape for t in tensors]}")

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    if isinstance(index, (list, np.ndarray)) or (
            isinstance(index, tuple) and any(isinstance(i, (list, np.ndarray)) for i in index)):
        raise DimensionError("slice supports basic indexing only")
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_result(np.array(out), (x,), backward, "slice")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(tuple(shape))
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def cast(x: Tensor, dtype) -> Tensor:
    """Copy of ``x`` stored as ``dtype``; the gradient comes back in ``x``'s own dtype."""
    src = x.data.dtype
    with precision(dtype):
        return make_result(x.data, (x,), lambda g: (g.astype(src),), "cast")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return make_result(out, (x,), backward, "mean")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if x.shape[axis] < 1:
        raise DimensionError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), backward, "softmax")


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error."""
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    n = d.size
    return make_result(np.mean(d * d), (a, b), lambda g: (2 * g * d / n, -2 * g * d / n), "mse")


def squared_error(a: Tensor, b) -> Tensor:
    """Sum of squared differences, ``||a - b||^2``."""
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"squared_error: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    return make_result(np.sum(d * d), (a, b), lambda g: (2 * g * d, -2 * g * d), "squared_error")


def cross_entropy_per_pixel(probs: Tensor, target: np.ndarray, eps: float = CLAMP_EPS) -> Tensor:
    """Mean over labelled cells of ``-log probs[target]``.

    ``probs`` is (K, H, W) holding a distribution per cell; ``target`` is an
    integer (H, W) grid where negative entries mark unknown cells, which are
    excluded.  With no labelled cells the result is a constant zero.
    """
    if probs.ndim != 3 or target.shape != probs.shape[1:]:
        raise DimensionError(f"cross_entropy_per_pixel: probs {probs.shape} vs target {target.shape}")
    known = target >= 0
    n = int(known.sum())
    if n == 0:
        return make_result(np.zeros((), probs.data.dtype), (probs,), lambda g: (np.zeros_like(probs.data),),
                           "cross_entropy_per_pixel")
    ii, jj = np.nonzero(known)
    kk = target[ii, jj].astype(np.intp)
    if kk.max() >= probs.shape[0]:
        raise DimensionError("cross_entropy_per_pixel: label out of range")
    p = probs.data[kk, ii, jj]
    safe = np.maximum(p, eps)
    loss = -np.log(safe).sum() / n

    def backward(g):
        grad = np.zeros_like(probs.data)
        grad[kk, ii, jj] = np.where(p > eps, -g / (n * safe), 0)
        return (grad,)

    return make_result(loss, (probs,), backward, "cross_entropy_per_pixel")


def kl_divergence(target: np.ndarray, pred: Tensor, eps: float = CLAMP_EPS) -> Tensor:
    """``sum target * log(target / pred)`` with 0 log 0 = 0 and ``pred`` clamped at ``eps``.

    ``target`` is a constant array; gradients flow into ``pred`` only.
    """
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.shape:
        raise DimensionError(f"kl_divergence: shapes {target.shape} and {pred.shape} differ")
    support = target > 0
    q = np.maximum(pred.data, eps)
    t = np.where(support, target, 1)
    terms = np.where(support, target * (np.log(t) - np.log(q)), 0)

    def backward(g):
        return (np.where(support & (pred.data > eps), -g * target / q, 0),)

    return make_result(terms.sum(), (pred,), backward, "kl_divergence")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise DimensionError("embedding_lookup expects a 1-D id sequence")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError("embedding_lookup: id out of range")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return make_result(table.data[ids], (table,), backward, "embedding_lookup")
