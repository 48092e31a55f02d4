"""Layer-level ops: convolutions, batch norm, recurrent cells, attention.

Convolutions work on single (C, H, W) maps with cross-correlation
semantics.  Recurrent cells are composed from primitive ops so their
gradients come from the engine.

Gate layout (kept fixed so checkpoints stay portable):

* GRU weights stack the reset, update and candidate blocks, in that order,
  along the first axis: ``w_ih`` is (3H, D), ``w_hh`` is (3H, H), with
  biases ``b_ih`` and ``b_hh`` of length 3H.  The update gate ``z`` is the
  fraction of the candidate written: ``h' = (1 - z) * h + z * n``, so a
  closed update gate carries ``h`` through unchanged.
* LSTM weights stack input, forget, cell and output blocks: ``w_ih`` is
  (4H, D), ``w_hh`` (4H, H), one bias ``b`` (4H).
"""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .core import DimensionError, Tensor, as_tensor, make_result


def _out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    c = xp.shape[0]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, ho * wo)


def _scatter_windows(cols: np.ndarray, out: np.ndarray, stride: int, ho: int, wo: int) -> None:
    """Add ``cols`` (C, kh, kw, ho, wo) into ``out`` (C, Hp, Wp) at the window positions."""
    kh, kw = cols.shape[1:3]
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += cols[:, i, j]


def _gather_windows(full: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    c = full.shape[0]
    cols = np.empty((c, kh, kw, ho, wo), dtype=full.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = full[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    return cols


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of x (C, H, W) with w (Co, C, kh, kw)."""
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    c, h, wd = x.shape
    co, _, kh, kw = w.shape
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd}+2*{padding}")
    if b is not None and b.shape != (co,):
        raise DimensionError(f"conv2d: bias shape {b.shape} != ({co},)")
    ho, wo = _out_extent(h, kh, stride, padding), _out_extent(wd, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = w.data.reshape(co, -1)
    out = (w2 @ cols).reshape(co, ho, wo)
    if b is not None:
        out = out + b.data[:, None, None]

    def backward(g):
        g2 = g.reshape(co, ho * wo)
        dw = (g2 @ cols.T).reshape(w.shape) if w.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c, kh, kw, ho, wo)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            _scatter_windows(dcols, dxp, stride, ho, wo)
            dx = dxp[:, padding:padding + h, padding:padding + wd] if padding else dxp
        db = g.sum(axis=(1, 2)) if b is not None else None
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, backward, "conv2d")


def transpose_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of x (Ci, H, W) with w (Ci, Co, kh, kw).

    Output extent is ``(H - 1) * stride - 2 * padding + kh``.
    """
    if x.ndim != 3 or w.ndim != 4 or w.shape[0] != x.shape[0]:
        raise DimensionError(f"transpose_conv2d: input {x.shape} incompatible with kernel {w.shape}")
    ci, h, wd = x.shape
    _, co, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise DimensionError("transpose_conv2d: padding removes the whole output")
    full_shape = (co, (h - 1) * stride + kh, (wd - 1) * stride + kw)
    x2 = x.data.reshape(ci, h * wd)
    w2 = w.data.reshape(ci, co * kh * kw)
    cols = (w2.T @ x2).reshape(co, kh, kw, h, wd)
    full = np.zeros(full_shape, dtype=x2.dtype)
    _scatter_windows(cols, full, stride, h, wd)
    out = full[:, padding:padding + ho, padding:padding + wo]
    if b is not None:
        out = out + b.data[:, None, None]

    def backward(g):
        gfull = np.zeros(full_shape, dtype=g.dtype)
        gfull[:, padding:padding + ho, padding:padding + wo] = g
        gcols = _gather_windows(gfull, kh, kw, stride, h, wd).reshape(co * kh * kw, h * wd)
        dx = (w2 @ gcols).reshape(x.shape) if x.requires_grad else None
        dw = (x2 @ gcols.T).reshape(w.shape) if w.requires_grad else None
        db = g.sum(axis=(1, 2)) if b is not None else None
        return (dx, dw) if b is None else (dx, dw, db)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(np.ascontiguousarray(out), parents, backward, "transpose_conv2d")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray | None = None,
               running_var: np.ndarray | None = None, training: bool = True, momentum: float = 0.1,
               eps: float = 1e-5, update_stats: bool = True) -> Tensor:
    """Per-channel normalisation of x (C, H, W) over its spatial extent.

    In training mode the statistics come from ``x`` (and the running
    buffers, when given, are updated in place); in inference mode the
    running buffers are used.
    """
    if x.ndim != 3 or gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise DimensionError(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    c = x.shape[0]
    n = x.shape[1] * x.shape[2]
    if training:
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
        if update_stats and running_mean is not None and running_var is not None:
            unbiased = var * n / max(n - 1, 1)
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise DimensionError("batch_norm inference mode needs running statistics")
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(c, 1, 1)) * inv.reshape(c, 1, 1)
    out = gamma.data.reshape(c, 1, 1) * xhat + beta.data.reshape(c, 1, 1)

    def backward(g):
        dgamma = (g * xhat).sum(axis=(1, 2))
        dbeta = g.sum(axis=(1, 2))
        dxhat = g * gamma.data.reshape(c, 1, 1)
        if training:
            dx = (inv.reshape(c, 1, 1) / n) * (
                n * dxhat - dxhat.sum(axis=(1, 2), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(1, 2), keepdims=True))
        else:
            dx = dxhat * inv.reshape(c, 1, 1)
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), backward, "batch_norm")


def gru_cell(x: Tensor, h: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """One GRU step; ``params`` holds w_ih, w_hh, b_ih, b_hh (see module doc for layout)."""
    w_ih, w_hh, b_ih, b_hh = params["w_ih"], params["w_hh"], params["b_ih"], params["b_hh"]
    hid = h.shape[0]
    if w_ih.shape != (3 * hid, x.shape[0]) or w_hh.shape != (3 * hid, hid):
        raise DimensionError(f"gru_cell: x {x.shape}, h {h.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}")
    gi = ops.linear(x, w_ih, b_ih)
    gh = ops.linear(h, w_hh, b_hh)
    r = ops.sigmoid(gi[:hid] + gh[:hid])
    z = ops.sigmoid(gi[hid:2 * hid] + gh[hid:2 * hid])
    n = ops.tanh(gi[2 * hid:] + r * gh[2 * hid:])
    return h + z * (n - h)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: Mapping[str, Tensor],
              x_proj: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """One LSTM step.  ``x_proj`` may carry a precomputed ``w_ih @ x``."""
    hid = h.shape[0]
    gi = x_proj if x_proj is not None else ops.matmul(params["w_ih"], x)
    gates = gi + ops.linear(h, params["w_hh"], params["b"])
    i = ops.sigmoid(gates[:hid])
    f = ops.sigmoid(gates[hid:2 * hid])
    g = ops.tanh(gates[2 * hid:3 * hid])
    o = ops.sigmoid(gates[3 * hid:])
    c_new = f * c + i * g
    return o * ops.tanh(c_new), c_new


def bilstm(x: Tensor, fwd: Mapping[str, Tensor], bwd: Mapping[str, Tensor]) -> Tensor:
    """Bidirectional LSTM over x (L, D); returns (L, 2H), forward half first."""
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"bilstm expects a non-empty (L, D) sequence, got {x.shape}")
    length = x.shape[0]
    hid = fwd["w_hh"].shape[1]
    outs = {}
    for name, p, steps in (("f", fwd, range(length)), ("b", bwd, range(length - 1, -1, -1))):
        proj = ops.matmul(x, ops.transpose(p["w_ih"]))  # (L, 4H)
        h = Tensor(np.zeros(hid))
        c = Tensor(np.zeros(hid))
        seq = [None] * length
        for t in steps:
            h, c = lstm_cell(None, h, c, p, x_proj=proj[t])
            seq[t] = h
        outs[name] = ops.stack(seq, axis=0)
    return ops.concat([outs["f"], outs["b"]], axis=1)


def scaled_dot_attention(q: Tensor, keys: Tensor, values: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """``softmax(keys @ q / sqrt(d)) @ values`` for one query.

    ``mask`` (length L, True = attend) drops positions from the softmax.
    """
    q, keys, values = as_tensor(q), as_tensor(keys), as_tensor(values)
    if keys.ndim != 2 or keys.shape[0] < 1 or q.shape != (keys.shape[1],) or values.ndim != 2 \
            or values.shape[0] != keys.shape[0]:
        raise DimensionError(f"attention: q {q.shape}, K {keys.shape}, V {values.shape}")
    logits = ops.matmul(keys, q) * (1.0 / math.sqrt(q.shape[0]))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise DimensionError("attention: every position is masked")
        logits = logits + Tensor(np.where(mask, 0.0, -1e9))
    weights = ops.softmax(logits, axis=0)
    return ops.matmul(weights, values)
