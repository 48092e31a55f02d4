"""Central finite-difference checks for every differentiable op.

The numerical side only ever calls forward passes, so it stays independent
of the backward closures it audits.  Checks run in float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import nn, ops
from .core import Tensor, no_grad, precision

REL_FLOOR = 1e-3
FD_STEP = 1e-6


@dataclass
class GradResult:
    name: str
    case: int
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], inputs: Mapping[str, Tensor], rng: np.random.Generator,
                    step: float = FD_STEP, max_entries: int | None = None) -> float:
    """Max relative error between backward() and central differences.

    ``fn`` must rebuild its output from ``inputs`` on every call.  The output
    is reduced with a fixed random projection so every output entry
    contributes.  ``max_entries`` limits how many entries per input are
    perturbed (sampled without replacement).
    """
    out = fn()
    proj = rng.standard_normal(out.shape)
    for t in inputs.values():
        t.grad = None
    loss = ops.sum_(ops.mul(out, Tensor(proj)))
    loss.backward()
    worst = 0.0
    for t in inputs.values():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(idx.size)
        with no_grad():
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(np.sum(fn().data * proj))
                flat[i] = orig - step
                fm = float(np.sum(fn().data * proj))
                flat[i] = orig
                numeric[k] = (fp - fm) / (2 * step)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
    return worst


def _param(rng, *shape, scale=1.0, avoid_zero=False):
    x = rng.standard_normal(shape) * scale
    if avoid_zero:
        x = np.where(np.abs(x) < 1e-2, 0.1, x)
    return Tensor(x, requires_grad=True)


def _dims(rng, lo=1, hi=5, n=2):
    return [int(v) for v in rng.integers(lo, hi + 1, size=n)]


def _case_add(rng):
    s = _dims(rng)
    a, b = _param(rng, *s), _param(rng, *s)
    return {"a": a, "b": b}, lambda: ops.add(a, b)


def _case_sub(rng):
    s = _dims(rng)
    a, b = _param(rng, *s), _param(rng, *s)
    return {"a": a, "b": b}, lambda: ops.sub(a, b)


def _case_mul(rng):
    s = _dims(rng)
    a, b, c = _param(rng, *s), _param(rng, *s), _param(rng)
    return {"a": a, "b": b, "c": c}, lambda: ops.mul(ops.mul(a, b), c)


def _case_div(rng):
    s = _dims(rng)
    a = _param(rng, *s)
    b = Tensor(rng.uniform(0.5, 2.0, s) * rng.choice([-1, 1], s), requires_grad=True)
    return {"a": a, "b": b}, lambda: ops.div(a, b)


def _case_matmul(rng):
    r, k, c = _dims(rng, n=3)
    a, b = _param(rng, r, k), _param(rng, k, c)
    v, u = _param(rng, k), _param(rng, r)
    return {"a": a, "b": b, "v": v, "u": u}, lambda: ops.concat(
        [ops.reshape(ops.matmul(a, b), (-1,)), ops.matmul(a, v), ops.matmul(u, a),
         ops.reshape(ops.matmul(v, v), (1,))])


def _case_relu(rng):
    x = _param(rng, *_dims(rng), avoid_zero=True)
    return {"x": x}, lambda: ops.relu(x)


def _case_sigmoid(rng):
    x = _param(rng, *_dims(rng), scale=2.0)
    return {"x": x}, lambda: ops.sigmoid(x)


def _case_tanh(rng):
    x = _param(rng, *_dims(rng))
    return {"x": x}, lambda: ops.tanh(x)


def _case_exp_log(rng):
    x = _param(rng, *_dims(rng))
    return {"x": x}, lambda: ops.log(ops.add(ops.exp(x), 0.5))


def _case_concat(rng):
    a, b = _dims(rng)
    x, y = _param(rng, a, b), _param(rng, int(rng.integers(1, 4)), b)
    z = _param(rng, a, int(rng.integers(1, 4)))
    return {"x": x, "y": y, "z": z}, lambda: ops.concat(
        [ops.reshape(ops.concat([x, y], axis=0), (-1,)), ops.reshape(ops.concat([x, z], axis=1), (-1,))])


def _case_stack(rng):
    s = _dims(rng)
    x, y = _param(rng, *s), _param(rng, *s)
    return {"x": x, "y": y}, lambda: ops.stack([x, y, x], axis=1)


def _case_slice(rng):
    a, b = _dims(rng, lo=2, hi=6)
    x = _param(rng, a, b)
    i = int(rng.integers(0, a - 1))
    return {"x": x}, lambda: ops.concat([ops.reshape(x[i:, 1:], (-1,)), x[i], x[:, -1]])


def _case_reshape_transpose(rng):
    a, b, c = _dims(rng, n=3)
    x = _param(rng, a, b, c)
    return {"x": x}, lambda: ops.transpose(ops.reshape(x, (a * b, c)))


def _case_sum(rng):
    x = _param(rng, *_dims(rng, n=3))
    return {"x": x}, lambda: ops.concat([ops.reshape(ops.sum_(x), (1,)), ops.reshape(ops.sum_(x, axis=1), (-1,))])


def _case_mean(rng):
    x = _param(rng, *_dims(rng, n=3))
    return {"x": x}, lambda: ops.concat([ops.reshape(ops.mean(x), (1,)),
                                         ops.reshape(ops.mean(x, axis=(1, 2)), (-1,))])


def _case_softmax(rng):
    s = _dims(rng, n=2)
    x = _param(rng, *s, scale=2.0)
    axis = int(rng.integers(0, 2))
    return {"x": x}, lambda: ops.softmax(x, axis=axis)


def _case_mse(rng):
    s = _dims(rng)
    a, b = _param(rng, *s), _param(rng, *s)
    return {"a": a, "b": b}, lambda: ops.concat([ops.reshape(ops.mse(a, b), (1,)),
                                                 ops.reshape(ops.squared_error(a, b), (1,))])


def _case_cross_entropy(rng):
    k, h, w = _dims(rng, lo=2, hi=5, n=3)
    logits = _param(rng, k, h, w)
    target = rng.integers(-1, k, size=(h, w))
    target[0, 0] = 0
    return {"logits": logits}, lambda: ops.cross_entropy_per_pixel(ops.softmax(logits, axis=0), target)


def _case_kl(rng):
    n = int(rng.integers(2, 12))
    p = rng.dirichlet(np.ones(n))
    p[rng.integers(0, n)] = 0.0
    p /= p.sum()
    logits = _param(rng, n)
    return {"logits": logits}, lambda: ops.kl_divergence(p, ops.softmax(logits))


def _case_embedding(rng):
    v, d = _dims(rng, lo=2, hi=6)
    table = _param(rng, v, d)
    ids = rng.integers(0, v, size=int(rng.integers(1, 7)))
    return {"table": table}, lambda: ops.embedding_lookup(table, ids)


def _case_conv2d(rng):
    c, co = _dims(rng, lo=1, hi=3)
    k = int(rng.choice([1, 3]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    h, w = _dims(rng, lo=k, hi=6)
    x, wt, b = _param(rng, c, h, w), _param(rng, co, c, k, k), _param(rng, co)
    return {"x": x, "w": wt, "b": b}, lambda: nn.conv2d(x, wt, b, stride=stride, padding=pad)


def _case_transpose_conv2d(rng):
    ci, co = _dims(rng, lo=1, hi=3)
    k = int(rng.choice([2, 3, 4]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    h, w = _dims(rng, lo=2, hi=5)
    x, wt, b = _param(rng, ci, h, w), _param(rng, ci, co, k, k), _param(rng, co)
    return {"x": x, "w": wt, "b": b}, lambda: nn.transpose_conv2d(x, wt, b, stride=stride, padding=pad)


def _case_batch_norm(rng):
    c, h, w = _dims(rng, lo=2, hi=5, n=3)
    x, g, b = _param(rng, c, h, w), _param(rng, c), _param(rng, c)
    training = bool(rng.integers(0, 2))
    rm, rv = rng.standard_normal(c), rng.uniform(0.5, 2.0, c)
    return {"x": x, "gamma": g, "beta": b}, lambda: nn.batch_norm(
        x, g, b, rm.copy(), rv.copy(), training=training)


def _gru_params(rng, d, h):
    return {"w_ih": _param(rng, 3 * h, d, scale=0.5), "w_hh": _param(rng, 3 * h, h, scale=0.5),
            "b_ih": _param(rng, 3 * h, scale=0.5), "b_hh": _param(rng, 3 * h, scale=0.5)}


def _case_gru(rng):
    d, h = _dims(rng, lo=1, hi=5)
    p = _gru_params(rng, d, h)
    x, h0 = _param(rng, d), _param(rng, h)
    return {"x": x, "h": h0, **p}, lambda: nn.gru_cell(x, h0, p)


def _lstm_params(rng, d, h):
    return {"w_ih": _param(rng, 4 * h, d, scale=0.5), "w_hh": _param(rng, 4 * h, h, scale=0.5),
            "b": _param(rng, 4 * h, scale=0.5)}


def _case_lstm(rng):
    d, h = _dims(rng, lo=1, hi=4)
    p = _lstm_params(rng, d, h)
    x, h0, c0 = _param(rng, d), _param(rng, h), _param(rng, h)
    return {"x": x, "h": h0, "c": c0, **p}, lambda: ops.concat(list(nn.lstm_cell(x, h0, c0, p)))


def _case_bilstm(rng):
    length, d, h = _dims(rng, lo=1, hi=4, n=3)
    fwd, bwd = _lstm_params(rng, d, h), _lstm_params(rng, d, h)
    x = _param(rng, length, d)
    inputs = {"x": x, **{f"f_{k}": v for k, v in fwd.items()}, **{f"b_{k}": v for k, v in bwd.items()}}
    return inputs, lambda: nn.bilstm(x, fwd, bwd)


def _case_cast(rng):
    x = _param(rng, *_dims(rng, n=2))
    return {"x": x}, lambda: ops.mul(ops.cast(x, np.float64), x)


def _case_attention(rng):
    length, d, dv = _dims(rng, lo=1, hi=5, n=3)
    q, k, v = _param(rng, d), _param(rng, length, d), _param(rng, length, dv)
    return {"q": q, "k": k, "v": v}, lambda: nn.scaled_dot_attention(q, k, v)


OP_CASES: dict[str, Callable] = {
    "add": _case_add,
    "sub": _case_sub,
    "mul": _case_mul,
    "div": _case_div,
    "matmul": _case_matmul,
    "relu": _case_relu,
    "sigmoid": _case_sigmoid,
    "tanh": _case_tanh,
    "exp_log": _case_exp_log,
    "concat": _case_concat,
    "stack": _case_stack,
    "slice": _case_slice,
    "reshape_transpose": _case_reshape_transpose,
    "cast": _case_cast,
    "sum": _case_sum,
    "mean": _case_mean,
    "softmax": _case_softmax,
    "mse": _case_mse,
    "cross_entropy_per_pixel": _case_cross_entropy,
    "kl_divergence": _case_kl,
    "embedding_lookup": _case_embedding,
    "conv2d": _case_conv2d,
    "transpose_conv2d": _case_transpose_conv2d,
    "batch_norm": _case_batch_norm,
    "gru_cell": _case_gru,
    "lstm_cell": _case_lstm,
    "bilstm": _case_bilstm,
    "scaled_dot_attention": _case_attention,
}


def run_op(name: str, n_cases: int = 20, seed: int = 0) -> list[GradResult]:
    builder = OP_CASES[name]
    results = []
    with precision(np.float64):
        for case in range(n_cases):
            rng = np.random.default_rng([seed, case, len(name)])
            inputs, fn = builder(rng)
            results.append(GradResult(name, case, check_gradients(fn, inputs, rng)))
    return results


def run_suite(n_cases: int = 20, seed: int = 0) -> list[GradResult]:
    out = []
    for name in OP_CASES:
        out.extend(run_op(name, n_cases, seed))
    return out
