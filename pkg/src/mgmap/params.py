"""Named parameter dictionaries and their initialisers."""
from __future__ import annotations

import math

import numpy as np

from .tensor import DimensionError, Tensor

Params = dict  # name -> Tensor


def he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, zero: bool = False) -> Tensor:
    data = np.zeros(shape) if zero else rng.normal(0.0, math.sqrt(2.0 / max(fan_in, 1)), size=shape)
    return Tensor(data, requires_grad=True)


def uniform(rng: np.random.Generator, shape: tuple[int, ...], scale: float, zero: bool = False) -> Tensor:
    data = np.zeros(shape) if zero else rng.uniform(-scale, scale, size=shape)
    return Tensor(data, requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape: tuple[int, ...], zero: bool = False) -> Tensor:
    return Tensor(np.zeros(shape) if zero else np.ones(shape), requires_grad=True)


def sub(params: Params, prefix: str) -> Params:
    """View of the entries under ``prefix/`` with the prefix stripped."""
    p = prefix.rstrip("/") + "/"
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def to_arrays(params: Params) -> dict[str, np.ndarray]:
    return {k: np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float32) for k, v in params.items()}


def assign(params: Params, arrays: dict[str, np.ndarray]) -> None:
    """Copy ``arrays`` into ``params`` in place, reporting the first missing or mis-shaped entry."""
    for name in sorted(params):
        if name not in arrays:
            raise DimensionError(f"checkpoint has no entry {name!r}")
        src = np.asarray(arrays[name])
        dst = params[name]
        shape = dst.shape if isinstance(dst, Tensor) else np.shape(dst)
        if src.shape != tuple(shape):
            raise DimensionError(f"shape mismatch for {name!r}: checkpoint {src.shape}, model {tuple(shape)}")
    extra = sorted(set(arrays) - set(params))
    if extra:
        raise DimensionError(f"checkpoint entry {extra[0]!r} does not exist in the model")
    for name, dst in params.items():
        if isinstance(dst, Tensor):
            dst.data = np.array(arrays[name], dtype=dst.data.dtype)
        else:
            dst[...] = arrays[name]
