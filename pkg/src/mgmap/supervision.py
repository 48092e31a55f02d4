"""Weak-supervision targets and loss terms.

* Coarse localization target: each egocentric cell's distance to the
  instruction path (path moved into the agent frame first) is min-max
  normalised so the nearest cell scores 1 and the farthest 0, then a softmax
  over all cells turns the scores into a distribution.  The hard variant is
  uniform over cells closer than a threshold.
* Waypoint target: where the path, walked forward from the agent's nearest
  path point, first leaves a 3 m circle around the agent.
* Progress target: completeness ``1 - g(pose)/g(start)`` in geodesic metres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, point_polyline_distance, polyline_lengths, project_onto_polyline
from .mapping import MapSpec, ego_offsets
from .tensor import Tensor, add, cast, kl_divergence, mul, precision, squared_error
from .world.scene import DomainError


class TrainingError(ArithmeticError):
    """A loss term went non-finite; the message names the term."""


@dataclass(frozen=True)
class CoarseGtGrid:
    P: np.ndarray
    P_prime: np.ndarray
    d: np.ndarray
    mode: str


def coarse_gt_from_centers(centers: np.ndarray, path_local, mode: str = "soft",
                           hard_threshold: float = 0.72) -> CoarseGtGrid:
    """Coarse target over arbitrary cell centers ``(..., 2)`` given the path in the same frame."""
    shape = centers.shape[:-1]
    d = point_polyline_distance(centers.reshape(-1, 2), path_local).reshape(shape)
    dmin, dmax = float(d.min()), float(d.max())
    if dmax > dmin:
        pp = (dmax - d) / (dmax - dmin)
    else:
        pp = np.ones(shape)
    if mode == "soft":
        if dmax > dmin:
            e = np.exp(pp - pp.max())
            P = e / e.sum()
        else:
            P = np.full(shape, 1.0 / d.size)
    elif mode == "hard":
        mask = d < hard_threshold
        P = mask / mask.sum() if mask.any() else np.full(shape, 1.0 / d.size)
    else:
        raise ValueError(f"unknown coarse GT mode {mode!r}")
    return CoarseGtGrid(P, pp, d, mode)


def coarse_localization_gt(path, pose: Pose, spec: MapSpec, mode: str = "soft",
                           hard_threshold: float = 0.72) -> CoarseGtGrid:
    path_local = pose.to_local(np.asarray(path, dtype=np.float64).reshape(-1, 2))
    return coarse_gt_from_centers(ego_offsets(spec.m, spec.cell), path_local, mode, hard_threshold)


def localization_loss(p_hat: Tensor, P: np.ndarray, tol: float = 1e-5) -> Tensor:
    """KL(P || P_hat) with 0 log 0 = 0 and P_hat clamped at 1e-8."""
    for name, s in (("P_hat", float(np.sum(p_hat.data, dtype=np.float64))), ("P", float(np.sum(P)))):
        if abs(s - 1.0) > tol:
            raise DomainError(f"{name} sums to {s}, not 1")
    return kl_divergence(P, p_hat)


def _exit_point(a: np.ndarray, b: np.ndarray, c: np.ndarray, r: float):
    """Parameter t in [0, 1] where segment a->b leaves the disc (c, r), or None if it does not."""
    if np.linalg.norm(b - c) <= r:
        return None
    e = b - a
    f = a - c
    A = float(e @ e)
    B = 2.0 * float(f @ e)
    C = float(f @ f) - r * r
    disc = B * B - 4 * A * C
    if A == 0.0 or disc < 0:
        return None
    t = (-B + math.sqrt(disc)) / (2 * A)
    return min(max(t, 0.0), 1.0)


def waypoint_gt(pose: Pose, path, radius: float = 3.0, min_arc: float = -np.inf) -> np.ndarray:
    """Agent-frame waypoint (forward, left) on the circle of ``radius`` around the agent."""
    pts = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    c = np.array([pose.x, pose.y])
    _, q, k = project_onto_polyline(c, pts, min_arc)
    curve = [c, q, *pts[k + 1:]]
    for a, b in zip(curve[:-1], curve[1:]):
        t = _exit_point(a, b, c, radius)
        if t is not None:
            return pose.to_local(a + t * (b - a))
    return pose.to_local(pts[-1])


def progress_gt(point, field, g0: float, last: float | None = None) -> tuple[float, bool]:
    """Completeness ``clamp(1 - g/g0, 0, 1)``; if ``point`` is unreachable returns ``(last, True)``."""
    if not (math.isfinite(g0) and g0 > 0):
        raise DomainError(f"start-to-goal geodesic must be finite and positive, got {g0}")
    g = field.at(point)
    if not math.isfinite(g):
        return (0.0 if last is None else last), True
    return float(min(max(1.0 - g / g0, 0.0), 1.0)), False


def regression_losses(w_hat: Tensor, w, p_hat: Tensor, p: float) -> tuple[Tensor, Tensor]:
    """``(||w_hat - w||^2, (p_hat - p)^2)``."""
    w = np.asarray(w, dtype=np.float64).reshape(w_hat.shape)
    return squared_error(w_hat, w), squared_error(p_hat, np.full(p_hat.shape, p))


def _value(x) -> float:
    return float(x.data) if isinstance(x, Tensor) else float(x)


def total_loss(l_s, l_o, l_p, l_w, alpha: float = 10.0, beta: float = 10.0, gamma: float = 10.0):
    """``l_s + alpha * l_o + beta * l_p + gamma * l_w``; raises TrainingError naming a non-finite term."""
    for name, v in (("l_s", l_s), ("l_o", l_o), ("l_p", l_p), ("l_w", l_w)):
        if not math.isfinite(_value(v)):
            raise TrainingError(f"loss term {name} is not finite ({_value(v)})")
    if not any(isinstance(v, Tensor) for v in (l_s, l_o, l_p, l_w)):
        return l_s + alpha * l_o + beta * l_p + gamma * l_w
    # accumulate in float64 so L matches its logged components at any loss magnitude
    with precision(np.float64):
        def up(v):
            return cast(v, np.float64) if isinstance(v, Tensor) else Tensor(v)
        out = up(l_s)
        for coef, term in ((alpha, l_o), (beta, l_p), (gamma, l_w)):
            out = add(out, mul(up(term), coef))
    return out


def path_progress(point, path) -> float:
    """Fraction of the path's arc length covered by the nearest path point (diagnostics only)."""
    s, _, _ = project_onto_polyline(point, path)
    total = polyline_lengths(path)[-1]
    return s / total if total > 0 else 1.0
