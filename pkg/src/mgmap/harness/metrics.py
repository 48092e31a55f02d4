"""Episode metrics and localization diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..mapping import MapSpec, ego_cell


@dataclass
class EpisodeResult:
    episode_id: str
    success: bool
    oracle_success: bool
    trajectory_length: float
    navigation_error: float
    spl: float
    steps: int
    iou: list[float] = field(default_factory=list)
    waypoint_hits: list[bool] = field(default_factory=list)
    semantic_correct: int = 0
    semantic_total: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def spl(success: bool, shortest: float, traveled: float) -> float:
    """``s * d / max(d, d_bar)``."""
    if not success:
        return 0.0
    denom = max(shortest, traveled)
    return float(shortest / denom) if denom > 0 else 1.0


def evaluate_episode(positions, stopped: bool, traveled: float, steps: int, field_goal, shortest: float,
                     episode_id: str = "", success_distance: float = 3.0) -> EpisodeResult:
    """Score a finished trajectory.

    ``positions`` are every visited (x, y) including the start and the final
    position; ``field_goal`` gives geodesic distance to the goal.
    """
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    dist = field_goal.at_many(pts)
    ne = float(dist[-1])
    success = bool(stopped and ne <= success_distance)
    os_ = bool(np.any(dist <= success_distance))
    return EpisodeResult(episode_id, success, os_, float(traveled), ne, spl(success, shortest, traveled), steps)


def top_mask(grid: np.ndarray, frac: float = 0.1) -> np.ndarray:
    """Boolean mask of the ``ceil(frac * size)`` highest cells; ties go to the earlier raster index."""
    flat = np.asarray(grid, dtype=np.float64).ravel()
    k = max(1, int(math.ceil(frac * flat.size - 1e-9)))
    order = np.lexsort((np.arange(flat.size), -flat))  # value desc, then raster order
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:k]] = True
    return mask.reshape(np.shape(grid))


def localization_iou(p_hat: np.ndarray, P: np.ndarray, frac: float = 0.1) -> float:
    a = top_mask(p_hat, frac)
    b = top_mask(P, frac)
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def waypoint_hits(waypoints, grids, spec: MapSpec, frac: float = 0.1) -> list[bool]:
    """Whether each agent-frame waypoint falls in its grid's top mask; off-map waypoints miss."""
    out = []
    for w, P in zip(waypoints, grids):
        i, j = ego_cell(spec, w)
        out.append(bool(0 <= i < spec.m and 0 <= j < spec.m and top_mask(P, frac)[i, j]))
    return out


def waypoint_hit_rate(waypoints, grids, spec: MapSpec, frac: float = 0.1) -> float:
    hits = waypoint_hits(waypoints, grids, spec, frac)
    return 100.0 * float(np.mean(hits)) if hits else 0.0


def aggregate(results: list[EpisodeResult]) -> dict:
    """Plain means over episodes (in episode-id order)."""
    results = sorted(results, key=lambda r: r.episode_id)
    n = len(results)
    if n == 0:
        return {"episodes": 0}
    ious = [v for r in results for v in r.iou]
    hits = [v for r in results for v in r.waypoint_hits]
    sem_total = sum(r.semantic_total for r in results)
    return {
        "episodes": n,
        "SR": float(np.mean([r.success for r in results])),
        "OS": float(np.mean([r.oracle_success for r in results])),
        "SPL": float(np.mean([r.spl for r in results])),
        "TL": float(np.mean([r.trajectory_length for r in results])),
        "NE": float(np.mean([r.navigation_error for r in results])),
        "IoU": float(np.mean(ious)) if ious else None,
        "waypoint_hit_rate": 100.0 * float(np.mean(hits)) if hits else None,
        "semantic_accuracy": sum(r.semantic_correct for r in results) / sem_total if sem_total else None,
    }
