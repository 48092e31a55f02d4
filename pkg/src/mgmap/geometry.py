"""2-D geometry kernels shared by the world generator, simulator and supervision."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Normalise to (-pi, pi]; angles already in range are returned unchanged."""
    if -math.pi < theta <= math.pi:
        return float(theta)
    t = math.fmod(theta + math.pi, TWO_PI)
    if t <= 0.0:
        t += TWO_PI
    return t - math.pi


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_local(self, pts) -> np.ndarray:
        """World points -> agent frame (x forward, y left)."""
        pts = np.asarray(pts, dtype=np.float64)
        d = pts - np.array([self.x, self.y])
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)

    def to_world(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.stack([self.x + c * pts[..., 0] - s * pts[..., 1],
                         self.y + s * pts[..., 0] + c * pts[..., 1]], axis=-1)


def ray_segment_hits(origin, dirs: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distance along each unit ray to each segment, inf on a miss.  Shapes: dirs (N,2), segs (S,4) -> (N,S)."""
    n = dirs.shape[0]
    if segs.size == 0:
        return np.full((n, 0), np.inf)
    o = np.asarray(origin, dtype=np.float64)
    a = segs[:, :2]
    e = segs[:, 2:] - a
    dx, dy = dirs[:, 0:1], dirs[:, 1:2]
    denom = dx * e[:, 1] - dy * e[:, 0]
    w = a - o
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        u = (w[:, 0] * dy - w[:, 1] * dx) / denom
    ok = (np.abs(denom) > 1e-12) & (t >= 0) & (u >= 0) & (u <= 1)
    return np.where(ok, t, np.inf)


def ray_disc_hits(origin, dirs: np.ndarray, discs: np.ndarray) -> np.ndarray:
    """Distance along each unit ray to each disc boundary (entry point), inf on a miss.  discs (D,3) = cx, cy, r."""
    n = dirs.shape[0]
    if discs.size == 0:
        return np.full((n, 0), np.inf)
    o = np.asarray(origin, dtype=np.float64)
    f = o - discs[:, :2]
    b = dirs @ f.T
    c = (f * f).sum(axis=1) - discs[:, 2] ** 2
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - root
    t1 = -b + root
    t = np.where(t0 >= 0, t0, np.where(t1 >= 0, 0.0, np.inf))
    return np.where(disc >= 0, t, np.inf)


def point_segment_distance(pts: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Distance from each point (N,2) to each segment (S,4) -> (N,S)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if segs.size == 0:
        return np.full((pts.shape[0], 0), np.inf)
    a = segs[:, :2]
    e = segs[:, 2:] - a
    ee = (e * e).sum(axis=1)
    px = pts[:, 0:1] - a[:, 0]
    py = pts[:, 1:2] - a[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(ee > 0, (px * e[:, 0] + py * e[:, 1]) / ee, 0.0)
    u = np.clip(u, 0.0, 1.0)
    dx = px - u * e[:, 0]
    dy = py - u * e[:, 1]
    return np.sqrt(dx * dx + dy * dy)


def polyline_segments(path) -> np.ndarray:
    p = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    if len(p) == 1:
        return np.concatenate([p, p], axis=1)
    return np.concatenate([p[:-1], p[1:]], axis=1)


def point_polyline_distance(pts, path) -> np.ndarray:
    return point_segment_distance(pts, polyline_segments(path)).min(axis=1)


def polyline_lengths(path) -> np.ndarray:
    """Cumulative arc length at each vertex."""
    p = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def project_onto_polyline(point, path, min_arc: float = -np.inf) -> tuple[float, np.ndarray, int]:
    """Nearest point on the polyline: (arc length, point, segment index).

    Segments ending before arc length ``min_arc`` are ignored.  Ties go to
    the earliest segment.
    """
    p = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    segs = polyline_segments(p)
    q = np.asarray(point, dtype=np.float64)
    a = segs[:, :2]
    e = segs[:, 2:] - a
    ee = (e * e).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(ee > 0, ((q - a) * e).sum(axis=1) / ee, 0.0)
    u = np.clip(u, 0.0, 1.0)
    foot = a + u[:, None] * e
    d = np.linalg.norm(foot - q, axis=1)
    cum = polyline_lengths(p)
    seg_end = cum[1:] if len(p) > 1 else cum
    d = np.where(seg_end >= min_arc, d, np.inf)
    if not np.isfinite(d).any():
        d = np.linalg.norm(foot - q, axis=1)
    k = int(np.argmin(d))
    return float(cum[k] + u[k] * math.sqrt(ee[k])), foot[k], k


def rect_segments(cx: float, cy: float, hx: float, hy: float) -> np.ndarray:
    x0, x1, y0, y1 = cx - hx, cx + hx, cy - hy, cy + hy
    return np.array([[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]], dtype=np.float64)
