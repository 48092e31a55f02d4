"""Free-space occupancy grid and geodesic distance fields.

The grid is indexed ``[ix, iy]`` with cell centers at
``origin + (i + 0.5) * cell``.  Shortest paths run over free cells with
8-connectivity (diagonal cost sqrt(2) * cell); a diagonal move needs both
orthogonal neighbours free so paths never cut obstacle corners.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from ..geometry import ray_disc_hits, ray_segment_hits
from .scene import DomainError

_OFFSETS = ((1, 0), (0, 1), (1, 1), (1, -1))
SNAP_RADIUS = 0.3


class OccupancyGrid:
    def __init__(self, origin, cell: float, blocked: np.ndarray, scene=None):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.cell = float(cell)
        self.blocked = blocked
        self.free = ~blocked
        self.shape = blocked.shape
        self.scene = scene
        self._graph = None
        self._labels = None

    @classmethod
    def from_scene(cls, scene) -> "OccupancyGrid":
        xmin, ymin, xmax, ymax = scene.bounds
        cell = scene.grid_cell
        nx = int(math.ceil((xmax - xmin) / cell - 1e-9))
        ny = int(math.ceil((ymax - ymin) / cell - 1e-9))
        cx = xmin + (np.arange(nx) + 0.5) * cell
        cy = ymin + (np.arange(ny) + 0.5) * cell
        pts = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1).reshape(-1, 2)
        blocked = (scene.clearance(pts) < scene.inflation) | scene.in_obstacle(pts)
        return cls((xmin, ymin), cell, blocked.reshape(nx, ny), scene)

    # indexing
    def centers(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return self.origin + (idx + 0.5) * self.cell

    def cell_of(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return np.floor((pts - self.origin) / self.cell).astype(np.int64)

    def inside(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return (idx[..., 0] >= 0) & (idx[..., 0] < self.shape[0]) & (idx[..., 1] >= 0) & (idx[..., 1] < self.shape[1])

    def is_free(self, pts) -> np.ndarray:
        idx = self.cell_of(np.asarray(pts, dtype=np.float64).reshape(-1, 2))
        ok = self.inside(idx)
        out = np.zeros(len(idx), dtype=bool)
        out[ok] = self.free[idx[ok, 0], idx[ok, 1]]
        return out

    def flat(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return idx[..., 0] * self.shape[1] + idx[..., 1]

    def unflat(self, k) -> np.ndarray:
        k = np.asarray(k)
        return np.stack([k // self.shape[1], k % self.shape[1]], axis=-1)

    # graph
    @property
    def graph(self):
        if self._graph is None:
            nx, ny = self.shape
            rows, cols, w = [], [], []
            f = self.free
            for dx, dy in _OFFSETS:
                lo, hi = max(0, -dy), ny - max(0, dy)
                xs, xd = slice(0, nx - dx), slice(dx, nx)
                ys, yd = slice(lo, hi), slice(lo + dy, hi + dy)
                ok = f[xs, ys] & f[xd, yd]
                if dx and dy:
                    # no corner cutting
                    ok &= f[xd, ys] & f[xs, yd]
                ii, jj = np.nonzero(ok)
                jj = jj + lo
                rows.append(ii * ny + jj)
                cols.append((ii + dx) * ny + jj + dy)
                w.append(np.full(len(ii), self.cell * (math.sqrt(2.0) if dx and dy else 1.0)))
            r = np.concatenate(rows)
            c = np.concatenate(cols)
            ww = np.concatenate(w)
            n = nx * ny
            self._graph = coo_matrix((np.concatenate([ww, ww]), (np.concatenate([r, c]), np.concatenate([c, r]))),
                                     shape=(n, n)).tocsr()
        return self._graph

    @property
    def labels(self) -> np.ndarray:
        """Connected-component label per cell (blocked cells get -1)."""
        if self._labels is None:
            _, lab = connected_components(self.graph, directed=False)
            lab = lab.reshape(self.shape).copy()
            lab[self.blocked] = -1
            self._labels = lab
        return self._labels

    def largest_component(self) -> np.ndarray:
        lab = self.labels
        vals, counts = np.unique(lab[lab >= 0], return_counts=True)
        if len(vals) == 0:
            return np.zeros(self.shape, dtype=bool)
        return lab == vals[np.argmax(counts)]

    def largest_component_fraction(self) -> float:
        n = self.free.sum()
        return float(self.largest_component().sum() / n) if n else 0.0

    def snap(self, point, radius: float = SNAP_RADIUS) -> np.ndarray:
        """Nearest free cell (index) to ``point`` within ``radius``; DomainError if none."""
        p = np.asarray(point, dtype=np.float64)
        c = self.cell_of(p)
        if self.inside(c) and self.free[c[0], c[1]]:
            return c
        r = int(math.ceil(radius / self.cell))
        ii, jj = np.meshgrid(np.arange(c[0] - r, c[0] + r + 1), np.arange(c[1] - r, c[1] + r + 1), indexing="ij")
        cand = np.stack([ii.ravel(), jj.ravel()], axis=1)
        cand = cand[self.inside(cand)]
        cand = cand[self.free[cand[:, 0], cand[:, 1]]]
        if len(cand) == 0:
            raise DomainError(f"no free cell within {radius} m of {tuple(np.round(p, 3))}")
        d = np.linalg.norm(self.centers(cand) - p, axis=1)
        return cand[int(np.argmin(d))]

    def line_of_sight(self, a, b) -> bool:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / (self.cell / 4))) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        return bool(self.is_free(a + t * (b - a)).all())

    def field(self, sources, limit: float = np.inf) -> "GeodesicField":
        return geodesic_field_on_grid(self, sources, limit)


@dataclass
class GeodesicField:
    grid: OccupancyGrid
    values: np.ndarray  # (nx, ny), +inf where unreachable
    predecessors: np.ndarray | None = None
    window: float = SNAP_RADIUS

    def at(self, point) -> float:
        """Geodesic distance at a continuous point: best ``value + straight hop`` over nearby free cells."""
        return float(self.at_many(np.asarray(point, dtype=np.float64)[None, :])[0])

    def at_many(self, points) -> np.ndarray:
        """Vectorised :meth:`at`.  The 3x3 block around each point's cell decides; points whose block is
        entirely blocked (inside the inflated band) fall back to a wider search with a line-of-sight check."""
        g = self.grid
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        c = g.cell_of(pts)
        off = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)])
        nb = c[:, None, :] + off[None]  # (N, 9, 2)
        ok = g.inside(nb)
        nbc = np.where(ok[..., None], nb, 0)
        free = ok & g.free[nbc[..., 0], nbc[..., 1]]
        vals = np.where(free, self.values[nbc[..., 0], nbc[..., 1]], np.inf)
        hop = np.linalg.norm(g.centers(nb) - pts[:, None, :], axis=2)
        out = (vals + hop).min(axis=1)
        for k in np.flatnonzero(~free.any(axis=1)):
            out[k] = self._wide(pts[k])
        return out

    def _wide(self, p: np.ndarray) -> float:
        g = self.grid
        c = g.cell_of(p)
        r = int(math.ceil(self.window / g.cell))
        x0, x1 = max(c[0] - r, 0), min(c[0] + r + 1, g.shape[0])
        y0, y1 = max(c[1] - r, 0), min(c[1] + r + 1, g.shape[1])
        if x0 >= x1 or y0 >= y1:
            return math.inf
        vals = self.values[x0:x1, y0:y1]
        cx = g.origin[0] + (np.arange(x0, x1) + 0.5) * g.cell
        cy = g.origin[1] + (np.arange(y0, y1) + 0.5) * g.cell
        cand = vals + np.hypot(cx[:, None] - p[0], cy[None, :] - p[1])
        for k in np.argsort(cand, axis=None):
            if not np.isfinite(cand.flat[k]):
                break
            i, j = np.unravel_index(k, cand.shape)
            if g.scene is None or not crosses_obstacle(g.scene, p, (cx[i], cy[j])):
                return float(cand.flat[k])
        return math.inf

    def path_from(self, point) -> np.ndarray:
        """Cell-center path from ``point``'s cell down to the nearest source, following predecessors."""
        if self.predecessors is None:
            raise ValueError("field was built without predecessors")
        g = self.grid
        k = int(g.flat(g.snap(point)))
        if not np.isfinite(self.values.ravel()[k]):
            raise DomainError("point is not connected to the source")
        out = [k]
        pred = self.predecessors
        while pred[out[-1]] >= 0:
            out.append(int(pred[out[-1]]))
        return g.centers(g.unflat(np.asarray(out)))


def crosses_obstacle(scene, a, b) -> bool:
    """True if the straight segment a-b meets any wall or object boundary."""
    a = np.asarray(a, dtype=np.float64)
    d = np.asarray(b, dtype=np.float64) - a
    n = float(np.linalg.norm(d))
    if n == 0.0:
        return False
    u = (d / n)[None, :]
    hits = np.concatenate([ray_segment_hits(a, u, scene.segments), ray_disc_hits(a, u, scene.discs)], axis=1)
    return bool((hits <= n).any())


def geodesic_field_on_grid(grid: OccupancyGrid, sources, limit: float = np.inf,
                           predecessors: bool = False) -> GeodesicField:
    pts = np.asarray(sources, dtype=np.float64).reshape(-1, 2)
    if grid.scene is not None and grid.scene.in_obstacle(pts).any():
        raise DomainError("geodesic source lies inside an obstacle")
    idx = np.stack([grid.snap(p) for p in pts])
    flat = np.unique(grid.flat(idx))
    if predecessors:
        dist, pred, _ = dijkstra(grid.graph, directed=False, indices=flat, min_only=True, limit=limit,
                                 return_predecessors=True)
    else:
        dist = dijkstra(grid.graph, directed=False, indices=flat, min_only=True, limit=limit)
        pred = None
    return GeodesicField(grid, dist.reshape(grid.shape), pred)


def geodesic_field(scene, source, limit: float = np.inf, predecessors: bool = False) -> GeodesicField:
    """Distances (m) from ``source`` (a point or a list of points) over the scene's free-space grid."""
    return geodesic_field_on_grid(scene.grid, source, limit, predecessors)


def geodesic_distance(scene, a, b) -> float:
    return geodesic_field(scene, a).at(b)
