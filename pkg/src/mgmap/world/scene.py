"""Synthetic multi-room scenes with attributed objects."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..geometry import point_segment_distance, rect_segments
from .vocab import COLORS, MATERIALS, WALL_CATEGORY

WALL_FEATURE_VALUE = 0.5


class GenerationError(RuntimeError):
    """Scene or episode constraints could not be met within the retry budget."""


class DomainError(ValueError):
    """A query point lies outside the valid domain (inside an obstacle or off the map)."""


@dataclass(frozen=True)
class Footprint:
    kind: str  # "disc" or "rect"
    size: tuple[float, ...]  # (radius,) or (half_x, half_y)

    @property
    def bounding_radius(self) -> float:
        return self.size[0] if self.kind == "disc" else math.hypot(*self.size)


@dataclass(frozen=True)
class SceneObject:
    center: tuple[float, float]
    footprint: Footprint
    category_id: int
    attributes: tuple[float, ...]

    def distance_to(self, pts) -> np.ndarray:
        """Distance from points to the footprint (0 inside)."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        d = pts - np.asarray(self.center)
        if self.footprint.kind == "disc":
            return np.maximum(np.linalg.norm(d, axis=1) - self.footprint.size[0], 0.0)
        q = np.abs(d) - np.asarray(self.footprint.size)
        return np.linalg.norm(np.maximum(q, 0.0), axis=1)

    def contains(self, pts) -> np.ndarray:
        """Strict interior test."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        d = pts - np.asarray(self.center)
        if self.footprint.kind == "disc":
            return np.linalg.norm(d, axis=1) < self.footprint.size[0]
        return np.all(np.abs(d) < np.asarray(self.footprint.size), axis=1)


@dataclass(frozen=True)
class WorldParams:
    size: tuple[float, float] = (10.0, 10.0)
    rooms: int = 3
    objects: int = 12
    ambiguity: float = 0.33
    n_categories: int = 8
    n_features: int = 8
    door_width: float = 1.0
    wall_clearance: float = 0.55
    object_gap: float = 0.7
    ambiguity_radius: float = 4.0
    attribute_noise: float = 0.03
    grid_cell: float = 0.06
    inflation: float = 0.15
    max_tries: int = 200


@dataclass(frozen=True, eq=False)
class Scene:
    id: str
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    walls: tuple[tuple[float, float, float, float], ...]
    objects: tuple[SceneObject, ...]
    grid_cell: float = 0.06
    inflation: float = 0.15
    n_categories: int = 8
    n_features: int = 8
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.id, self.bounds, self.walls, self.objects, self.grid_cell, self.inflation,
                self.n_categories, self.n_features) == (other.id, other.bounds, other.walls, other.objects,
                                                        other.grid_cell, other.inflation, other.n_categories,
                                                        other.n_features)

    __hash__ = object.__hash__

    @property
    def wall_feature(self) -> np.ndarray:
        f = np.zeros(self.n_features)
        f[:3] = WALL_FEATURE_VALUE
        return f

    @cached_property
    def segments(self) -> np.ndarray:
        """All straight obstacle edges (S,4): walls first, then rectangle edges."""
        segs = [np.asarray(self.walls, dtype=np.float64).reshape(-1, 4)]
        for o in self.objects:
            if o.footprint.kind == "rect":
                segs.append(rect_segments(*o.center, *o.footprint.size))
        return np.concatenate(segs, axis=0)

    @cached_property
    def segment_owner(self) -> np.ndarray:
        """Object index owning each segment, -1 for walls."""
        owner = [-1] * len(self.walls)
        for i, o in enumerate(self.objects):
            if o.footprint.kind == "rect":
                owner += [i] * 4
        return np.asarray(owner, dtype=np.int64)

    @cached_property
    def discs(self) -> np.ndarray:
        rows = [(*o.center, o.footprint.size[0]) for o in self.objects if o.footprint.kind == "disc"]
        return np.asarray(rows, dtype=np.float64).reshape(-1, 3)

    @cached_property
    def disc_owner(self) -> np.ndarray:
        return np.asarray([i for i, o in enumerate(self.objects) if o.footprint.kind == "disc"], dtype=np.int64)

    @cached_property
    def attribute_matrix(self) -> np.ndarray:
        """Row i = attributes of object i; final row = wall feature."""
        rows = [np.asarray(o.attributes) for o in self.objects] + [self.wall_feature]
        return np.stack(rows)

    @cached_property
    def category_vector(self) -> np.ndarray:
        return np.asarray([o.category_id for o in self.objects] + [WALL_CATEGORY], dtype=np.int64)

    def in_obstacle(self, pts) -> np.ndarray:
        """Strictly inside an object footprint or outside the scene bounds."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        xmin, ymin, xmax, ymax = self.bounds
        bad = (pts[:, 0] <= xmin) | (pts[:, 0] >= xmax) | (pts[:, 1] <= ymin) | (pts[:, 1] >= ymax)
        for o in self.objects:
            bad |= o.contains(pts)
        return bad

    def clearance(self, pts) -> np.ndarray:
        """Distance from points to the nearest obstacle boundary (walls or objects)."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        d = point_segment_distance(pts, np.asarray(self.walls, dtype=np.float64).reshape(-1, 4)).min(axis=1, initial=np.inf)
        for o in self.objects:
            d = np.minimum(d, o.distance_to(pts))
        return d

    @property
    def grid(self):
        from .geodesic import OccupancyGrid
        g = self._cache.get("grid")
        if g is None:
            g = self._cache["grid"] = OccupancyGrid.from_scene(self)
        return g


def _split_rooms(rng: np.random.Generator, bounds, n_rooms: int, door: float, min_room: float):
    """Recursively split the largest room along its longer side; every split wall gets one door."""
    rooms = [tuple(bounds)]
    walls: list[tuple[float, float, float, float]] = []
    while len(rooms) < n_rooms:
        rooms.sort(key=lambda r: -(r[2] - r[0]) * (r[3] - r[1]))
        x0, y0, x1, y1 = rooms.pop(0)
        vertical = (x1 - x0) >= (y1 - y0)
        lo, hi = (x0, x1) if vertical else (y0, y1)
        if hi - lo < 2 * min_room:
            raise GenerationError("room too small to split further")
        cut = float(rng.uniform(lo + min_room, hi - min_room))
        a, b = (y0, y1) if vertical else (x0, x1)
        d0 = float(rng.uniform(a + 0.3, b - 0.3 - door))
        d1 = d0 + door
        if vertical:
            walls += [(cut, a, cut, d0), (cut, d1, cut, b)]
            rooms += [(x0, y0, cut, y1), (cut, y0, x1, y1)]
        else:
            walls += [(a, cut, d0, cut), (d1, cut, b, cut)]
            rooms += [(x0, y0, x1, cut), (x0, cut, x1, y1)]
    return walls


def _attributes(rng, category: int, color: int, material: int, params: WorldParams) -> tuple[float, ...]:
    """Color one-hot (3) | material one-hot (2) | 3-bit category shape code, plus clipped noise."""
    v = np.zeros(params.n_features)
    v[color] = 1.0
    v[len(COLORS) + material] = 1.0
    base = len(COLORS) + len(MATERIALS)
    for bit in range(min(3, params.n_features - base)):
        v[base + bit] = float((category >> bit) & 1)
    v = np.clip(v + rng.normal(0.0, params.attribute_noise, size=v.shape), 0.0, 1.0)
    return tuple(float(x) for x in np.round(v, 6))


def _place_objects(rng, walls_arr, params: WorldParams, bounds):
    xmin, ymin, xmax, ymax = bounds
    placed: list[tuple[np.ndarray, Footprint]] = []
    attempts = 0
    while len(placed) < params.objects:
        attempts += 1
        if attempts > 400 * params.objects:
            raise GenerationError("could not pack objects")
        if rng.random() < 0.5:
            fp = Footprint("disc", (float(np.round(rng.uniform(0.25, 0.5), 3)),))
        else:
            fp = Footprint("rect", (float(np.round(rng.uniform(0.25, 0.6), 3)),
                                    float(np.round(rng.uniform(0.25, 0.6), 3))))
        r = fp.bounding_radius
        c = np.round(rng.uniform([xmin + r, ymin + r], [xmax - r, ymax - r]), 3)
        probe = SceneObject(tuple(c), fp, 1, ())
        # clearance from walls, measured from the footprint boundary
        edge_pts = _footprint_samples(probe)
        if point_segment_distance(edge_pts, walls_arr).min() < params.wall_clearance:
            continue
        if any(np.linalg.norm(c - pc) < r + pf.bounding_radius + params.object_gap for pc, pf in placed):
            continue
        placed.append((c, fp))
    return placed


def _footprint_samples(o: SceneObject) -> np.ndarray:
    cx, cy = o.center
    if o.footprint.kind == "disc":
        a = np.linspace(0, 2 * np.pi, 48, endpoint=False)
        r = o.footprint.size[0]
        return np.stack([cx + r * np.cos(a), cy + r * np.sin(a)], axis=1)
    hx, hy = o.footprint.size
    t = np.linspace(-1, 1, 13)
    return np.concatenate([np.stack([cx + hx * t, np.full_like(t, cy - hy)], 1),
                           np.stack([cx + hx * t, np.full_like(t, cy + hy)], 1),
                           np.stack([np.full_like(t, cx - hx), cy + hy * t], 1),
                           np.stack([np.full_like(t, cx + hx), cy + hy * t], 1)])


def _assign_categories(rng, centers: np.ndarray, params: WorldParams):
    """Pick ambiguous pairs, then categories that create no further close same-category pairs."""
    n = len(centers)
    k_obj = params.n_categories - 1  # category 0 is the wall
    dist = np.linalg.norm(centers[:, None] - centers[None], axis=2)
    close = (dist < params.ambiguity_radius) & ~np.eye(n, dtype=bool)
    n_amb = math.ceil(params.ambiguity * n - 1e-9)
    n_pairs = math.ceil(n_amb / 2)
    cats = np.full(n, -1)
    pairs: list[tuple[int, int]] = []
    order = rng.permutation(n)
    used = set()
    for i in order:
        if len(pairs) == n_pairs:
            break
        if i in used:
            continue
        partners = [j for j in rng.permutation(n) if close[i, j] and j not in used]
        if partners:
            pairs.append((int(i), int(partners[0])))
            used |= {int(i), int(partners[0])}
    if len(pairs) < n_pairs:
        return None
    for i, j in pairs:
        # a pair's category must not clash with anything already assigned nearby
        options = [c for c in range(1, k_obj + 1)
                   if not any(cats[x] == c and (close[i, x] or close[j, x]) for x in range(n))]
        if not options:
            return None
        c = int(rng.choice(options))
        cats[i] = cats[j] = c
    for i in rng.permutation(n):
        if cats[i] >= 0:
            continue
        options = [c for c in range(1, k_obj + 1) if not any(cats[x] == c and close[i, x] for x in range(n))]
        if not options:
            return None
        cats[i] = int(rng.choice(options))
    return cats, pairs


def generate_scene(seed: int, params: WorldParams | None = None, scene_id: str | None = None) -> Scene:
    """Deterministic scene for ``seed``.

    Every ambiguous pair shares a category, lies within ``ambiguity_radius``
    and differs in color or material.  All other same-category objects are
    kept at least ``ambiguity_radius`` apart.
    """
    params = params or WorldParams()
    if params.n_categories < 2 or params.n_features < len(COLORS) + len(MATERIALS):
        raise GenerationError("need at least 2 categories and 5 feature dims")
    rng = np.random.default_rng(seed)
    w, h = params.size
    bounds = (0.0, 0.0, float(w), float(h))
    outer = [(0.0, 0.0, w, 0.0), (w, 0.0, w, h), (w, h, 0.0, h), (0.0, h, 0.0, 0.0)]
    for _ in range(params.max_tries):
        try:
            inner = _split_rooms(rng, bounds, params.rooms, params.door_width, min_room=2.0)
            walls = [tuple(float(np.round(v, 3)) for v in s) for s in outer + inner]
            placed = _place_objects(rng, np.asarray(walls, dtype=np.float64), params, bounds)
        except GenerationError:
            continue
        centers = np.stack([c for c, _ in placed])
        res = _assign_categories(rng, centers, params)
        if res is None:
            continue
        cats, pairs = res
        styles = {}
        for i, j in pairs:
            a, b = rng.choice(len(COLORS) * len(MATERIALS), size=2, replace=False)
            styles[i], styles[j] = int(a), int(b)
        objects = []
        for i, (c, fp) in enumerate(placed):
            style = styles.get(i, int(rng.integers(len(COLORS) * len(MATERIALS))))
            color, material = divmod(style, len(MATERIALS))
            attrs = _attributes(rng, int(cats[i]), color, material, params)
            objects.append(SceneObject((float(c[0]), float(c[1])), fp, int(cats[i]), attrs))
        scene = Scene(scene_id or f"scene_{seed:05d}", bounds, tuple(walls), tuple(objects),
                      params.grid_cell, params.inflation, params.n_categories, params.n_features)
        if scene.grid.largest_component_fraction() < 0.9:
            continue
        return scene
    raise GenerationError(f"scene generation failed after {params.max_tries} tries (seed {seed})")


def ambiguous_objects(scene: Scene, radius: float = 4.0) -> list[int]:
    """Indices of objects with a same-category partner within ``radius`` whose attributes differ."""
    out = []
    for i, a in enumerate(scene.objects):
        for j, b in enumerate(scene.objects):
            if i != j and a.category_id == b.category_id \
                    and math.dist(a.center, b.center) < radius and a.attributes != b.attributes:
                out.append(i)
                break
    return out


def describe(obj: SceneObject) -> tuple[str, str]:
    """Dominant (color, material) words from the attribute vector."""
    a = np.asarray(obj.attributes)
    return COLORS[int(np.argmax(a[:len(COLORS)]))], MATERIALS[int(np.argmax(a[len(COLORS):len(COLORS) + len(MATERIALS)]))]
