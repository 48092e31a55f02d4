"""Episode sampling: start/goal pairs, smoothed shortest paths and templated instructions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import Pose, point_polyline_distance, polyline_lengths, project_onto_polyline, wrap_angle
from .geodesic import geodesic_field
from .scene import GenerationError, Scene, describe
from .vocab import Vocab, category_names, instruction_text

TURN = math.radians(15.0)


@dataclass(frozen=True)
class EpisodeParams:
    min_len: float = 5.0
    max_len: float = 10.0
    success_distance: float = 3.0
    landmark_radius: float = 1.5
    min_landmarks: int = 2
    max_landmarks: int = 4
    goal_radius: float = 1.2  # goal is sampled within this distance of the target object's center
    max_tries: int = 100


@dataclass(frozen=True)
class Episode:
    episode_id: str
    scene_id: str
    start: Pose
    goal: tuple[float, float]
    path: tuple[tuple[float, float], ...]
    instruction_tokens: tuple[int, ...]
    instruction_text: str
    landmarks: tuple[int, ...] = ()

    @property
    def path_array(self) -> np.ndarray:
        return np.asarray(self.path, dtype=np.float64)

    @property
    def path_length(self) -> float:
        return float(polyline_lengths(self.path_array)[-1])


def smooth_path(grid, pts: np.ndarray) -> np.ndarray:
    """Greedy string pulling: from each kept vertex jump to the farthest vertex still in line of sight."""
    out = [pts[0]]
    i = 0
    n = len(pts)
    while i < n - 1:
        j = i + 1
        while j + 1 < n and grid.line_of_sight(pts[i], pts[j + 1]):
            j += 1
        out.append(pts[j])
        i = j
    return np.asarray(out)


def _landmarks(scene: Scene, path: np.ndarray, target: int, params: EpisodeParams, rng) -> list[int] | None:
    centers = np.asarray([o.center for o in scene.objects])
    d = point_polyline_distance(centers, path)
    if d[target] > params.landmark_radius:
        return None
    others = [i for i in np.argsort(d, kind="stable") if i != target and d[i] <= params.landmark_radius]
    n_extra = min(len(others), params.max_landmarks - 1, int(rng.integers(1, params.max_landmarks)))
    chosen = sorted(others[:n_extra], key=lambda i: project_onto_polyline(centers[i], path)[0])
    chosen.append(target)
    if len(chosen) < params.min_landmarks:
        return None
    return [int(i) for i in chosen]


def sample_episode(scene: Scene, seed: int, params: EpisodeParams | None = None,
                   episode_id: str | None = None, vocab: Vocab | None = None) -> Episode:
    """Deterministic episode for ``(scene, seed)``; resamples until every constraint holds."""
    params = params or EpisodeParams()
    vocab = vocab or Vocab.build(scene.n_categories)
    names = category_names(scene.n_categories)
    rng = np.random.default_rng(seed)
    grid = scene.grid
    region = grid.largest_component()
    cells = np.argwhere(region)
    centers = grid.centers(cells)
    for _ in range(params.max_tries):
        target = int(rng.integers(len(scene.objects)))
        near = np.linalg.norm(centers - np.asarray(scene.objects[target].center), axis=1) <= params.goal_radius
        if not near.any():
            continue
        goal = centers[rng.choice(np.flatnonzero(near))]
        field = geodesic_field(scene, goal, limit=params.max_len + 1.0, predecessors=True)
        g = field.values[cells[:, 0], cells[:, 1]]
        ok = (g >= params.min_len) & (g <= params.max_len) & (g > params.success_distance)
        if not ok.any():
            continue
        start = centers[rng.choice(np.flatnonzero(ok))]
        raw = field.path_from(start)
        path = smooth_path(grid, raw)
        path[0], path[-1] = start, goal
        marks = _landmarks(scene, path, target, params, rng)
        if marks is None:
            continue
        words = [(*describe(scene.objects[i]), names[scene.objects[i].category_id]) for i in marks]
        text = instruction_text(words[:-1], words[-1])
        heading = wrap_angle(int(rng.integers(24)) * TURN)
        return Episode(
            episode_id=episode_id or f"{scene.id}_ep{seed:05d}",
            scene_id=scene.id,
            start=Pose(float(start[0]), float(start[1]), heading),
            goal=(float(goal[0]), float(goal[1])),
            path=tuple((float(x), float(y)) for x, y in path),
            instruction_tokens=tuple(vocab.encode(text)),
            instruction_text=text,
            landmarks=tuple(marks),
        )
    raise GenerationError(f"no valid episode after {params.max_tries} tries (scene {scene.id}, seed {seed})")


def sample_episodes(scene: Scene, n: int, seed: int, params: EpisodeParams | None = None) -> list[Episode]:
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=n)
    return [sample_episode(scene, int(s), params, episode_id=f"{scene.id}_ep{i:04d}") for i, s in enumerate(seeds)]
