"""Point-agent kinematics, limited field-of-view ray sensing and the shortest-path teacher."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .geometry import Pose, polyline_lengths, project_onto_polyline, ray_disc_hits, ray_segment_hits, wrap_angle
from .world.geodesic import GeodesicField, geodesic_field
from .world.scene import Scene


class Action(IntEnum):
    STOP = 0
    FORWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3


class UsageError(RuntimeError):
    """An action was issued to an episode that has already ended."""


class PlanningError(RuntimeError):
    """The teacher's target is unreachable from the agent's position."""


@dataclass(frozen=True)
class SimParams:
    forward: float = 0.25
    turn_deg: float = 15.0
    n_rays: int = 64
    fov_deg: float = 90.0
    max_range: float = 6.0
    noise: float = 0.02
    budget: int = 500
    contact_margin: float = 0.02
    stop_radius: float = 0.25
    lookahead: float = 0.3
    backtrack: float = 0.5

    @property
    def turns_per_rev(self) -> int:
        return int(round(360.0 / self.turn_deg))


@dataclass(frozen=True)
class SimState:
    scene: Scene
    pose: Pose
    step: int = 0
    collisions: int = 0
    done: bool = False
    theta0: float = 0.0
    turns: int = 0
    traveled: float = 0.0
    collided: bool = False
    stopped: bool = False


@dataclass(frozen=True)
class Observation:
    R_feat: np.ndarray  # (n_rays, F)
    D: np.ndarray  # (n_rays,)
    cat_gt: np.ndarray  # (n_rays,), -1 where nothing is hit within range
    angles: np.ndarray  # ray bearings relative to heading, left to right
    hit: np.ndarray  # (n_rays,) bool


def reset(scene: Scene, pose: Pose) -> SimState:
    theta = wrap_angle(pose.theta)
    return SimState(scene, Pose(pose.x, pose.y, theta), theta0=theta)


def _first_contact(scene: Scene, origin: np.ndarray, direction: np.ndarray):
    """Distance to the first obstacle along a unit direction and the surface tangent there."""
    u = direction[None, :]
    ts = ray_segment_hits(origin, u, scene.segments)[0]
    td = ray_disc_hits(origin, u, scene.discs)[0]
    best, tangent = math.inf, None
    if ts.size and ts.min() < best:
        k = int(np.argmin(ts))
        best = float(ts[k])
        e = scene.segments[k, 2:] - scene.segments[k, :2]
        tangent = e / np.linalg.norm(e)
    if td.size and td.min() < best:
        k = int(np.argmin(td))
        best = float(td[k])
        hit = origin + best * direction
        n = hit - scene.discs[k, :2]
        tangent = np.array([-n[1], n[0]]) / max(np.linalg.norm(n), 1e-12)
    return best, tangent


def _translate(scene: Scene, p: np.ndarray, u: np.ndarray, dist: float, margin: float):
    """Move up to ``dist`` along ``u``; on contact stop ``margin`` short, then slide once along the surface."""
    t, tangent = _first_contact(scene, p, u)
    if t - margin >= dist:
        return p + dist * u, False
    moved = max(t - margin, 0.0)
    p = p + moved * u
    rest = dist - moved
    along = float(u @ tangent)
    if abs(along) < 1e-9:
        return p, True
    v = tangent if along > 0 else -tangent
    slide = rest * abs(along)
    t2, _ = _first_contact(scene, p, v)
    p = p + max(min(slide, t2 - margin), 0.0) * v
    return p, True


def _translate_many(scene: Scene, p: np.ndarray, dirs: np.ndarray, dist: float, margin: float) -> np.ndarray:
    """:func:`_translate` for many unit directions from one point (end points only)."""
    t = np.concatenate([ray_segment_hits(p, dirs, scene.segments), ray_disc_hits(p, dirs, scene.discs)],
                       axis=1).min(axis=1, initial=np.inf)
    out = p + dist * dirs
    for k in np.flatnonzero(t - margin < dist):
        out[k] = _translate(scene, p, dirs[k], dist, margin)[0]
    return out


def step(state: SimState, action: Action, params: SimParams = SimParams()) -> SimState:
    if state.done:
        raise UsageError("episode already ended; no further actions accepted")
    action = Action(action)
    n = state.step + 1
    if action == Action.STOP:
        return replace(state, step=n, done=True, stopped=True, collided=False)
    if action in (Action.TURN_LEFT, Action.TURN_RIGHT):
        turns = (state.turns + (1 if action == Action.TURN_LEFT else -1)) % params.turns_per_rev
        theta = wrap_angle(state.theta0 + turns * math.radians(params.turn_deg)) if turns else state.theta0
        pose = Pose(state.pose.x, state.pose.y, theta)
        return replace(state, pose=pose, turns=turns, step=n, collided=False, done=n >= params.budget)
    p = np.array([state.pose.x, state.pose.y])
    u = np.array([math.cos(state.pose.theta), math.sin(state.pose.theta)])
    q, hit = _translate(state.scene, p, u, params.forward, params.contact_margin)
    pose = Pose(float(q[0]), float(q[1]), state.pose.theta)
    return replace(state, pose=pose, step=n, collisions=state.collisions + int(hit), collided=hit,
                   traveled=state.traveled + float(np.linalg.norm(q - p)), done=n >= params.budget)


def ray_angles(params: SimParams = SimParams()) -> np.ndarray:
    half = math.radians(params.fov_deg) / 2
    return np.linspace(half, -half, params.n_rays)


def observe(state: SimState, params: SimParams = SimParams(), rng=None) -> Observation:
    """Cast the fan of rays.  ``rng`` (Generator or seed) drives the feature noise; None disables it."""
    scene = state.scene
    pose = state.pose
    rel = ray_angles(params)
    ang = pose.theta + rel
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    o = np.array([pose.x, pose.y])
    ts = ray_segment_hits(o, dirs, scene.segments)
    td = ray_disc_hits(o, dirs, scene.discs)
    allt = np.concatenate([ts, td], axis=1)
    owner = np.concatenate([scene.segment_owner, scene.disc_owner])
    k = np.argmin(allt, axis=1) if allt.shape[1] else np.zeros(len(rel), dtype=np.int64)
    t = allt[np.arange(len(rel)), k] if allt.shape[1] else np.full(len(rel), np.inf)
    hit = t <= params.max_range
    obj = np.where(owner[k] < 0, len(scene.objects), owner[k]) if allt.shape[1] else np.full(len(rel), -1)
    feats = np.where(hit[:, None], scene.attribute_matrix[obj], 0.0)
    cats = np.where(hit, scene.category_vector[obj], -1)
    depth = np.where(hit, np.maximum(t, 1e-6), params.max_range)
    if rng is not None and params.noise > 0:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        feats = feats + rng.normal(0.0, params.noise, size=feats.shape)
    return Observation(feats, depth, cats.astype(np.int64), rel, hit)


class Oracle:
    """Greedy teacher following the episode path.

    The target is the first path vertex more than ``lookahead`` metres of
    arc length beyond the agent's projection onto the path.  The projection
    only considers path parts no more than ``backtrack`` metres behind the
    furthest progress seen so far, so hairpins and walls between path legs
    cannot make the target jump backwards.  Every reachable
    heading is scored by the geodesic distance to that target after one
    collision-aware forward step.  FORWARD is chosen when the current heading
    scores best (ties included); otherwise the agent turns toward the best
    heading the shorter way round, left on a tie.
    """

    def __init__(self, scene: Scene, path, params: SimParams = SimParams()):
        self.scene = scene
        self.path = np.asarray(path, dtype=np.float64).reshape(-1, 2)
        if len(self.path) == 0:
            raise ValueError("oracle needs a nonempty path")
        self.cum = polyline_lengths(self.path)
        self.params = params
        self._fields: dict[int, GeodesicField] = {}
        self.progress = 0.0

    def field(self, k: int) -> GeodesicField:
        f = self._fields.get(k)
        if f is None:
            f = self._fields[k] = geodesic_field(self.scene, self.path[k])
        return f

    def target_index(self, xy) -> int:
        s, _, _ = project_onto_polyline(xy, self.path, self.progress - self.params.backtrack)
        self.progress = max(self.progress, s)
        ahead = np.flatnonzero(self.cum > s + self.params.lookahead)
        return int(ahead[0]) if len(ahead) else len(self.path) - 1

    def action(self, state: SimState) -> Action:
        p = np.array([state.pose.x, state.pose.y])
        if np.linalg.norm(p - self.path[-1]) <= self.params.stop_radius:
            return Action.STOP
        f = self.field(self.target_index(p))
        if not math.isfinite(f.at(p)):
            raise PlanningError(f"target unreachable from ({p[0]:.2f}, {p[1]:.2f})")
        n = self.params.turns_per_rev
        th = state.pose.theta + np.arange(n) * (2 * math.pi / n)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        q = _translate_many(self.scene, p, dirs, self.params.forward, self.params.contact_margin)
        scores = f.at_many(q)
        if scores[0] <= scores.min() + 1e-9:
            return Action.FORWARD
        k = int(np.argmin(scores))
        # k turns to the left reach the best heading; go the shorter way, left on a tie
        return Action.TURN_LEFT if k <= n // 2 else Action.TURN_RIGHT


def oracle_action(state: SimState, path, oracle: Oracle | None = None) -> Action:
    return (oracle or Oracle(state.scene, path)).action(state)


def trace_record(state: SimState, action: Action) -> dict:
    return {"step": state.step, "x": state.pose.x, "y": state.pose.y, "theta": state.pose.theta,
            "action": Action(action).name, "collision": bool(state.collided)}


def write_trace(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def rollout_oracle(scene: Scene, episode, params: SimParams = SimParams()) -> tuple[SimState, list[dict]]:
    """Drive the teacher until STOP or the step budget; returns the final state and a per-step trace."""
    state = reset(scene, episode.start)
    oracle = Oracle(scene, episode.path, params)
    trace = []
    while not state.done:
        a = oracle.action(state)
        state = step(state, a, params)
        trace.append(trace_record(state, a))
    return state, trace
