"""Closed-loop evaluation of a policy (or the oracle) over an episode set."""
from __future__ import annotations

import numpy as np

from ..mapping import MapSpec
from ..navigator import Policy
from ..sim import Oracle, SimParams, observe, reset, step
from ..supervision import coarse_localization_gt
from ..training import PolicyLearner
from ..world import Episode, Scene, geodesic_field
from .metrics import EpisodeResult, evaluate_episode, localization_iou, waypoint_hits


class OracleLearner:
    def begin(self, scene: Scene, episode: Episode) -> None:
        self.oracle = Oracle(scene, episode.path)

    def act(self, state, obs):
        return self.oracle.action(state)


def run_episode(scene: Scene, episode: Episode, learner, sim: SimParams = SimParams(),
                rng: np.random.Generator | None = None, success_distance: float = 3.0,
                spec: MapSpec | None = None, gt_mode: str = "soft", hard_threshold: float = 0.72) -> EpisodeResult:
    """Let ``learner`` drive one episode until STOP or the budget; localization diagnostics if it records."""
    state = reset(scene, episode.start)
    learner.begin(scene, episode)
    positions = [state.pose.xy]
    while not state.done:
        obs = observe(state, sim, rng)
        if hasattr(learner, "observe"):
            learner.observe(state.pose, obs)
        state = step(state, learner.act(state, obs), sim)
        positions.append(state.pose.xy)
    field_goal = geodesic_field(scene, episode.goal)
    shortest = field_goal.at(episode.start.xy)
    res = evaluate_episode(positions, state.stopped, state.traveled, state.step, field_goal, shortest,
                           episode.episode_id, success_distance)
    history = getattr(learner, "history", None)
    if history:
        spec = spec or getattr(learner, "spec", None) or MapSpec()
        grids = [coarse_localization_gt(episode.path_array, h["pose"], spec, gt_mode, hard_threshold).P
                 for h in history]
        res.iou = [localization_iou(h["P_hat"], P) for h, P in zip(history, grids)]
        res.waypoint_hits = waypoint_hits([h["w_hat"] for h in history], grids, spec)
        res.semantic_correct = sum(h["semantic"][0] for h in history)
        res.semantic_total = sum(h["semantic"][1] for h in history)
    return res


def evaluate_policy(policy: Policy | None, scenes: dict[str, Scene], episodes: list[Episode],
                    sim: SimParams = SimParams(), seed: int = 0, lambda_p: float = 0.8, replan_every: int = 3,
                    diagnostics: bool = True, gt_mode: str = "soft", hard_threshold: float = 0.72,
                    success_distance: float = 3.0) -> list[EpisodeResult]:
    """Evaluate ``policy`` (the oracle if None) on every episode, in the given order, with one noise stream."""
    missing = sorted({ep.scene_id for ep in episodes} - set(scenes))
    if missing:
        raise KeyError(f"missing scenes: {', '.join(missing)}")
    rng = np.random.default_rng(seed)
    if policy is None:
        learner = OracleLearner()
        spec = None
    else:
        learner = PolicyLearner(policy, lambda_p=lambda_p, replan_every=replan_every, record=diagnostics)
        spec = policy.cfg.spec
    return [run_episode(scenes[ep.scene_id], ep, learner, sim, rng, success_distance, spec, gt_mode, hard_threshold)
            for ep in episodes]
