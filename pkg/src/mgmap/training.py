"""Teacher forcing, DAgger collection and the training loop.

Rollouts keep only poses, observations and action labels.  Maps and the
supervision targets are rebuilt when an episode is replayed for training,
so a rollout costs a few kilobytes per step.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol

import numpy as np

from .geometry import Pose
from .mapping import (AllocentricBuffer, MapSpec, project_observation, render_egocentric, semantic_accuracy,
                      semantic_loss)
from .navigator import AgentState, LocalController, Policy, act, advance
from .sim import Action, Observation, Oracle, PlanningError, SimParams, observe, reset, step
from .supervision import (TrainingError, coarse_localization_gt, localization_loss, progress_gt, regression_losses,
                          total_loss, waypoint_gt)
from .tensor import Adam, Tensor, clip_grad_norm, no_grad
from .tensor import checkpoint as ckpt
from .world import Episode, Scene, geodesic_field


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2.5e-4
    alpha: float = 10.0
    beta: float = 10.0
    gamma: float = 10.0
    lambda_p: float = 0.8
    teacher_epochs: int = 4
    dagger_iters: int = 4
    trajectories: int = 200
    epochs_per_iter: int = 4
    batch_size: int = 1
    bptt: int = 12
    clip: float = 5.0
    replan_every: int = 3
    gt_mode: str = "soft"
    hard_threshold: float = 0.72
    waypoint_radius: float = 3.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "teacher_epochs", "trajectories", "batch_size", "bptt", "replan_every",
                     "waypoint_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"train config: {name} must be positive")
        for name in ("alpha", "beta", "gamma", "clip", "dagger_iters", "epochs_per_iter"):
            if getattr(self, name) < 0:
                raise ValueError(f"train config: {name} must be non-negative")
        if self.gt_mode not in ("soft", "hard"):
            raise ValueError(f"train config: gt_mode must be soft or hard, got {self.gt_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepRecord:
    pose: Pose  # before the action
    obs: Observation
    oracle_action: int
    executed_action: int
    by_oracle: bool
    waypoint: np.ndarray | None = None  # agent-frame target, head steps only
    progress: float | None = None


@dataclass
class Rollout:
    episode: Episode
    steps: list[StepRecord] = field(default_factory=list)
    terminal: str = "stop"  # stop | budget | stall

    @property
    def oracle_fraction(self) -> float:
        return float(np.mean([s.by_oracle for s in self.steps])) if self.steps else 0.0


def dagger_probability(n: int) -> float:
    """Probability that the oracle acts at DAgger iteration ``n`` (``n = 0`` is teacher forcing)."""
    if n < 0:
        raise ValueError("dagger iteration must be >= 0")
    return 0.5 ** n


class Learner(Protocol):
    def begin(self, scene: Scene, episode: Episode) -> None: ...

    def act(self, state, obs: Observation) -> Action: ...


class PolicyLearner:
    """Runs the policy without gradients: head evaluation every ``replan_every`` steps, controller between."""

    def __init__(self, policy: Policy, spec: MapSpec | None = None, lambda_p: float = 0.8, replan_every: int = 3,
                 record: bool = False):
        self.policy = policy
        self.spec = spec or policy.cfg.spec
        self.lambda_p = lambda_p
        self.replan_every = replan_every
        self.record = record
        self.head_calls = 0
        self.history: list[dict] = []

    def begin(self, scene: Scene, episode: Episode) -> None:
        self.scene = scene
        self.buf = AllocentricBuffer.for_bounds(scene.bounds, self.spec.cell, self.spec.c_f)
        self.agent: AgentState = self.policy.initial_state()
        self.controller = LocalController(scene)
        with no_grad():
            self.instr = self.policy.encode_instruction(episode.instruction_tokens)
        self.head_calls = 0
        self.history = []

    def observe(self, pose: Pose, obs: Observation) -> None:
        project_observation(self.buf, pose, obs)

    def act(self, state, obs: Observation) -> Action:
        pose = state.pose
        w = p = None
        if self.agent.steps_since_replan == 0:
            m_f, gt, _ = render_egocentric(self.buf, pose, self.spec)
            with no_grad():
                out = self.policy.head_step(m_f, obs.R_feat, obs.D, self.instr, Tensor(self.agent.h),
                                            Tensor(self.agent.h2))
            self.agent.h, self.agent.h2 = out.h.data, out.h2.data
            w, p = out.w_hat.data.astype(np.float64), float(out.p_hat.data[0])
            self.head_calls += 1
            if self.record:
                self.history.append({"step": state.step, "w_hat": w, "p_hat": p, "P_hat": out.P_hat.data,
                                     "M_s": out.M_s.data, "pose": pose,
                                     "semantic": semantic_accuracy(out.M_s.data, gt)})
        a, self.agent = act(self.agent, pose, self.controller, w, p, self.lambda_p)
        self.agent = advance(self.agent, self.replan_every)
        return a


class RandomLearner:
    """Uniform random actions; used to exercise the DAgger mixing without a network."""

    def __init__(self, seed: int = 0, stop_prob: float = 0.0):
        self.rng = np.random.default_rng(seed)
        self.stop_prob = stop_prob

    def begin(self, scene, episode) -> None:
        pass

    def act(self, state, obs) -> Action:
        if self.rng.random() < self.stop_prob:
            return Action.STOP
        return Action(int(self.rng.integers(1, 4)))


def _targets(episode: Episode, oracle: Oracle, pose: Pose, cfg: TrainConfig, field_goal, g0, last):
    w = waypoint_gt(pose, episode.path_array, cfg.waypoint_radius, oracle.progress - oracle.params.backtrack)
    p, _ = progress_gt((pose.x, pose.y), field_goal, g0, last)
    return w, p


def collect_rollout(scene: Scene, episode: Episode, oracle_prob: float, rng: np.random.Generator,
                    learner: Learner | None = None, cfg: TrainConfig = TrainConfig(),
                    sim: SimParams = SimParams()) -> Rollout:
    """Run one episode mixing oracle and learner actions.

    Each step draws one coin: with probability ``oracle_prob`` the oracle's
    action is executed, otherwise the learner's.  The stored label is always
    the oracle's.  The learner is queried at every step (so its recurrent
    state and waypoint stay current) unless ``oracle_prob`` is 1.
    """
    if learner is None and oracle_prob < 1.0:
        raise ValueError("a learner is required when the oracle does not always act")
    state = reset(scene, episode.start)
    oracle = Oracle(scene, episode.path, sim)
    field_goal = geodesic_field(scene, episode.goal)
    g0 = field_goal.at(episode.start.xy)
    out = Rollout(episode)
    if learner is not None:
        learner.begin(scene, episode)
    last = 0.0
    while not state.done:
        obs = observe(state, sim, rng)
        if learner is not None and hasattr(learner, "observe"):
            learner.observe(state.pose, obs)
        try:
            a_or = oracle.action(state)
        except PlanningError:
            out.terminal = "stall"
            return out
        use_oracle = bool(rng.random() < oracle_prob)
        a_learn = learner.act(state, obs) if (learner is not None and oracle_prob < 1.0) else a_or
        a = a_or if use_oracle else a_learn
        rec = StepRecord(state.pose, obs, int(a_or), int(a), use_oracle)
        if state.step % cfg.replan_every == 0:
            rec.waypoint, rec.progress = _targets(episode, oracle, state.pose, cfg, field_goal, g0, last)
            last = rec.progress
        out.steps.append(rec)
        state = step(state, a, sim)
    out.terminal = "stop" if state.stopped else "budget"
    return out


@dataclass
class StepLoss:
    l_s: float
    l_o: float
    l_p: float
    l_w: float
    L: float


class Trainer:
    """Owns the policy, optimizer, metrics log and shard list."""

    def __init__(self, policy: Policy, scenes: dict[str, Scene], cfg: TrainConfig = TrainConfig(),
                 sim: SimParams = SimParams(), log: Callable[[dict], None] | None = None):
        self.policy = policy
        self.scenes = scenes
        self.cfg = cfg
        self.sim = sim
        self.opt = Adam(policy.params, lr=cfg.lr)
        self.log = log or (lambda rec: None)
        self.shards: list[list[Rollout]] = []
        self.iteration = 0
        self.epoch = 0
        self.global_step = 0
        self.rng = np.random.default_rng(cfg.seed)

    # replay

    def _window_update(self, losses: list[Tensor]) -> None:
        if not losses:
            return
        total = losses[0]
        for l in losses[1:]:
            total = total + l
        total = total * (1.0 / len(losses))
        self.opt.zero_grad()
        total.backward()
        clip_grad_norm(self.policy.params, self.cfg.clip)
        self.opt.step()

    def train_rollout(self, rollout: Rollout) -> list[StepLoss]:
        """Replay one rollout: rebuild maps, evaluate heads at the recorded cadence, truncated BPTT."""
        cfg, pol = self.cfg, self.policy
        spec = pol.cfg.spec
        ep = rollout.episode
        scene = self.scenes[ep.scene_id]
        buf = AllocentricBuffer.for_bounds(scene.bounds, spec.cell, spec.c_f)
        h = Tensor(np.zeros(pol.cfg.gru1))
        h2 = Tensor(np.zeros(pol.cfg.gru2))
        instr = pol.encode_instruction(ep.instruction_tokens)
        window: list[Tensor] = []
        logged: list[StepLoss] = []
        path = ep.path_array
        for k, rec in enumerate(rollout.steps):
            project_observation(buf, rec.pose, rec.obs)
            if rec.waypoint is None:
                continue
            m_f, gt, _ = render_egocentric(buf, rec.pose, spec)
            out = pol.head_step(m_f, rec.obs.R_feat, rec.obs.D, instr, h, h2)
            h, h2 = out.h, out.h2
            cg = coarse_localization_gt(path, rec.pose, spec, cfg.gt_mode, cfg.hard_threshold)
            l_s, _ = semantic_loss(out.M_s, gt)
            l_o = localization_loss(out.P_hat, cg.P)
            l_w, l_p = regression_losses(out.w_hat, rec.waypoint, out.p_hat, rec.progress)
            try:
                L = total_loss(l_s, l_o, l_p, l_w, cfg.alpha, cfg.beta, cfg.gamma)
            except TrainingError as e:
                raise TrainingError(f"{e} (iter {self.iteration}, epoch {self.epoch}, episode {ep.episode_id}, "
                                    f"step {k})") from None
            sl = StepLoss(float(l_s.data), float(l_o.data), float(l_p.data), float(l_w.data), float(L.data))
            logged.append(sl)
            self.log({"iter": self.iteration, "epoch": self.epoch, "step": self.global_step,
                      "episode": ep.episode_id, "l_s": sl.l_s, "l_o": sl.l_o, "l_w": sl.l_w, "l_p": sl.l_p,
                      "L": sl.L})
            self.global_step += 1
            window.append(L)
            if len(window) == cfg.bptt:
                self._window_update(window)
                window = []
                h, h2 = h.detach(), h2.detach()
                instr = pol.encode_instruction(ep.instruction_tokens)
        self._window_update(window)
        return logged

    def train_epoch(self, rollouts: list[Rollout]) -> float:
        order = self.rng.permutation(len(rollouts))
        losses = []
        for i in order:
            losses.extend(s.L for s in self.train_rollout(rollouts[i]))
        self.epoch += 1
        return float(np.mean(losses)) if losses else math.nan

    # collection

    def collect(self, episodes: list[Episode], n: int) -> list[Rollout]:
        prob = dagger_probability(n)
        learner = None if prob >= 1.0 else PolicyLearner(self.policy, lambda_p=self.cfg.lambda_p,
                                                         replan_every=self.cfg.replan_every)
        return [collect_rollout(self.scenes[ep.scene_id], ep, prob, self.rng, learner, self.cfg, self.sim)
                for ep in episodes]

    def train_teacher_forcing(self, episodes: list[Episode], epochs: int | None = None) -> list[float]:
        if not episodes:
            raise ValueError("teacher forcing needs a nonempty dataset")
        shard = self.collect(episodes, 0)
        self.shards = [shard]
        return [self.train_epoch(shard) for _ in range(epochs or self.cfg.teacher_epochs)]

    def dagger_iteration(self, episodes: list[Episode], n: int, epochs: int | None = None) -> list[Rollout]:
        """Collect a shard with oracle probability 0.5^n, then train on the union of all shards."""
        if n < 1:
            raise ValueError("dagger iteration index starts at 1")
        self.iteration = n
        shard = self.collect(episodes, n)
        if all(r.terminal == "budget" for r in shard):
            self.log({"iter": n, "event": "collection stall: every episode exhausted its budget"})
        self.shards.append(shard)
        union = [r for s in self.shards for r in s]
        for _ in range(self.cfg.epochs_per_iter if epochs is None else epochs):
            self.train_epoch(union)
        return shard


def save_checkpoint(policy: Policy, config: dict, path) -> None:
    ckpt.save(path, policy.arrays(), config)


def load_checkpoint(policy: Policy, path, expected_config: dict | None = None, allow_mismatch: bool = False) -> dict:
    arrays, config = ckpt.load(path, expected_config, allow_mismatch)
    policy.load_arrays(arrays)
    return config


class JsonlLog:
    def __init__(self, path):
        self.fh = open(path, "w")

    def __call__(self, rec: dict) -> None:
        self.fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def close(self) -> None:
        self.fh.close()
