"""Flat dotted-key run configuration.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment.  Values are parsed by the type of the key's default, and keys not
listed in :data:`DEFAULTS` are rejected.  The fully resolved config is
echoed into every output directory and checkpoint.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..mapping import MapSpec
from ..navigator import PolicyConfig
from ..sim import SimParams
from ..training import TrainConfig
from ..world import EpisodeParams, WorldParams


class ConfigError(ValueError):
    pass


# key -> (default, description)
DEFAULTS: dict[str, tuple[object, str]] = {
    "seed": (0, "master seed for training order, DAgger coins and sensor noise"),
    "world.first_scene": (0, "seed of the first training scene"),
    "world.scenes": (3, "number of training scenes"),
    "world.episodes_per_scene": (17, "episodes sampled per training scene"),
    "world.rooms": (3, "rooms per generated scene"),
    "world.objects": (12, "objects per generated scene"),
    "world.ambiguity": (0.33, "fraction of objects with a same-category partner nearby"),
    "eval.first_scene": (1000, "seed of the first evaluation scene"),
    "eval.scenes": (5, "number of evaluation scenes"),
    "eval.episodes_per_scene": (10, "episodes sampled per evaluation scene"),
    "eval.ambiguity": (0.33, "ambiguity fraction of the evaluation scenes"),
    "eval.split": ("heldout", "episodes to evaluate: heldout (eval.* scenes) or train (world.* scenes)"),
    "eval.success_distance": (3.0, "geodesic success radius in metres"),
    "eval.diagnostics": (True, "record localization IoU and waypoint hits"),
    "sim.budget": (500, "step budget per episode"),
    "sim.noise": (0.02, "depth noise standard deviation in metres"),
    "map.m": (100, "egocentric map side in cells"),
    "map.cell": (0.12, "map cell size in metres"),
    "map.c": (32, "channels of the fused map"),
    "policy.embed": (32, "token embedding size"),
    "policy.lstm": (32, "hidden size of each instruction LSTM direction"),
    "policy.gru1": (128, "state encoder hidden size"),
    "policy.gru2": (128, "fused state hidden size"),
    "policy.loc_dim": (32, "projection size of the localization logits"),
    "policy.cosine": (False, "length-normalize the localization logits"),
    "policy.centroid": (True, "feed the localization centroid to the fused state"),
    "policy.map_type": ("multi", "map fed to the policy: multi, fine or semantic"),
    "policy.bn_mode": ("batch", "batch-norm statistics: batch or running"),
    "loss.alpha": (10.0, "weight of the localization loss"),
    "loss.beta": (10.0, "weight of the progress loss"),
    "loss.gamma": (10.0, "weight of the waypoint loss"),
    "supervision.gt_mode": ("soft", "coarse localization target: soft or hard"),
    "supervision.hard_threshold": (0.72, "distance band of the hard target in metres"),
    "supervision.waypoint_radius": (3.0, "waypoint circle radius in metres"),
    "train.lr": (2.5e-4, "Adam learning rate"),
    "train.lambda_p": (0.8, "progress threshold for STOP"),
    "train.teacher_epochs": (4, "teacher-forcing epochs"),
    "train.dagger_iters": (4, "DAgger iterations"),
    "train.trajectories": (200, "rollouts collected per DAgger iteration"),
    "train.epochs_per_iter": (4, "epochs over all shards after each DAgger iteration"),
    "train.bptt": (12, "head evaluations per truncated backpropagation window"),
    "train.clip": (5.0, "global gradient-norm clip"),
    "train.replan_every": (3, "steps between head evaluations"),
}


def _parse(key: str, raw: str):
    default = DEFAULTS[key][0]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v for k, (v, _) in DEFAULTS.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, value) if isinstance(value, str) else value

    def apply(self, assignments) -> "RunConfig":
        """Apply ``key=value`` strings (the ``--set`` flag)."""
        for a in assignments:
            if "=" not in a:
                raise ConfigError(f"expected key=value, got {a!r}")
            k, v = a.split("=", 1)
            self.set(k.strip(), v)
        return self

    @classmethod
    def from_text(cls, text: str, where: str = "config") -> "RunConfig":
        rc = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{where}: line {lineno}: expected key = value")
            k, v = line.split("=", 1)
            try:
                rc.set(k.strip(), v)
            except ConfigError as exc:
                raise ConfigError(f"{where}: line {lineno}: {exc}") from None
        return rc

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(), str(path))

    def to_dict(self) -> dict:
        return dict(sorted(self.values.items()))

    def to_text(self) -> str:
        return "".join(f"{k} = {json.dumps(v) if isinstance(v, bool) else v}\n" for k, v in self.to_dict().items())

    # builders

    def map_spec(self) -> MapSpec:
        return MapSpec(m=self["map.m"], cell=self["map.cell"], c=self["map.c"])

    def policy_config(self, vocab_size: int) -> PolicyConfig:
        return PolicyConfig(vocab_size=vocab_size, spec=self.map_spec(), n_rays=SimParams().n_rays,
                            embed=self["policy.embed"], lstm=self["policy.lstm"], gru1=self["policy.gru1"],
                            gru2=self["policy.gru2"], loc_dim=self["policy.loc_dim"], cosine=self["policy.cosine"],
                            centroid=self["policy.centroid"], map_type=self["policy.map_type"],
                            bn_mode=self["policy.bn_mode"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self["train.lr"], alpha=self["loss.alpha"], beta=self["loss.beta"],
                           gamma=self["loss.gamma"], lambda_p=self["train.lambda_p"],
                           teacher_epochs=self["train.teacher_epochs"], dagger_iters=self["train.dagger_iters"],
                           trajectories=self["train.trajectories"], epochs_per_iter=self["train.epochs_per_iter"],
                           bptt=self["train.bptt"], clip=self["train.clip"], replan_every=self["train.replan_every"],
                           gt_mode=self["supervision.gt_mode"], hard_threshold=self["supervision.hard_threshold"],
                           waypoint_radius=self["supervision.waypoint_radius"], seed=self["seed"])

    def sim_params(self) -> SimParams:
        return SimParams(budget=self["sim.budget"], noise=self["sim.noise"])

    def world_params(self, split: str = "train") -> WorldParams:
        amb = self["world.ambiguity"] if split == "train" else self["eval.ambiguity"]
        return WorldParams(rooms=self["world.rooms"], objects=self["world.objects"], ambiguity=amb)

    def episode_params(self) -> EpisodeParams:
        return EpisodeParams(success_distance=self["eval.success_distance"])


def describe_defaults() -> str:
    return "".join(f"{k} = {v}    # {doc}\n" for k, (v, doc) in DEFAULTS.items())
