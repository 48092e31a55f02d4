"""End-to-end runs driven by a :class:`RunConfig`: data, training, evaluation, reports."""
from __future__ import annotations

import json
from pathlib import Path

from ..navigator import Policy
from ..training import JsonlLog, Trainer, load_checkpoint, save_checkpoint
from ..world import Episode, Scene, Vocab, generate_scene, read_episodes, read_scene, sample_episodes
from .config import RunConfig
from .evaluation import evaluate_policy
from .metrics import EpisodeResult, aggregate


def build_split(rc: RunConfig, split: str = "train") -> tuple[dict[str, Scene], list[Episode]]:
    """Generated scenes and episodes for the training split or the held-out evaluation split."""
    prefix = "world" if split == "train" else "eval"
    wp = rc.world_params(split)
    scenes, episodes = {}, []
    for k in range(rc[f"{prefix}.scenes"]):
        seed = rc[f"{prefix}.first_scene"] + k
        scene = generate_scene(seed, wp)
        scenes[scene.id] = scene
        episodes += sample_episodes(scene, rc[f"{prefix}.episodes_per_scene"], seed=seed, params=rc.episode_params())
    return scenes, episodes


def load_split(data_dir) -> tuple[dict[str, Scene], list[Episode]]:
    """Scenes (``scene_*.json``) and ``episodes.jsonl`` written by the gen-world / gen-episodes commands."""
    d = Path(data_dir)
    scenes = {s.id: s for s in (read_scene(p) for p in sorted(d.glob("scene_*.json")))}
    episodes = read_episodes(d / "episodes.jsonl")
    return scenes, episodes


def vocab_size(scenes: dict[str, Scene]) -> int:
    n = max((s.n_categories for s in scenes.values()), default=8)
    return len(Vocab.build(n))


def new_policy(rc: RunConfig, scenes: dict[str, Scene]) -> Policy:
    return Policy(rc.policy_config(vocab_size(scenes)), seed=rc["seed"])


def dagger_episodes(episodes: list[Episode], n: int, k: int) -> list[Episode]:
    """``k`` episodes for DAgger iteration ``n``: the training set cycled from a per-iteration offset."""
    m = len(episodes)
    return [episodes[(n * 7919 + i) % m] for i in range(k)]


def train_pipeline(rc: RunConfig, scenes: dict[str, Scene], episodes: list[Episode], out_dir=None,
                   policy: Policy | None = None, teacher: bool = True, dagger: bool = True,
                   log=None) -> Policy:
    """Teacher forcing, then ``train.dagger_iters`` DAgger iterations; checkpoints into ``out_dir`` if given."""
    out = Path(out_dir) if out_dir is not None else None
    jl = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(rc.to_dict(), indent=1, sort_keys=True) + "\n")
        jl = JsonlLog(out / "metrics.jsonl")
    sink = log
    if jl is not None:
        sink = jl if log is None else (lambda r: (jl(r), log(r)))
    policy = policy or new_policy(rc, scenes)
    cfg = rc.train_config()
    trainer = Trainer(policy, scenes, cfg, rc.sim_params(), sink)
    try:
        if teacher:
            trainer.train_teacher_forcing(episodes)
        else:
            trainer.shards = [trainer.collect(episodes, 0)]
        if out is not None:
            save_checkpoint(policy, rc.to_dict(), out / "checkpoint_tf.mgt")
        if dagger:
            for n in range(1, cfg.dagger_iters + 1):
                trainer.dagger_iteration(dagger_episodes(episodes, n, cfg.trajectories), n)
                if out is not None:
                    save_checkpoint(policy, rc.to_dict(), out / f"checkpoint_dagger{n}.mgt")
        if out is not None:
            save_checkpoint(policy, rc.to_dict(), out / "checkpoint.mgt")
    finally:
        if jl is not None:
            jl.close()
    return policy


def policy_from_checkpoint(path, scenes: dict[str, Scene]) -> tuple[Policy, RunConfig]:
    """Rebuild the policy architecture from the config stored in the checkpoint, then load the tensors."""
    from ..tensor import checkpoint as ckpt
    _, stored = ckpt.load(path)
    rc = RunConfig()
    for k, v in (stored or {}).items():
        rc.set(k, v)
    policy = new_policy(rc, scenes)
    load_checkpoint(policy, path, rc.to_dict())
    return policy, rc


def run_eval(rc: RunConfig, policy: Policy | None, scenes: dict[str, Scene], episodes: list[Episode],
             out_dir=None) -> tuple[dict, list[EpisodeResult]]:
    """Evaluate and (optionally) write ``episodes.jsonl`` plus ``report.json``; oracle if ``policy`` is None."""
    results = evaluate_policy(policy, scenes, episodes, rc.sim_params(), seed=rc["seed"],
                              lambda_p=rc["train.lambda_p"], replan_every=rc["train.replan_every"],
                              diagnostics=rc["eval.diagnostics"], gt_mode=rc["supervision.gt_mode"],
                              hard_threshold=rc["supervision.hard_threshold"],
                              success_distance=rc["eval.success_distance"])
    report = {"config": rc.to_dict(), "policy": "oracle" if policy is None else "checkpoint",
              "metrics": aggregate(results)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "episodes.jsonl", "w") as fh:
            for r in sorted(results, key=lambda r: r.episode_id):
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
        (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return report, results
