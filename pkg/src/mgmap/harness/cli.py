"""Command-line entry point.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ..mapping import read_grid
from ..supervision import TrainingError
from ..tensor import NumericError
from ..tensor import checkpoint as ckpt
from ..world import DataFormatError, GenerationError, generate_scene, sample_episodes, write_episodes, write_scene
from ..world import read_scene
from .config import ConfigError, RunConfig, describe_defaults
from .runs import build_split, load_split, policy_from_checkpoint, run_eval, train_pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageExit(f"{self.prog}: {message}")


def _config(args) -> RunConfig:
    rc = RunConfig.load(args.config) if args.config else RunConfig()
    rc.apply(args.set or [])
    if args.seed is not None:
        rc.set("seed", args.seed)
    return rc


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data(args, rc: RunConfig, split: str):
    if getattr(args, "data", None):
        return load_split(args.data)
    return build_split(rc, split)


def cmd_gen_world(args, rc):
    out = _out(args, "world")
    prefix = "world" if args.split == "train" else "eval"
    for k in range(rc[f"{prefix}.scenes"]):
        scene = generate_scene(rc[f"{prefix}.first_scene"] + k, rc.world_params(args.split))
        write_scene(out / f"{scene.id}.json", scene)
        print(out / f"{scene.id}.json")
    return EXIT_OK


def cmd_gen_episodes(args, rc):
    out = _out(args, "world")
    src = Path(args.scenes or out)
    paths = sorted(src.glob("scene_*.json"))
    if not paths:
        raise DataFormatError(f"no scene_*.json files in {src}")
    prefix = "world" if args.split == "train" else "eval"
    episodes = []
    for p in paths:
        scene = read_scene(p)
        seed = int(scene.id.rsplit("_", 1)[-1]) if scene.id.rsplit("_", 1)[-1].isdigit() else 0
        episodes += sample_episodes(scene, rc[f"{prefix}.episodes_per_scene"], seed=seed, params=rc.episode_params())
    write_episodes(out / "episodes.jsonl", episodes)
    print(f"{len(episodes)} episodes -> {out / 'episodes.jsonl'}")
    return EXIT_OK


def cmd_train(args, rc):
    scenes, episodes = _data(args, rc, "train")
    out = _out(args, "run")
    train_pipeline(rc, scenes, episodes, out, dagger=False)
    print(out / "checkpoint.mgt")
    return EXIT_OK


def cmd_dagger(args, rc):
    scenes, episodes = _data(args, rc, "train")
    out = _out(args, "run")
    policy, stored = policy_from_checkpoint(args.checkpoint, scenes)
    for k, v in stored.to_dict().items():
        if k.startswith(("policy.", "map.")):
            rc.set(k, v)
    train_pipeline(rc, scenes, episodes, out, policy=policy, teacher=False)
    print(out / "checkpoint.mgt")
    return EXIT_OK


def cmd_eval(args, rc):
    scenes, episodes = _data(args, rc, "train" if rc["eval.split"] == "train" else "eval")
    policy = None
    if not args.oracle:
        if not args.checkpoint:
            raise UsageExit("eval needs --checkpoint or --oracle")
        policy, _ = policy_from_checkpoint(args.checkpoint, scenes)
    out = _out(args, "eval")
    report, _ = run_eval(rc, policy, scenes, episodes, out)
    print(json.dumps(report["metrics"], sort_keys=True))
    return EXIT_OK


def _write_pgm(path: Path, grid: np.ndarray) -> None:
    lo, hi = float(grid.min()), float(grid.max())
    img = np.zeros(grid.shape, dtype=np.uint8) if hi <= lo else ((grid - lo) / (hi - lo) * 255).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5 {grid.shape[1]} {grid.shape[0]} 255\n".encode())
        fh.write(img.tobytes())


def cmd_inspect(args, rc):
    src = Path(args.path)
    head = src.read_bytes()[:4]
    out = _out(args, "inspect")
    if head == b"MGG1":
        try:
            grid = read_grid(src)
        except ValueError as exc:
            raise DataFormatError(str(exc)) from None
        for c in range(grid.shape[0]):
            stem = out / f"{src.stem}_c{c}"
            if args.format == "pgm":
                _write_pgm(stem.with_suffix(".pgm"), grid[c])
            else:
                np.savetxt(stem.with_suffix(".csv"), grid[c], delimiter=",", fmt="%.6g")
        print(f"{src}: {grid.shape[0]} channel(s) of {grid.shape[1]}x{grid.shape[2]} -> {out}")
    elif head == b"MGT1":
        tensors, config = ckpt.load(src, allow_mismatch=True)
        with open(out / f"{src.stem}_tensors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "shape", "mean", "std"])
            for name in sorted(tensors):
                t = tensors[name]
                w.writerow([name, "x".join(map(str, t.shape)), f"{t.mean():.6g}", f"{t.std():.6g}"])
        print(json.dumps(config, indent=1, sort_keys=True))
    elif src.suffix == ".jsonl":
        rows = [json.loads(line) for line in src.read_text().splitlines() if line.strip()]
        if not rows:
            raise DataFormatError(f"{src}: empty trace")
        keys = sorted({k for r in rows for k in r})
        with open(out / f"{src.stem}.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(rows)
        print(f"{len(rows)} rows -> {out / (src.stem + '.csv')}")
    else:
        raise DataFormatError(f"{src}: not an MGG1 grid, MGT1 checkpoint or JSONL trace")
    return EXIT_OK


def cmd_gradcheck(args, rc):
    from .gradsuite import full_suite
    results = full_suite(n_cases=args.cases, seed=rc["seed"])
    worst: dict[str, float] = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_err)
    for name, err in sorted(worst.items()):
        print(f"{'PASS' if err < args.tol else 'FAIL'} {name} max_rel_err={err:.2e}")
    return EXIT_OK if max(worst.values()) < args.tol else EXIT_NUMERIC


def cmd_defaults(args, rc):
    sys.stdout.write(describe_defaults())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="overrides the seed key")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--out", help="output directory")

    p = _Parser(prog="mgmap", description="Multi-granularity map navigation testbed")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("gen-world", parents=[common], help="generate scenes")
    s.add_argument("--split", choices=("train", "heldout"), default="train")
    s.set_defaults(fn=cmd_gen_world)
    s = sub.add_parser("gen-episodes", parents=[common], help="sample episodes for generated scenes")
    s.add_argument("--scenes", help="directory holding scene_*.json (default: --out)")
    s.add_argument("--split", choices=("train", "heldout"), default="train")
    s.set_defaults(fn=cmd_gen_episodes)
    s = sub.add_parser("train", parents=[common], help="teacher-forcing training")
    s.add_argument("--data", help="directory from gen-world/gen-episodes (default: generate from config)")
    s.set_defaults(fn=cmd_train)
    s = sub.add_parser("dagger", parents=[common], help="DAgger fine-tuning from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data")
    s.set_defaults(fn=cmd_dagger)
    s = sub.add_parser("eval", parents=[common], help="closed-loop evaluation")
    s.add_argument("--checkpoint")
    s.add_argument("--oracle", action="store_true", help="evaluate the oracle controller instead")
    s.add_argument("--data")
    s.set_defaults(fn=cmd_eval)
    s = sub.add_parser("inspect", parents=[common], help="export grids, checkpoints or traces as CSV/PGM")
    s.add_argument("path")
    s.add_argument("--format", choices=("csv", "pgm"), default="csv")
    s.set_defaults(fn=cmd_inspect)
    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--cases", type=int, default=20)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(fn=cmd_gradcheck)
    s = sub.add_parser("defaults", parents=[common], help="print every config key with its default")
    s.set_defaults(fn=cmd_defaults)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        rc = _config(args)
        return args.fn(args, rc)
    except (UsageExit, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ckpt.CheckpointError, GenerationError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
