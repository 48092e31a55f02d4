"""Evaluation metrics, run configuration, experiment runs and the command line."""
from .config import DEFAULTS, ConfigError, RunConfig
from .evaluation import OracleLearner, evaluate_policy, run_episode
from .metrics import (EpisodeResult, aggregate, evaluate_episode, localization_iou, spl, top_mask, waypoint_hit_rate,
                      waypoint_hits)
from .runs import build_split, load_split, policy_from_checkpoint, run_eval, train_pipeline

__all__ = [
    "ConfigError", "DEFAULTS", "EpisodeResult", "OracleLearner", "RunConfig", "aggregate", "build_split",
    "evaluate_episode", "evaluate_policy", "load_split", "localization_iou", "policy_from_checkpoint", "run_episode",
    "run_eval", "spl", "top_mask", "train_pipeline", "waypoint_hit_rate", "waypoint_hits",
]
