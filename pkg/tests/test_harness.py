import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgmap.harness import (ConfigError, RunConfig, aggregate, evaluate_episode, evaluate_policy, localization_iou,
                           run_eval, spl, top_mask, waypoint_hit_rate)
from mgmap.harness.metrics import EpisodeResult
from mgmap.mapping import MapSpec, ego_offsets
from mgmap.navigator import Policy
from mgmap.sim import SimParams
from mgmap.supervision import coarse_localization_gt
from mgmap.geometry import Pose
from mgmap.world import geodesic_field

from conftest import box_scene
from test_training import small_policy


def test_spl_examples():
    assert spl(True, 10.0, 12.0) == pytest.approx(10 / 12)
    assert spl(True, 10.0, 10.0) == 1.0
    assert spl(False, 10.0, 10.0) == 0.0


@pytest.fixture(scope="module")
def room():
    scene = box_scene(size=10.0)
    return scene, geodesic_field(scene, (9.0, 5.0))


def test_stop_on_goal_scores_one(room):
    scene, field = room
    d = field.at((1.0, 5.0))
    r = evaluate_episode([(1.0, 5.0), (5.0, 5.0), (9.0, 5.0)], True, d, 3, field, d)
    assert r.success and r.oracle_success and r.spl == pytest.approx(1.0) and r.navigation_error < 0.1


def test_pass_near_goal_without_stop(room):
    scene, field = room
    r = evaluate_episode([(1.0, 5.0), (8.0, 5.0), (2.0, 5.0)], False, 13.0, 3, field, 8.0)
    assert not r.success and r.oracle_success and r.spl == 0.0


def test_stop_outside_radius_fails(room):
    _, field = room
    r = evaluate_episode([(1.0, 5.0), (5.0, 5.0)], True, 4.0, 2, field, 8.0)
    assert not r.success and r.navigation_error == pytest.approx(4.0, abs=0.1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.5, 9.5), st.floats(0.5, 9.5)), min_size=1, max_size=8), st.booleans())
def test_metric_orderings(room, pts, stopped):
    _, field = room
    pts = [(1.0, 5.0)] + pts
    tl = float(np.sum(np.linalg.norm(np.diff(np.array(pts), axis=0), axis=1)))
    d = field.at((1.0, 5.0))
    r = evaluate_episode(pts, stopped, tl, len(pts) - 1, field, d)
    assert r.spl <= float(r.success) and r.oracle_success >= r.success
    assert r.trajectory_length >= 0 and r.navigation_error >= 0


def test_iou_examples():
    rng = np.random.default_rng(0)
    P = rng.random((10, 10))
    assert localization_iou(P, P) == 1.0
    a = np.zeros((10, 10))
    a.ravel()[:10] = 1.0
    b = np.zeros((10, 10))
    b.ravel()[-10:] = 1.0
    assert localization_iou(a, b) == 0.0
    c = np.zeros((10, 10))
    c.ravel()[5:15] = 1.0
    assert localization_iou(a, c) == pytest.approx(1 / 3)


def test_top_mask_ties_in_raster_order():
    m = top_mask(np.ones((4, 5)), 0.1)
    assert m.sum() == 2 and m.ravel()[:2].all()


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3.1, 3.1), st.integers(0, 1000))
def test_iou_of_generated_targets(x, y, th, seed):
    spec = MapSpec(m=20, cell=0.3)
    P = coarse_localization_gt([(0, 0), (2, 1), (4, -1)], Pose(x, y, th), spec).P
    Q = np.random.default_rng(seed).random(P.shape)
    assert localization_iou(P, P) == 1.0
    assert localization_iou(P, Q) == localization_iou(Q, P)


def test_waypoint_hit_rate_examples():
    spec = MapSpec(m=10, cell=0.5)
    offs = ego_offsets(spec.m, spec.cell)
    P = np.zeros((10, 10))
    P[2] = 1.0  # the top 10% mask is exactly row 2
    on_path = [offs[2, j] for j in range(10)]
    assert waypoint_hit_rate(on_path, [P] * 10, spec) == 100.0
    off_map = [np.array([50.0, 0.0]), np.array([0.0, -40.0])]
    assert waypoint_hit_rate(off_map, [P] * 2, spec) == 0.0


def test_aggregate_is_plain_mean():
    rs = [EpisodeResult("b", True, True, 10.0, 1.0, 0.5, 10, [1.0], [True]),
          EpisodeResult("a", False, True, 20.0, 5.0, 0.0, 20, [0.0, 0.5], [False])]
    agg = aggregate(rs)
    assert agg["SR"] == 0.5 and agg["SPL"] == 0.25 and agg["TL"] == 15.0 and agg["NE"] == 3.0
    assert agg["IoU"] == pytest.approx(0.5) and agg["waypoint_hit_rate"] == 50.0


def test_oracle_evaluation_succeeds(scene0, episodes0):
    res = evaluate_policy(None, {scene0.id: scene0}, episodes0)
    assert all(r.success for r in res)
    assert aggregate(res)["SR"] == 1.0


def test_zero_policy_never_succeeds(scene0, episodes0):
    pol = small_policy()
    pol.load_arrays({k: np.zeros_like(v) for k, v in pol.arrays().items()})
    res = evaluate_policy(pol, {scene0.id: scene0}, episodes0[:3], SimParams(budget=60))
    assert aggregate(res)["SR"] == 0.0


def test_missing_scene_is_listed_before_running(scene0, episodes0):
    with pytest.raises(KeyError, match=scene0.id):
        evaluate_policy(None, {}, episodes0)


def test_config_parsing_and_rejection(tmp_path):
    rc = RunConfig.from_text("seed = 4\n# comment\nsupervision.gt_mode = hard  # ablation\npolicy.cosine = true\n")
    assert rc["seed"] == 4 and rc["supervision.gt_mode"] == "hard" and rc["policy.cosine"] is True
    assert rc.train_config().gt_mode == "hard"
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_text("model.depth = 3\n")
    with pytest.raises(ConfigError, match="line 1"):
        RunConfig.from_text("seed = four\n")
    rc.apply(["train.lr=0.001", "loss.alpha=0"])
    assert rc.train_config().lr == 0.001 and rc.train_config().alpha == 0.0
    back = RunConfig.from_text(rc.to_text())
    assert back.to_dict() == rc.to_dict()


def test_run_eval_writes_deterministic_reports(tmp_path, scene0, episodes0):
    rc = RunConfig().apply(["sim.budget=40", "map.m=16", "map.cell=0.5", "map.c=8"])
    pol = small_policy()
    for k in (1, 2):
        run_eval(rc, pol, {scene0.id: scene0}, episodes0[:2], tmp_path / f"e{k}")
    a, b = (tmp_path / "e1"), (tmp_path / "e2")
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "episodes.jsonl").read_bytes() == (b / "episodes.jsonl").read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["config"]["sim.budget"] == 40 and report["metrics"]["episodes"] == 2
    assert len((a / "episodes.jsonl").read_text().splitlines()) == 2
