import json
import math

import numpy as np
import pytest

from mgmap.geometry import Pose
from mgmap.sim import (Action, Oracle, SimParams, UsageError, observe, ray_angles, reset, rollout_oracle, step,
                       write_trace)
from mgmap.world import generate_scene, sample_episodes

from conftest import box_scene, disc

ODD = SimParams(n_rays=65)  # odd count puts one ray exactly on the heading


def test_forward_in_empty_space():
    s = step(reset(box_scene(), Pose(5.0, 5.0, 0.0)), Action.FORWARD)
    assert (s.pose.x, s.pose.y, s.pose.theta) == (5.25, 5.0, 0.0)
    assert s.collisions == 0 and s.traveled == 0.25


def test_full_turn_restores_heading_exactly():
    s = reset(box_scene(), Pose(5.0, 5.0, 0.3))
    for _ in range(24):
        s = step(s, Action.TURN_LEFT)
    assert s.pose.theta == 0.3
    for _ in range(24):
        s = step(s, Action.TURN_RIGHT)
    assert s.pose.theta == 0.3


def test_forward_into_close_wall_truncates_and_counts():
    scene = box_scene(walls=[(5.1, 0.0, 5.1, 10.0)])
    s = step(reset(scene, Pose(5.0, 5.0, 0.0)), Action.FORWARD)
    assert s.pose.x - 5.0 < 0.10
    assert s.collisions == 1 and s.collided


def test_oblique_contact_slides_along_wall():
    scene = box_scene(walls=[(5.1, 0.0, 5.1, 10.0)])
    s = step(reset(scene, Pose(5.0, 5.0, math.radians(45))), Action.FORWARD)
    assert s.pose.x < 5.1 and s.pose.y > 5.0 + 0.1
    assert s.collisions == 1


def test_action_after_done_is_usage_error():
    s = step(reset(box_scene(), Pose(5.0, 5.0, 0.0)), Action.STOP)
    assert s.done and s.stopped
    with pytest.raises(UsageError):
        step(s, Action.FORWARD)


def test_budget_ends_episode():
    s = reset(box_scene(), Pose(5.0, 5.0, 0.0))
    params = SimParams(budget=5)
    for _ in range(5):
        s = step(s, Action.TURN_LEFT, params)
    assert s.done and not s.stopped and s.step == 5


def test_rays_span_fov_left_to_right():
    a = ray_angles()
    assert len(a) == 64
    assert a[0] == pytest.approx(math.radians(45)) and a[-1] == pytest.approx(-math.radians(45))
    assert np.all(np.diff(a) < 0)


def test_center_ray_perpendicular_wall():
    scene = box_scene(walls=[(7.0, 0.0, 7.0, 10.0)])
    obs = observe(reset(scene, Pose(5.0, 5.0, 0.0)), ODD)
    assert abs(obs.D[32] - 2.0) <= 1e-6
    assert obs.cat_gt[32] == 0
    np.testing.assert_array_equal(obs.R_feat[32], scene.wall_feature)


def test_center_ray_hits_disc():
    scene = box_scene(objects=[disc(8.0, 5.0, 0.5, cat=3)])
    obs = observe(reset(scene, Pose(5.0, 5.0, 0.0)), ODD)
    assert abs(obs.D[32] - 2.5) <= 1e-9
    assert obs.cat_gt[32] == 3


def test_void_rays_clamp_to_max_range():
    scene = box_scene(size=40.0)
    obs = observe(reset(scene, Pose(20.0, 20.0, 0.0)), SimParams(max_range=6.0))
    assert np.all(obs.D == 6.0)
    assert np.all(obs.R_feat == 0.0) and np.all(obs.cat_gt == -1) and not obs.hit.any()


def test_observation_depth_in_range(scene0, episodes0):
    obs = observe(reset(scene0, episodes0[0].start))
    assert np.all(obs.D > 0) and np.all(obs.D <= 6.0)


def test_observe_deterministic_given_noise_seed(scene0, episodes0):
    s = reset(scene0, episodes0[0].start)
    a, b = observe(s, rng=5), observe(s, rng=5)
    np.testing.assert_array_equal(a.R_feat, b.R_feat)
    c = observe(s, rng=6)
    assert not np.array_equal(a.R_feat, c.R_feat)
    clean = observe(s)
    assert (a.R_feat - clean.R_feat).std() == pytest.approx(0.02, rel=0.15)


def test_fuzz_random_actions_never_enter_obstacles():
    rng = np.random.default_rng(0)
    n = 0
    for seed in range(4):
        scene = generate_scene(seed)
        ep = sample_episodes(scene, 1, seed)[0]
        s = reset(scene, ep.start)
        params = SimParams(budget=10 ** 6)
        for _ in range(2500):
            a = Action(int(rng.choice([1, 1, 1, 2, 3])))
            s = step(s, a, params)
            n += 1
            assert not scene.in_obstacle(s.pose.xy[None])[0]
            for o in scene.objects:
                assert not o.contains(s.pose.xy[None])[0]
    assert n >= 10_000


def test_oracle_stops_on_goal_and_moves_toward_aligned_target():
    scene = box_scene()
    path = [(2.0, 5.0), (4.0, 5.0)]
    oracle = Oracle(scene, path)
    assert oracle.action(reset(scene, Pose(4.0, 5.0, 1.0))) == Action.STOP
    oracle = Oracle(scene, path)
    assert oracle.action(reset(scene, Pose(2.0, 5.0, 0.0))) == Action.FORWARD


def test_oracle_turns_toward_target_behind():
    scene = box_scene()
    oracle = Oracle(scene, [(5.0, 5.0), (5.0, 8.0)])
    assert oracle.action(reset(scene, Pose(5.0, 5.0, 0.0))) == Action.TURN_LEFT
    oracle = Oracle(scene, [(5.0, 5.0), (5.0, 2.0)])
    assert oracle.action(reset(scene, Pose(5.0, 5.0, 0.0))) == Action.TURN_RIGHT


def test_oracle_rollouts_reach_goal(scene0, episodes0, tmp_path):
    for ep in episodes0:
        state, trace = rollout_oracle(scene0, ep)
        assert state.stopped
        assert np.linalg.norm(state.pose.xy - np.asarray(ep.goal)) <= 0.25 + 1e-9
        assert trace[-1]["action"] == "STOP"
    write_trace(tmp_path / "t.jsonl", trace)
    rec = json.loads((tmp_path / "t.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"step", "x", "y", "theta", "action", "collision"}
