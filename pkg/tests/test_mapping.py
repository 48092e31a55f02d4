import math

import numpy as np
import pytest

from mgmap.geometry import Pose
from mgmap.mapping import (AllocentricBuffer, MapNet, MapSpec, encode_multigranularity, hallucinate_semantics,
                           init_mapping_params, project_observation, read_grid, render_egocentric,
                           semantic_accuracy, semantic_loss, write_grid)
from mgmap.sim import Action, Observation, observe, reset, step
from mgmap.tensor import DimensionError, Tensor, precision
from mgmap.tensor.gradcheck import check_gradients

from conftest import box_scene

SPEC = MapSpec()


def one_ray(depth, feat, cat=2, angle=0.0):
    f = np.asarray(feat, dtype=np.float64)[None]
    return Observation(f, np.array([depth]), np.array([cat]), np.array([angle]), np.array([True]))


def small_buffer():
    return AllocentricBuffer(np.array([-3.0, -3.0]), 0.12, (50, 50), 8)


def test_single_ray_writes_exactly_one_cell():
    buf = small_buffer()
    n = project_observation(buf, Pose(0.0, 0.0, 0.0), one_ray(1.0, np.linspace(0.1, 0.8, 8)))
    assert n == 1
    written = np.argwhere(buf.count > 0)
    expect = np.floor((np.array([1.0, 0.0]) + 3.0) / 0.12).astype(int)
    np.testing.assert_array_equal(written, [expect])
    assert buf.gt[tuple(expect)] == 2
    # cells before the hit are free, the hit cell itself is not
    assert buf.free[tuple(np.floor((np.array([0.5, 0.0]) + 3.0) / 0.12).astype(int))]


def test_repeated_observation_keeps_elementwise_max():
    buf = small_buffer()
    f1 = np.array([0.1, 0.9, 0.2, 0.0, 0.5, 0.3, 0.3, 0.3])
    f2 = np.array([0.4, 0.1, 0.2, 0.7, 0.0, 0.3, 0.2, 0.9])
    project_observation(buf, Pose(0.0, 0.0, 0.0), one_ray(1.0, f1, cat=1))
    project_observation(buf, Pose(0.0, 0.0, 0.0), one_ray(1.0, f2, cat=4))
    cell = tuple(np.argwhere(buf.count > 0)[0])
    np.testing.assert_allclose(buf.feat[cell], np.maximum(f1, f2).astype(np.float32))
    assert buf.gt[cell] == 4 and buf.count[cell] == 2


def test_out_of_bounds_hits_are_dropped_and_counted():
    buf = small_buffer()
    n = project_observation(buf, Pose(0.0, 0.0, 0.0), one_ray(4.0, np.ones(8)))
    assert n == 0 and buf.dropped == 1 and buf.count.sum() == 0


def test_spin_in_square_room_traces_walls():
    scene = box_scene(size=4.0)
    buf = AllocentricBuffer.for_bounds(scene.bounds)
    s = reset(scene, Pose(2.0, 2.0, 0.0))
    for _ in range(24):
        project_observation(buf, s.pose, observe(s))
        s = step(s, Action.TURN_LEFT)
    cells = np.argwhere(buf.count > 0)
    centers = buf.origin + (cells + 0.5) * buf.cell
    d = np.min(np.stack([centers[:, 0], 4.0 - centers[:, 0], centers[:, 1], 4.0 - centers[:, 1]]), axis=0)
    assert np.all(np.abs(d) <= buf.cell)
    # every boundary cell along each wall is written
    n_side = int(round(4.0 / buf.cell))
    assert len(cells) >= 4 * n_side - 4


def test_projection_conserves_hits(scene0, episodes0):
    buf = AllocentricBuffer.for_bounds(scene0.bounds)
    s = reset(scene0, episodes0[1].start)
    for a in [1, 1, 2, 1, 3, 3, 1, 1]:
        obs = observe(s, rng=0)
        before = buf.dropped
        n = project_observation(buf, s.pose, obs)
        assert n == len(obs.D) - (buf.dropped - before) - int((~obs.hit).sum())
        s = step(s, Action(a))


def test_coverage_is_monotone(scene0, episodes0):
    buf = AllocentricBuffer.for_bounds(scene0.bounds)
    s = reset(scene0, episodes0[2].start)
    prev = buf.observed.copy()
    for a in [1, 2, 2, 1, 1, 3, 1, 1, 1, 2]:
        project_observation(buf, s.pose, observe(s, rng=1))
        cur = buf.observed
        assert np.all(cur[prev])
        assert np.all(buf.feat[buf.count == 0] == 0)
        prev = cur.copy()
        s = step(s, Action(a))


def test_axis_aligned_render_is_translated_subgrid():
    rng = np.random.default_rng(0)
    buf = AllocentricBuffer(np.array([0.0, 0.0]), 0.12, (160, 160), 8)
    buf.feat[:] = rng.random(buf.feat.shape).astype(np.float32)
    ax, ay = 80, 70
    pose = Pose((ax + 0.5) * 0.12, (ay + 0.5) * 0.12, 0.0)
    m_f, _, _ = render_egocentric(buf, pose, SPEC)
    c = SPEC.center
    i, j = np.meshgrid(np.arange(SPEC.m), np.arange(SPEC.m), indexing="ij")
    expect = buf.feat[ax + c - i, ay + c - j].transpose(2, 0, 1)
    np.testing.assert_array_equal(m_f, expect)


def test_render_after_full_spin_is_bit_identical(scene0, episodes0):
    buf = AllocentricBuffer.for_bounds(scene0.bounds)
    s = reset(scene0, episodes0[0].start)
    project_observation(buf, s.pose, observe(s, rng=0))
    before = render_egocentric(buf, s.pose, SPEC)
    again = render_egocentric(buf, s.pose, SPEC)
    for _ in range(24):
        s = step(s, Action.TURN_LEFT)
    after = render_egocentric(buf, s.pose, SPEC)
    for a, b, c in zip(before, again, after):
        assert a.tobytes() == b.tobytes() == c.tobytes()


def test_quarter_turn_frame_convention():
    buf = AllocentricBuffer(np.array([0.0, 0.0]), 0.12, (100, 100), 8)
    p = np.array([6.06, 6.06])
    k = buf.cell_of(p + np.array([1.0, 0.0]))
    buf.feat[k[0], k[1]] = 1.0
    buf.count[k[0], k[1]] = 1
    up = render_egocentric(buf, Pose(*p, 0.0), SPEC)[0]
    side = render_egocentric(buf, Pose(*p, math.pi / 2), SPEC)[0]
    c, d = SPEC.center, int(math.floor(1.0 / SPEC.cell + 0.5))
    assert np.argwhere(up[0] > 0).tolist() == [[c - d, c]]
    assert np.argwhere(side[0] > 0).tolist() == [[c, c + d]]  # +x is to the right when facing +y


@pytest.mark.parametrize("theta", [0.0, 0.7, -2.1, math.pi])
def test_agent_cell_is_map_center(theta):
    buf = AllocentricBuffer(np.array([0.0, 0.0]), 0.12, (100, 100), 8)
    p = np.array([5.31, 4.77])
    k = buf.cell_of(p)
    buf.feat[k[0], k[1]] = 0.75
    m_f = render_egocentric(buf, Pose(*p, theta), SPEC)[0]
    assert np.all(m_f[:, SPEC.center, SPEC.center] == 0.75)
    assert np.count_nonzero(m_f[0]) == 1


def test_render_outside_buffer_is_zero_and_unknown():
    buf = AllocentricBuffer(np.array([0.0, 0.0]), 0.12, (10, 10), 8)
    buf.feat[:] = 1.0
    buf.gt[:] = 3
    m_f, gt, obs = render_egocentric(buf, Pose(0.6, 0.6, 0.0), SPEC)
    assert m_f[0].sum() == 100 and (gt == 3).sum() == 100
    assert m_f[:, 0, 0].sum() == 0 and gt[0, 0] == -1


def _net(spec, zero=False, seed=0):
    params, buffers = init_mapping_params(np.random.default_rng(seed), spec, zero)
    return params, buffers


def test_hallucination_is_distribution_and_zero_net_uniform():
    params, buffers = _net(SPEC)
    m_f = Tensor(np.random.default_rng(1).random((8, 100, 100)))
    out = hallucinate_semantics(m_f, params, buffers, SPEC)
    assert out.shape == (8, 100, 100)
    np.testing.assert_allclose(out.data.sum(axis=0), 1.0, atol=1e-5)
    params, buffers = _net(SPEC, zero=True)
    out = hallucinate_semantics(m_f, params, buffers, SPEC)
    np.testing.assert_allclose(out.data, 1.0 / 8, atol=1e-7)


def test_hallucination_shape_mismatch():
    params, buffers = _net(SPEC)
    with pytest.raises(DimensionError):
        hallucinate_semantics(Tensor(np.zeros((8, 50, 50))), params, buffers, SPEC)


def test_semantic_loss_values():
    gt = np.array([[0, 1], [-1, 2]])
    perfect = np.zeros((3, 2, 2))
    perfect[0, 0, 0] = perfect[1, 0, 1] = perfect[2, 1, 1] = 1.0
    perfect[0, 1, 0] = 1.0
    assert float(semantic_loss(Tensor(perfect), gt)[0].data) <= 1e-6
    uniform = Tensor(np.full((8, 2, 2), 1.0 / 8))
    assert abs(float(semantic_loss(uniform, np.array([[0, 7], [3, -1]]))[0].data) - math.log(8)) < 1e-6
    loss, empty = semantic_loss(uniform, np.full((2, 2), -1))
    assert empty and float(loss.data) == 0.0


def test_semantic_loss_matches_scalar_recomputation():
    rng = np.random.default_rng(4)
    logits = rng.standard_normal((5, 6, 7))
    probs = np.exp(logits) / np.exp(logits).sum(axis=0)
    gt = rng.integers(-1, 5, size=(6, 7))
    with precision(np.float64):
        got = float(semantic_loss(Tensor(probs), gt)[0].data)
    terms = [-math.log(probs[gt[i, j], i, j]) for i in range(6) for j in range(7) if gt[i, j] >= 0]
    assert abs(got - sum(terms) / len(terms)) < 1e-5


def test_semantic_accuracy_counts_known_cells():
    pred = np.zeros((3, 2, 2))
    pred[1] = 1.0
    assert semantic_accuracy(pred, np.array([[1, 1], [0, -1]])) == (2, 3)


def test_encoder_shape_and_zero_input():
    params, _ = _net(SPEC)
    M = encode_multigranularity(Tensor(np.zeros((8, 100, 100))), Tensor(np.zeros((8, 100, 100))), params, SPEC)
    assert M.shape == (32, 100, 100)
    assert np.all(M.data == 0.0)


def test_encoder_gradients_reach_both_branches():
    spec = MapSpec(m=6, c_f=3, c_s=3, c=4)
    with precision(np.float64):
        params, _ = _net(spec, seed=2)
        rng = np.random.default_rng(0)
        m_f, m_s = Tensor(rng.random((3, 6, 6))), Tensor(rng.random((3, 6, 6)))
        branch = {k: params[k] for k in ("policy/map/enc/fine/w", "policy/map/enc/sem/w")}
        err = check_gradients(lambda: encode_multigranularity(m_f, m_s, params, spec), branch, rng)
        assert err < 1e-5
        for v in branch.values():
            assert np.abs(v.grad).sum() > 0


def test_map_type_switch_zeroes_a_branch():
    params, buffers = _net(SPEC)
    m_f = Tensor(np.random.default_rng(3).random((8, 100, 100)))
    m_s = Tensor(np.zeros((8, 100, 100)))
    fine = MapNet(params, buffers, SPEC, map_type="fine").encode(m_f, m_s)
    sem = MapNet(params, buffers, SPEC, map_type="semantic").encode(m_f, m_s)
    assert not np.allclose(fine.data, sem.data)
    # with the fine branch off and no semantic input the map is constant per channel
    assert np.allclose(sem.data, sem.data[:, :1, :1])


def test_grid_dump_round_trip(tmp_path):
    g = np.random.default_rng(0).random((3, 5, 4)).astype(np.float32)
    write_grid(tmp_path / "g.mgg", g)
    raw = (tmp_path / "g.mgg").read_bytes()
    assert raw[:4] == b"MGG1"
    np.testing.assert_array_equal(read_grid(tmp_path / "g.mgg"), g)
    write_grid(tmp_path / "p.mgg", g[0])
    assert read_grid(tmp_path / "p.mgg").shape == (1, 5, 4)
