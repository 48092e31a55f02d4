import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgmap.tensor import (Adam, AdamState, DimensionError, NumericError, Tensor, adam_step, batch_norm, clip_grad_norm,
                          conv2d, gru_cell, kl_divergence, no_grad, precision, scaled_dot_attention, softmax, sum_)
from mgmap.tensor import checkpoint as ckpt
from mgmap.tensor.gradcheck import OP_CASES, run_op

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_central_differences(name):
    results = run_op(name, n_cases=20)
    assert len(results) == 20
    worst = max(r.max_rel_err for r in results)
    assert worst < 1e-5, f"{name}: {worst}"


def test_softmax_large_logits_do_not_overflow():
    out = softmax(Tensor(np.array([1000.0, 0.0])), axis=0)
    np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=1, max_size=12), finite)
def test_softmax_normalized_and_shift_invariant(xs, c):
    with precision(np.float64):
        a = softmax(Tensor(np.array(xs)), axis=0).data
        b = softmax(Tensor(np.array(xs) + c), axis=0).data
    assert abs(a.sum() - 1.0) < 1e-6
    np.testing.assert_allclose(a, b, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2 ** 31 - 1))
def test_kl_nonnegative_and_zero_on_self(n, seed):
    rng = np.random.default_rng(seed)
    p = rng.random(n)
    p[rng.random(n) < 0.3] = 0.0
    if p.sum() == 0:
        p[0] = 1.0
    p /= p.sum()
    q = rng.random(n) + 1e-3
    q /= q.sum()
    with precision(np.float64):
        assert float(kl_divergence(p, Tensor(p)).data) == 0.0
        assert float(kl_divergence(p, Tensor(q)).data) >= -1e-7


def test_kl_one_hot_against_uniform_is_ln2():
    assert abs(float(kl_divergence(np.array([1.0, 0.0]), Tensor(np.array([0.5, 0.5]))).data) - math.log(2)) < 1e-6


def test_shared_input_gradients_accumulate():
    x = Tensor(np.array(3.0), requires_grad=True)
    (x + x).backward()
    assert float(x.grad) == 2.0


def test_conv_identity_and_sum_kernels():
    x = Tensor(np.arange(9.0).reshape(1, 3, 3))
    ident = conv2d(x, Tensor(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(ident.data, x.data)
    total = conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
    np.testing.assert_array_equal(total.data, [[[9.0]]])


def test_conv_kernel_larger_than_input_rejected():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


def _gru(d, h, bias=0.0):
    return {"w_ih": Tensor(np.zeros((3 * h, d))), "w_hh": Tensor(np.zeros((3 * h, h))),
            "b_ih": Tensor(np.full(3 * h, bias)), "b_hh": Tensor(np.zeros(3 * h))}


def test_gru_zero_network_keeps_zero_state():
    out = gru_cell(Tensor(np.ones(4)), Tensor(np.zeros(3)), _gru(4, 3))
    np.testing.assert_array_equal(out.data, np.zeros(3))


def test_gru_closed_update_gate_carries_state():
    p = _gru(2, 3)
    b = np.zeros(9)
    b[3:6] = -50.0  # update gate closes (z -> 0), so h' = h
    p["b_ih"] = Tensor(b)
    h = np.array([0.3, -0.2, 0.9])
    out = gru_cell(Tensor(np.ones(2)), Tensor(h), p)
    np.testing.assert_allclose(out.data, h, atol=1e-6)


def test_gru_shape_mismatch():
    with pytest.raises(DimensionError):
        gru_cell(Tensor(np.ones(5)), Tensor(np.zeros(3)), _gru(4, 3))


def test_attention_single_key_and_equal_logits():
    v = np.array([[1.0, 2.0, 3.0]])
    out = scaled_dot_attention(Tensor(np.array([5.0, -1.0])), Tensor(np.array([[0.3, 0.1]])), Tensor(v))
    np.testing.assert_allclose(out.data, v[0], atol=1e-6)
    keys = np.array([[0.0, 1.0], [0.0, -2.0], [0.0, 3.0]])
    vals = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    out = scaled_dot_attention(Tensor(np.array([1.0, 0.0])), Tensor(keys), Tensor(vals))
    np.testing.assert_allclose(out.data, vals.mean(axis=0), atol=1e-6)


def test_attention_dimension_mismatch():
    with pytest.raises(DimensionError):
        scaled_dot_attention(Tensor(np.ones(3)), Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))


def test_no_scalar_free_broadcasting():
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones(3))
    out = Tensor(np.ones((2, 3))) * 2.0
    np.testing.assert_array_equal(out.data, np.full((2, 3), 2.0))


def test_non_finite_results_raise():
    with pytest.raises(NumericError):
        Tensor(np.array([1.0])) / Tensor(np.array([0.0]))


def test_precision_mode_and_default_dtype():
    assert Tensor(1.0).data.dtype == np.float32
    with precision(np.float64):
        assert Tensor(1.0).data.dtype == np.float64
    assert Tensor(1.0).data.dtype == np.float32


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = sum_(x * 2.0)
    assert not y.requires_grad and y.parents == ()


def test_batch_norm_modes():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(3.0, 2.0, size=(2, 5, 5)))
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    rm, rv = np.zeros(2), np.ones(2)
    y = batch_norm(x, gamma, beta, rm, rv, training=True)
    np.testing.assert_allclose(y.data.reshape(2, -1).mean(axis=1), 0.0, atol=1e-5)
    assert np.all(rm != 0)  # running stats moved
    y_eval = batch_norm(x, gamma, beta, np.zeros(2), np.ones(2), training=False)
    np.testing.assert_allclose(y_eval.data, x.data, atol=1e-3)


def test_adam_zero_gradient_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = {"w": Tensor(np.array(0.5), requires_grad=True)}
    adam_step(p, {"w": np.array(1.0)}, AdamState(lr=0.1))
    assert abs(float(p["w"].data) - 0.4) < 1e-6


def test_adam_minimizes_quadratic():
    x = Tensor(np.array(1.0), requires_grad=True)
    opt = Adam({"x": x}, lr=0.05)
    for _ in range(100):
        opt.zero_grad()
        (x * x).backward()
        opt.step()
    assert abs(float(x.data)) < 0.1


def test_clip_grad_norm_scales_to_bound():
    a = Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([3.0, 4.0])
    norm = clip_grad_norm({"a": a}, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.linalg.norm(a.grad) == pytest.approx(1.0)


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {"b/x": rng.standard_normal((2, 3)).astype(np.float32), "a": np.float32(rng.standard_normal(4))}
    path = tmp_path / "c.mgt"
    ckpt.save(path, tensors, {"seed": 3})
    back, cfg = ckpt.load(path, {"seed": 3})
    assert cfg == {"seed": 3}
    for k, v in tensors.items():
        assert back[k].tobytes() == np.asarray(v, dtype=np.float32).tobytes()


def test_checkpoint_layout_is_lexicographic_little_endian():
    buf = ckpt.encode({"z": np.ones(1, np.float32), "a": np.array([[2.0]], np.float32)})
    assert buf[:4] == b"MGT1"
    assert struct.unpack("<I", buf[4:8])[0] == 2
    n = struct.unpack("<I", buf[8:12])[0]
    assert buf[12:12 + n] == b"a"
    assert buf[13] == 2  # rank
    assert struct.unpack("<2I", buf[14:22]) == (1, 1)
    assert struct.unpack("<f", buf[22:26])[0] == 2.0


def test_checkpoint_truncated_and_corrupted(tmp_path):
    buf = ckpt.encode({"w": np.ones((3, 3), np.float32)}, {"k": 1})
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.decode(buf[:30])
    path = tmp_path / "bad.mgt"
    bad = bytearray(buf)
    bad[-40] ^= 0xFF  # inside the JSON blob
    path.write_bytes(bytes(bad))
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(path)


def test_checkpoint_config_mismatch_refused_unless_overridden(tmp_path):
    path = tmp_path / "c.mgt"
    ckpt.save(path, {"w": np.ones(2, np.float32)}, {"lr": 1})
    with pytest.raises(ckpt.CheckpointError, match="mismatch"):
        ckpt.load(path, {"lr": 2})
    tensors, cfg = ckpt.load(path, {"lr": 2}, allow_mismatch=True)
    assert cfg == {"lr": 1}
