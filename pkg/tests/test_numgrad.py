import math

import numpy as np
import pytest

from transae_asd import numgrad as ng
from transae_asd.numgrad import ops

from op_cases import OP_CASES, op_gradient_error


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- forward values


def test_softmax_uniform():
    out = ng.softmax(ng.Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.values, [1 / 3] * 3, atol=1e-15)


def test_relu_values():
    assert ng.relu(ng.Tensor([-2.5, 3.0])).values.tolist() == [0.0, 3.0]


def test_cross_entropy_hand_value():
    loss = ng.cross_entropy_loss(ng.Tensor([[0.7, 0.2, 0.1]]), [[1.0, 0.0, 0.0]])
    assert loss.item() == pytest.approx(-math.log(0.7), abs=1e-12)
    assert loss.item() == pytest.approx(0.35667, abs=1e-5)


def test_softmax_rows_sum_to_one(rng):
    s = ng.softmax(ng.Tensor(rng.normal(scale=20, size=(7, 5))))
    np.testing.assert_allclose(s.values.sum(-1), 1.0, atol=1e-9)


def test_layer_norm_rows_standardised(rng):
    x = ng.Tensor(rng.normal(3.0, 5.0, size=(6, 16)))
    out = ng.layer_norm(x, ng.Tensor(np.ones(16)), ng.Tensor(np.zeros(16)))
    np.testing.assert_allclose(out.values.mean(-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.values.var(-1), 1.0, atol=1e-6)


def test_batch_norm_running_stats(rng):
    st = ng.BatchNormState(3)
    x = rng.normal(2.0, 3.0, size=(50, 3))
    g, b = ng.Tensor(np.ones(3)), ng.Tensor(np.zeros(3))
    ng.batch_norm(ng.Tensor(x), g, b, st, training=True)
    np.testing.assert_allclose(st.running_mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(st.running_var, 0.9 + 0.1 * x.var(0))
    before = st.running_mean.copy()
    y = ng.batch_norm(ng.Tensor(x), g, b, st, training=False)
    np.testing.assert_array_equal(st.running_mean, before)
    np.testing.assert_allclose(y.values, (x - st.running_mean) / np.sqrt(st.running_var + 1e-5))


def test_shape_mismatch_message():
    with pytest.raises(ng.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ng.matmul(ng.Tensor(np.ones((2, 3))), ng.Tensor(np.ones((4, 5))))
    with pytest.raises(ng.ShapeError, match="mse_loss"):
        ng.mse_loss(ng.Tensor(np.ones((2, 3))), np.ones((2, 4)))


def test_non_finite_is_engine_fault():
    with pytest.raises(ng.EngineFault), np.errstate(over="ignore"):
        ng.scale(ng.Tensor([1e308]), 10.0)


# ---------------------------------------------------------------- backward


def test_quadratic_gradient(rng):
    p = ng.parameter(rng.normal(size=(3, 4)))
    with ng.Tape() as tape:
        loss = ng.mse_loss(p, np.zeros((3, 4)), per_sample="sum")
        loss = ng.scale(loss, 3.0)  # undo the mean over 3 rows
    tape.backward(loss)
    np.testing.assert_allclose(p.grad, 2 * p.values)


def test_matmul_sum_gradient_2x2():
    w = ng.parameter([[1.0, 2.0], [3.0, 4.0]])
    x = ng.Tensor([[5.0], [7.0]])
    with ng.Tape() as tape:
        loss = ng.total(ng.matmul(w, x))
    tape.backward(loss)
    # d sum(Wx) / dW_ij = x_j
    np.testing.assert_array_equal(w.grad, [[5.0, 7.0], [5.0, 7.0]])


def test_unreachable_param_gets_zero_grad():
    a, b = ng.parameter([1.0, 2.0]), ng.parameter([3.0])
    with ng.Tape() as tape:
        loss = ng.total(ng.scale(a, 2.0))
    tape.backward(loss)
    np.testing.assert_array_equal(b.grad, [0.0])


def test_backward_twice_raises():
    a = ng.parameter([1.0])
    with ng.Tape() as tape:
        loss = ng.total(a)
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)
    tape.reset()
    with tape:
        loss = ng.total(a)
    tape.backward(loss)


def test_backward_requires_scalar():
    a = ng.parameter([1.0, 2.0])
    with ng.Tape() as tape:
        out = ng.scale(a, 2.0)
    with pytest.raises(ng.ShapeError):
        tape.backward(out)


def test_no_tape_no_recording():
    a = ng.parameter([1.0])
    out = ng.scale(a, 2.0)
    assert not out.requires_grad


def test_max_pool_routes_to_lowest_index_on_ties():
    a = ng.parameter([[1.0, 5.0, 5.0, 2.0]])
    with ng.Tape() as tape:
        loss = ng.total(ng.max_pool(a, axis=-1))
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, [[0.0, 1.0, 0.0, 0.0]])


# per-op central-difference checks on small random tensors


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradient_matches_central_differences(name):
    err = op_gradient_error(name)
    assert err < 1e-5, f"{name}: max relative error {err:.2e}"


def test_finite_diff_linear_layer(rng):
    w = ng.parameter(rng.normal(size=(5, 3)))
    b = ng.parameter(rng.normal(size=3))
    x = rng.normal(size=(8, 5))
    y = rng.normal(size=(8, 3))
    err = ng.finite_diff_check(lambda: ng.mse_loss(ng.linear(ng.Tensor(x), w, b), y), [w, b], probe_count=18)
    assert err < 1e-4


def test_finite_diff_constant_coordinate():
    a = ng.parameter([1.0, 2.0])
    # loss ignores a[1]
    sel = np.array([[1.0], [0.0]])
    err = ng.finite_diff_check(lambda: ng.total(ng.matmul(ng.reshape(a, (1, 2)), ng.Tensor(sel))), [a], probe_count=2)
    assert err == 0.0
    assert a.grad[1] == 0.0


# ---------------------------------------------------------------- Adam


def test_adam_zero_gradient_keeps_params():
    p = ng.parameter([1.0, -2.0])
    st = ng.AdamState(lr=1e-3)
    ng.adam_step({"p": p}, {"p": np.zeros(2)}, st)
    np.testing.assert_array_equal(p.values, [1.0, -2.0])
    assert st.t == 1


def test_adam_first_step_is_lr_times_sign():
    p = ng.parameter([0.0, 0.0, 0.0])
    st = ng.AdamState(lr=1e-4)
    g = np.array([3.0, -0.02, 500.0])
    ng.adam_step({"p": p}, {"p": g}, st)
    # m_hat = g, v_hat = g^2 at t = 1
    np.testing.assert_allclose(p.values, -1e-4 * g / (np.abs(g) + 1e-8))
    np.testing.assert_allclose(p.values, -1e-4 * np.sign(g), rtol=1e-6)


def test_adam_constant_gradient_step_size():
    # reference recurrence iterated by hand
    lr, b1, b2, eps, g = 1e-4, 0.9, 0.999, 1e-8, 0.37
    m = v = 0.0
    x_ref = 0.0
    p = ng.parameter([0.0])
    st = ng.AdamState(lr=lr)
    for t in range(1, 101):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        x_ref -= step
        before = p.values[0]
        ng.adam_step({"p": p}, {"p": np.array([g])}, st)
        assert before - p.values[0] == pytest.approx(step, rel=1e-12)
    assert step == pytest.approx(lr, rel=1e-6)
    assert p.values[0] == pytest.approx(x_ref, rel=1e-12)


def test_glorot_bounds(rng):
    w = ng.glorot_uniform(rng, 100, 50, "w")
    assert np.abs(w.values).max() <= math.sqrt(6 / 150)
    assert w.values.std() == pytest.approx(math.sqrt(6 / 150) / math.sqrt(3), rel=0.05)


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path, rng):
    tensors = {"a": rng.normal(size=(3, 4)), "b.bias": rng.normal(size=5), "scalar": np.array(2.5)}
    ckpt = ng.Checkpoint(tensors, {"alpha": 0.3, "k": "v"}, rng.normal(size=4), rng.uniform(1, 2, size=4))
    ng.save_checkpoint(tmp_path / "m.asdp", ckpt)
    raw = (tmp_path / "m.asdp").read_bytes()
    assert raw[:4] == b"ASDP"
    back = ng.load_checkpoint(tmp_path / "m.asdp")
    assert back.config == ckpt.config
    assert list(back.tensors) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back.tensors[k], tensors[k])
    np.testing.assert_array_equal(back.norm_mean, ckpt.norm_mean)
    np.testing.assert_array_equal(back.norm_std, ckpt.norm_std)


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE0000")
    with pytest.raises(ng.CheckpointError):
        ng.load_checkpoint(tmp_path / "x")


def test_ops_module_constants():
    assert ops.BN_MOMENTUM == 0.9
