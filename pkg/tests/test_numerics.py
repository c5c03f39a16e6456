import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tae import autodiff as ad
from tae.gradcheck import finite_diff_check, rel_error
from tae.optim import AdamState, adam_step
from tae.rng import stream


def weighted_sum(out, rng):
    w = out.tape.const(rng.normal(size=out.shape))
    return ad.vsum(out * w)


def _away_from(x, points, margin=0.1):
    for p in points:
        x = np.where(np.abs(x - p) < margin, x + 2 * margin * np.sign(x - p + 1e-12), x)
    return x


# each builder returns (tape, scalar output) for random leaf values
def b_add(rng):
    t = ad.Tape(); a = t.param("a", rng.normal(size=(3, 4))); b = t.param("b", rng.normal(size=(4,)))
    return t, weighted_sum(a + b, rng)

def b_sub(rng):
    t = ad.Tape(); a = t.param("a", rng.normal(size=(3, 4))); b = t.param("b", rng.normal(size=(3, 1)))
    return t, weighted_sum(a - b, rng)

def b_mul(rng):
    t = ad.Tape(); a = t.param("a", rng.normal(size=(3, 4))); b = t.param("b", rng.normal(size=(3, 4)))
    return t, weighted_sum(a * b, rng)

def b_scale(rng):
    t = ad.Tape(); a = t.param("a", rng.normal(size=(5,)))
    return t, weighted_sum(a * 2.5, rng)

def b_matmul(rng):
    t = ad.Tape(); a = t.param("a", rng.normal(size=(3, 4))); b = t.param("b", rng.normal(size=(4, 2)))
    return t, weighted_sum(a @ b, rng)

def b_conv1d(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(2, 9, 3))); w = t.param("w", rng.normal(size=(3, 3, 4)))
    return t, weighted_sum(ad.conv1d(x, w, 2), rng)

def b_relu(rng):
    t = ad.Tape(); x = t.param("x", _away_from(rng.normal(size=(4, 5)), [0.0]))
    return t, weighted_sum(ad.relu(x), rng)

def b_sigmoid(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(6,)) * 3)
    return t, weighted_sum(ad.sigmoid(x), rng)

def b_softmax(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(3, 4)))
    return t, weighted_sum(ad.softmax(x, axis=1), rng)

def b_exp(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(5,)))
    return t, weighted_sum(ad.exp(x), rng)

def b_log(rng):
    t = ad.Tape(); x = t.param("x", rng.uniform(0.5, 3.0, size=(5,)))
    return t, weighted_sum(ad.log(x), rng)

def b_clip(rng):
    t = ad.Tape(); x = t.param("x", _away_from(rng.normal(size=(8,)), [-0.5, 0.5]))
    return t, weighted_sum(ad.clip(x, -0.5, 0.5), rng)

def b_gather(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(4, 3)))
    return t, weighted_sum(ad.gather(x, [0, 2, 2, 3, 0]), rng)

def b_segment_sum(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(6, 2)))
    return t, weighted_sum(ad.segment_sum(x, [0, 1, 1, 3, 0, 3], 4), rng)

def b_concat(rng):
    t = ad.Tape(); a = t.param("a", rng.normal(size=(2, 3))); b = t.param("b", rng.normal(size=(2, 2)))
    return t, weighted_sum(ad.concat([a, b], axis=1), rng)

def b_slice(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(4, 5)))
    return t, weighted_sum(x[1:3, ::2], rng)

def b_reshape(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(4, 6)))
    return t, weighted_sum(ad.reshape(x, (3, 8)), rng)

def b_sum(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(4, 6)))
    return t, weighted_sum(ad.vsum(x, axis=0), rng)

def b_mean(rng):
    t = ad.Tape(); x = t.param("x", rng.normal(size=(4, 6)))
    return t, weighted_sum(ad.mean(x, axis=1, keepdims=True), rng)

def b_sq_err(rng):
    t = ad.Tape(); a = t.param("a", rng.normal(size=(3, 2))); b = t.param("b", rng.normal(size=(3, 2)))
    return t, ad.sq_err(a, b)


BUILDERS = {
    "add": b_add, "sub": b_sub, "mul": b_mul, "scale": b_scale, "matmul": b_matmul, "conv1d": b_conv1d,
    "relu": b_relu, "sigmoid": b_sigmoid, "softmax": b_softmax, "exp": b_exp, "log": b_log, "clip": b_clip,
    "gather": b_gather, "segment_sum": b_segment_sum, "concat": b_concat, "slice": b_slice,
    "reshape": b_reshape, "sum": b_sum, "mean": b_mean, "sq_err": b_sq_err,
}


def test_every_primitive_has_a_gradient_test():
    assert set(ad.PRIMITIVES) == set(BUILDERS)


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_primitive_gradient_matches_central_differences(name):
    for point in range(20):
        tape, out = BUILDERS[name](stream(11, name, point))
        report = finite_diff_check(tape, out, tolerance=1e-4, eps=1e-4)
        assert report.passed, (name, point, report.max_rel_error)


# -- forward examples ------------------------------------------------------

def test_identity_matmul():
    a = np.arange(9.0).reshape(3, 3)
    t = ad.Tape()
    out = t.const(np.eye(3)) @ t.param("a", a)
    np.testing.assert_array_equal(out.value, a)


def test_softmax_of_zeros_is_uniform():
    t = ad.Tape()
    np.testing.assert_allclose(ad.softmax(t.const(np.zeros(3))).value, np.full(3, 1 / 3), rtol=0, atol=1e-15)


def test_relu_definition():
    t = ad.Tape()
    np.testing.assert_array_equal(ad.relu(t.const([-1.0, 2.0])).value, [0.0, 2.0])


def test_relu_subgradient_at_zero_is_zero():
    t = ad.Tape()
    x = t.param("x", np.array([0.0, 1.0]))
    g = t.backward(ad.vsum(ad.relu(x)))
    np.testing.assert_array_equal(g["x"], [0.0, 1.0])


def test_square_derivative():
    t = ad.Tape()
    x = t.param("x", 3.0)
    assert float(t.backward(x * x)["x"]) == 6.0


def test_mean_of_constants_has_zero_gradient_and_offpath_params_get_zero():
    t = ad.Tape()
    x = t.param("x", np.ones(4))
    unused = t.param("unused", np.ones(2))
    out = ad.mean(t.const(np.arange(4.0)) + x * 0.0)
    g = t.backward(out)
    np.testing.assert_array_equal(g["x"], 0.0)
    np.testing.assert_array_equal(g["unused"], 0.0)


def test_dilated_conv_is_causal():
    rng = np.random.default_rng(0)
    t = ad.Tape()
    x = rng.normal(size=(1, 12, 2))
    w = t.const(rng.normal(size=(3, 2, 3)))
    y0 = ad.conv1d(t.const(x), w, 4).value
    x2 = x.copy()
    x2[0, 7:] += 5.0
    y1 = ad.conv1d(t.const(x2), w, 4).value
    np.testing.assert_array_equal(y0[0, :7], y1[0, :7])
    assert not np.allclose(y0[0, 7:], y1[0, 7:])


def test_conv_matches_direct_sum():
    rng = np.random.default_rng(1)
    x, w, d = rng.normal(size=(2, 10, 3)), rng.normal(size=(3, 3, 4)), 2
    t = ad.Tape()
    y = ad.conv1d(t.const(x), t.const(w), d).value
    ref = np.zeros((2, 10, 4))
    for n in range(2):
        for i in range(10):
            for k in range(3):
                j = i - (2 - k) * d
                if j >= 0:
                    ref[n, i] += x[n, j] @ w[k]
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_nan_rejected_at_construction():
    t = ad.Tape()
    with pytest.raises(ValueError):
        t.param("x", np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        t.const(np.inf)


def test_replay_shape_mismatch_names_node():
    t = ad.Tape()
    x = t.input("x", np.ones((2, 3)))
    ad.vsum(x @ t.const(np.ones((3, 1))))
    with pytest.raises(ad.ShapeError) as err:
        t.forward({"x": np.ones((2, 4))})
    assert "node" in str(err.value)


def test_backward_on_empty_tape_raises():
    with pytest.raises(ad.TapeError):
        ad.Tape().backward()


def test_forward_replay_is_pure():
    rng = np.random.default_rng(2)
    t = ad.Tape()
    x = t.input("x", rng.normal(size=(3, 3)))
    out = ad.vsum(ad.sigmoid(x @ x))
    feed = {"x": rng.normal(size=(3, 3))}
    a, b = t.forward(feed, out), t.forward(feed, out)
    assert a.tobytes() == b.tobytes()


def test_backward_visits_each_node_once():
    t = ad.Tape()
    x = t.param("x", 2.0)
    y = x * x
    z = y + y  # y reused: gradient must accumulate, not double-visit
    assert float(t.backward(z)["x"]) == 8.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_sums_to_one_and_is_positive(x):
    t = ad.Tape()
    s = ad.softmax(t.const(x), axis=1).value
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(s > 0)


def test_segment_softmax_normalizes_per_segment_and_tolerates_empty():
    t = ad.Tape()
    seg = np.array([0, 0, 2, 2, 2])
    a = ad.segment_softmax(t.const([1.0, 2.0, 0.0, 500.0, -3.0]), seg, 4).value
    assert a[:2].sum() == pytest.approx(1.0) and a[2:].sum() == pytest.approx(1.0)
    assert np.all(np.isfinite(a))


# -- finite_diff_check -----------------------------------------------------

def test_check_linear_map_is_tight():
    rng = np.random.default_rng(3)
    t = ad.Tape()
    w = t.param("w", rng.normal(size=(4, 3)))
    out = ad.vsum(t.const(rng.normal(size=(2, 4))) @ w)
    assert finite_diff_check(t, out).worst < 1e-8


def test_check_two_layer_relu_net():
    rng = np.random.default_rng(4)
    t = ad.Tape()
    x = t.const(rng.normal(size=(5, 3)))
    h = ad.relu(ad.dense(x, t.param("w1", rng.normal(size=(3, 8))), t.param("b1", rng.normal(size=8) * 0.1)))
    out = ad.mean(ad.dense(h, t.param("w2", rng.normal(size=(8, 1))), t.param("b2", np.zeros(1))))
    assert finite_diff_check(t, out, tolerance=1e-4).passed


def test_check_flags_corrupted_gradient():
    rng = np.random.default_rng(5)
    t = ad.Tape()
    w = t.param("w", rng.normal(size=(3, 3)))
    out = ad.vsum(ad.sigmoid(w @ w))
    wrong = {k: 2.0 * v for k, v in t.backward(out).items()}
    report = finite_diff_check(t, out, analytic=wrong)
    assert not report.passed
    assert report.worst > 0.3


def test_check_restores_leaf_values():
    t = ad.Tape()
    w = t.param("w", np.array([1.0, 2.0]))
    out = ad.vsum(ad.exp(w))
    before = out.value.copy()
    finite_diff_check(t, out)
    np.testing.assert_array_equal(t.values[w.idx], [1.0, 2.0])
    np.testing.assert_array_equal(out.value, before)


def test_check_respects_node_budget():
    t = ad.Tape()
    x = t.param("x", 1.0)
    for _ in range(10):
        x = x * 1.0
    with pytest.raises(ValueError):
        finite_diff_check(t, x, node_budget=5)


def test_rel_error_floor():
    assert rel_error(0.0, 1e-6) < 1e-2
    assert rel_error(1.0, 2.0) == pytest.approx(0.5)


# -- Adam ------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0], np.float32)}
    new, st_ = adam_step(p, {"w": np.zeros(2)}, AdamState(), 0.1)
    np.testing.assert_array_equal(new["w"], p["w"])
    assert st_.step == 1


def test_adam_first_step_moves_by_learning_rate():
    # bias-corrected m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    p = {"w": np.array([0.0], np.float32)}
    lr = 1e-3
    new, _ = adam_step(p, {"w": np.array([1.0])}, AdamState(), lr)
    expected = -lr * 1.0 / (1.0 + 1e-8)
    assert float(new["w"][0]) == pytest.approx(expected, rel=1e-6)


def test_adam_repeated_unit_gradient_keeps_step_size():
    p = {"w": np.array([0.0], np.float32)}
    s = AdamState()
    for _ in range(5):
        p, s = adam_step(p, {"w": np.array([1.0])}, s, 0.01)
    assert float(p["w"][0]) == pytest.approx(-0.05, rel=1e-5)
    assert s.step == 5


def test_adam_is_deterministic():
    rng = np.random.default_rng(6)
    grads = [{"w": rng.normal(size=(3, 2))} for _ in range(4)]

    def run():
        p, s = {"w": np.ones((3, 2), np.float32)}, AdamState()
        for g in grads:
            p, s = adam_step(p, g, s, 0.01)
        return p["w"]

    assert run().tobytes() == run().tobytes()


def test_adam_nonfinite_gradient_names_parameter():
    with pytest.raises(FloatingPointError, match="enc/w"):
        adam_step({"enc/w": np.zeros(2, np.float32)}, {"enc/w": np.array([np.nan, 0.0])}, AdamState(), 0.1)


def test_adam_clip_norm_hook():
    p = {"w": np.zeros(2, np.float32)}
    a, _ = adam_step(p, {"w": np.array([3.0, 4.0])}, AdamState(), 0.1)
    b, _ = adam_step(p, {"w": np.array([3.0, 4.0])}, AdamState(), 0.1, clip_norm=1.0)
    # Adam is scale invariant on the first step up to eps
    np.testing.assert_allclose(a["w"], b["w"], rtol=1e-6)


# -- rng -------------------------------------------------------------------

def test_streams_are_reproducible_and_independent():
    a = stream(42, "x", 1).standard_normal(5)
    assert np.array_equal(a, stream(42, "x", 1).standard_normal(5))
    assert not np.array_equal(a, stream(42, "x", 2).standard_normal(5))
    assert not np.array_equal(a, stream(43, "x", 1).standard_normal(5))
