import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tae import autodiff as ad
from tae import model as M
from tae.features import Params
from tae.gradcheck import finite_diff_check

CFG = M.ModelConfig(width=8, hidden=8, trunk=12, head=6, horizon=5, dec_hidden=10, disc_hidden=6, cls_hidden=7)


@pytest.fixture(scope="module")
def params():
    return M.init_params(CFG, seed=3)


def _feat(n=4, seed=0, scale=1.0):
    return np.random.default_rng(seed).normal(size=(n, CFG.width)) * scale


def _encode(params, feat):
    tape = ad.Tape()
    return M.encode(Params(tape, params), tape.const(feat))


def _decode(params, z):
    tape = ad.Tape()
    return M.decode(Params(tape, params), tape.const(z)).value


# -- encoder / decoder ------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, CFG.width), elements=st.floats(-100, 100)))
def test_intent_on_simplex_and_agg_positive(x):
    lat = _encode(M.init_params(CFG, seed=3), x)
    np.testing.assert_allclose(lat.intent.value.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(lat.intent.value >= 0)
    assert np.all(lat.agg.value > 0)
    assert lat.gauss.value.shape == (3, 6)


def test_agg_positive_for_extreme_negative_logits(params):
    p = dict(params)
    p["enc/agg/1/b"] = np.array([-1e4], np.float32)
    assert np.all(_encode(p, _feat()).agg.value > 0)


def test_identical_features_identical_codes(params):
    f = np.tile(_feat(1), (2, 1))
    z = _encode(params, f).stacked().value
    assert z[0].tobytes() == z[1].tobytes()


def test_decode_shape_and_determinism(params):
    z = np.random.default_rng(1).normal(size=(3, M.LATENT))
    a, b = _decode(params, z), _decode(params, z)
    assert a.shape == (3, CFG.horizon, 2)
    assert a.tobytes() == b.tobytes()


def test_decode_continuous_in_agg(params):
    z = np.random.default_rng(2).normal(size=(1, M.LATENT))
    z[0, 3] = 1.5
    base = _decode(params, z)
    gaps = []
    for eps in (1e-1, 1e-3, 1e-5):
        z2 = z.copy()
        z2[0, 3] += eps
        gaps.append(np.abs(_decode(params, z2) - base).max())
    assert gaps[0] >= gaps[1] >= gaps[2]
    assert gaps[2] < 1e-3


def test_param_shapes_declared(params):
    assert set(params) == set(M.init_params(CFG, seed=99))
    M.check_params(params, M.init_params(CFG, seed=99))
    assert params["dec/2/w"].shape == (CFG.dec_hidden, CFG.horizon * 2)
    for head, n in zip(M.HEADS, (3, 1, 6)):
        assert params[f"disc/{head}/0/w"].shape[0] == n
        assert params[f"disc/{head}/1/w"].shape[1] == 1


# -- prior ------------------------------------------------------------------

def test_agg_prior_moments():
    prior = M.PriorConfig()
    x = np.log(M.sample_prior("agg", prior, 0, 100_000))
    # standard error of the mean is 0.55/316 ~ 0.0017, of the std ~ 0.0012
    assert abs(x.mean() - prior.agg_mu) < 0.01
    assert abs(x.std() - prior.agg_sigma) < 0.01


def test_intent_prior_is_one_hot():
    s = M.sample_prior("intent", M.PriorConfig(), 1, 1000)
    assert set(np.unique(s)) == {0.0, 1.0}
    np.testing.assert_array_equal(s.sum(axis=1), 1.0)


def test_intent_prior_follows_probs():
    s = M.sample_prior("intent", M.PriorConfig(probs=(0.6, 0.3, 0.1)), 1, 20000)
    np.testing.assert_allclose(s.mean(axis=0), [0.6, 0.3, 0.1], atol=0.02)


def test_gauss_prior_mean_within_clt_bound():
    g = M.sample_prior("gauss", M.PriorConfig(), 2, 100_000)
    # 0.02 is more than 6 standard errors
    assert np.all(np.abs(g.mean(axis=0)) < 0.02)


def test_prior_config_validation():
    with pytest.raises(ValueError):
        M.PriorConfig(probs=(0.5, 0.5, 0.5)).validate()
    with pytest.raises(ValueError):
        M.PriorConfig(agg_sigma=0.0).validate()
    with pytest.raises(ValueError):
        M.PriorConfig(K=1).validate()


# -- losses: unit values ----------------------------------------------------

def _const(x):
    return ad.Tape().const(np.asarray(x, dtype=float))


@pytest.mark.parametrize("d, expected", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5)])
def test_loss_pred_uniform_difference(d, expected):
    t = ad.Tape()
    ref = np.random.default_rng(0).normal(size=(4, 5, 2))
    assert float(M.loss_pred(t.const(ref + d), ref).value) == pytest.approx(expected, abs=1e-12)


def test_loss_pred_shape_mismatch():
    with pytest.raises(ValueError):
        M.loss_pred(_const(np.zeros((2, 3))), np.zeros((3, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4, 2), elements=st.floats(-20, 20)),
       arrays(np.float64, (3, 4, 2), elements=st.floats(-20, 20)))
def test_loss_pred_nonnegative_and_zero_on_self(a, b):
    t = ad.Tape()
    assert float(M.loss_pred(t.const(a), b).value) >= 0
    assert float(M.loss_pred(t.const(a), a).value) == 0.0


def test_loss_adv_plug_in_values():
    t = ad.Tape()
    half = [t.const(np.full(7, 0.5)) for _ in range(3)]
    assert float(M.loss_adv(half).value) == pytest.approx(np.log(0.5), abs=1e-6)
    ones = [t.const(np.ones(7)) for _ in range(3)]
    assert float(M.loss_adv(ones).value) == pytest.approx(np.log(1e-7), rel=1e-6)
    zeros = [t.const(np.zeros(7)) for _ in range(3)]
    assert float(M.loss_adv(zeros).value) == pytest.approx(0.0, abs=1e-6)


def test_loss_disc_plug_in_values():
    t = ad.Tape()
    v = M.loss_disc(t.const(np.full(5, 0.5)), t.const(np.full(5, 0.5)))
    assert float(v.value) == pytest.approx(-2 * np.log(0.5), abs=1e-6)
    perfect = M.loss_disc(t.const(np.ones(5)), t.const(np.zeros(5)))
    assert float(perfect.value) == pytest.approx(0.0, abs=1e-6)


def _latent(intent, agg):
    t = ad.Tape()
    n = len(intent)
    return M.Latent(t.const(np.asarray(intent, float)), t.const(np.asarray(agg, float).reshape(n, 1)),
                    t.const(np.zeros((n, 6))))


def test_loss_semi_unit_values():
    exact = M.loss_semi(_latent([[0, 1, 0]], [1.7]), [1], [1.7])
    assert float(exact.value) == pytest.approx(0.0, abs=1e-12)
    uniform = M.loss_semi(_latent([[1 / 3] * 3], [1.0]), [2], [np.nan])
    assert float(uniform.value) == pytest.approx(np.log(3), abs=1e-6)
    agg_only = M.loss_semi(_latent([[1 / 3] * 3], [1.0]), [-1], [2.0])
    assert float(agg_only.value) == pytest.approx(1.0, abs=1e-12)


def test_loss_semi_normalizes_each_term_by_its_count():
    lat = _latent([[1 / 3] * 3] * 4, [1.0, 1.0, 1.0, 3.0])
    v = M.loss_semi(lat, [0, 1, -1, -1], [np.nan, np.nan, np.nan, 1.0])
    assert float(v.value) == pytest.approx(np.log(3) + 4.0, abs=1e-9)
    w = M.loss_semi(lat, [0, 1, -1, -1], [np.nan, np.nan, np.nan, 1.0], w_intent=2.0, w_agg=0.5)
    assert float(w.value) == pytest.approx(2 * np.log(3) + 2.0, abs=1e-9)


def test_loss_semi_requires_a_label():
    with pytest.raises(ValueError):
        M.loss_semi(_latent([[1 / 3] * 3], [1.0]), [-1], [np.nan])


def test_loss_diversity_unit_values():
    same = np.tile(np.random.default_rng(0).normal(size=(1, 5, 2)), (4, 1, 1))
    assert float(M.loss_diversity(_const(same), 10.0).value) == 1.0
    a = np.zeros((5, 2))
    b = a.copy()
    b[0, 0] = np.sqrt(10.0)  # D^2 = sigma_d
    pair = M.loss_diversity(_const(np.stack([a, b])), 10.0)
    assert float(pair.value) == pytest.approx(np.exp(-1), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 3, 2), elements=st.floats(-3, 3)), st.integers(0, 3), st.floats(0.1, 5.0))
def test_loss_diversity_decreases_when_a_pair_separates(trajs, i, push):
    before = float(M.loss_diversity(_const(trajs), 10.0).value)
    moved = trajs.copy()
    others = np.delete(trajs, i, axis=0).mean(axis=0)
    direction = trajs[i] - others
    n = np.linalg.norm(direction)
    direction = direction / n if n > 1e-9 else np.ones_like(direction) / np.sqrt(direction.size)
    moved[i] = trajs[i] + 100.0 * push * direction
    assert float(M.loss_diversity(_const(moved), 10.0).value) < before


# -- mode classifier --------------------------------------------------------

def test_classifier_scores_sum_to_one(params):
    t = ad.Tape()
    cands = np.random.default_rng(0).normal(size=(3, 6, CFG.horizon, 2))
    s = M.classify_modes(Params(t, params), t.const(_feat(3)), t.const(cands)).value
    assert s.shape == (3, 6)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_classifier_single_candidate(params):
    t = ad.Tape()
    cands = np.random.default_rng(0).normal(size=(2, 1, CFG.horizon, 2))
    s = M.classify_modes(Params(t, params), t.const(_feat(2)), t.const(cands)).value
    np.testing.assert_array_equal(s, 1.0)


def test_mode_latents_match_numeric_variants(params):
    from tae.evaluation.inference import mode_codes
    code = M.LatentCode(np.array([[0.2, 0.5, 0.3], [0.9, 0.05, 0.05]]), np.array([0.7, 3.0]),
                        np.random.default_rng(0).normal(size=(2, 6)))
    t = ad.Tape()
    tape_modes = [z.value for z in M.mode_latents(t.const(code.stacked()), 1.0, 6)]
    num_modes = [c.stacked() for c in mode_codes(code, 1.0, 6)]
    for a, b in zip(tape_modes, num_modes):
        np.testing.assert_allclose(a, b, atol=1e-12)
    assert num_modes[1][0, 3] == 0.05  # floored
    np.testing.assert_array_equal(num_modes[3][:, :3], [[0, 1, 0], [0, 1, 0]])


# -- gradients of every loss -------------------------------------------------

def _net(params, seed=0):
    t = ad.Tape()
    P = Params(t, params)
    feat = t.param("feat", _feat(3, seed))
    return t, P, feat


def test_gradcheck_loss_pred(params):
    t, P, feat = _net(params)
    lat = M.encode(P, feat)
    ref = np.random.default_rng(1).normal(size=(3, CFG.horizon, 2)) * 3
    out = M.loss_pred(M.decode(P, lat.stacked()), ref)
    assert finite_diff_check(t, out, max_elements=8).passed


def test_gradcheck_loss_adv(params):
    t, P, feat = _net(params)
    lat = M.encode(P, feat)
    out = M.loss_adv([M.discriminate(P, h, x) for h, x in zip(M.HEADS, (lat.intent, lat.agg, lat.gauss))])
    assert finite_diff_check(t, out, max_elements=8).passed


def test_gradcheck_loss_disc(params):
    t = ad.Tape()
    P = Params(t, params)
    prior = M.PriorConfig()
    real = t.input("real", M.sample_prior("gauss", prior, 0, 5))
    fake = t.input("fake", np.random.default_rng(0).normal(size=(5, 6)) * 2)
    out = M.loss_disc(M.discriminate(P, "gauss", real), M.discriminate(P, "gauss", fake))
    assert finite_diff_check(t, out, max_elements=8).passed


def test_batch_stats_columns():
    t = ad.Tape()
    x = np.random.default_rng(2).normal(size=(9, 3)) * 2 + 1
    out = M.batch_stats(t.const(x)).value
    assert out.shape == (9, 9)
    np.testing.assert_array_equal(out[:, :3], x)
    np.testing.assert_allclose(out[:, 3:6], np.broadcast_to(x.mean(0), (9, 3)))
    np.testing.assert_allclose(out[:, 6:], np.broadcast_to(0.5 * np.log(x.var(0) + M.STATS_EPS), (9, 3)))


def test_stats_discriminator_sees_batch_shift():
    cfg = M.ModelConfig(**dict(CFG.to_dict(), disc_stats=True))
    params = M.init_params(cfg, seed=1)
    assert params["disc/gauss/0/w"].shape == (3 * M.N_GAUSS, cfg.disc_hidden)
    x = np.random.default_rng(0).normal(size=(6, M.N_GAUSS))
    t = ad.Tape()
    P = Params(t, params)
    row = M.discriminate(P, "gauss", t.const(x)).value[0]
    shifted = M.discriminate(P, "gauss", t.const(np.vstack([x[:1], x[1:] + 3.0]))).value[0]
    assert row != shifted  # same row, different batch


def test_gradcheck_stats_discriminator():
    cfg = M.ModelConfig(**dict(CFG.to_dict(), disc_stats=True))
    params = M.init_params(cfg, seed=1)
    t = ad.Tape()
    P = Params(t, params)
    x = t.param("x", np.random.default_rng(5).normal(size=(5, M.N_GAUSS)))
    a = t.param("a", np.exp(np.random.default_rng(6).normal(size=(5, 1))))
    out = M.loss_adv([M.discriminate(P, "gauss", x), M.discriminate(P, "agg", a)])
    assert finite_diff_check(t, out, max_elements=8).passed


def test_gradcheck_loss_semi(params):
    t, P, feat = _net(params)
    out = M.loss_semi(M.encode(P, feat), [0, -1, 2], [1.2, np.nan, 0.8])
    assert finite_diff_check(t, out, max_elements=8).passed


def test_gradcheck_loss_diversity():
    t = ad.Tape()
    x = t.param("x", np.random.default_rng(3).normal(size=(2, 3, 4, 2)))
    assert finite_diff_check(t, M.loss_diversity(x, 10.0)).passed


def test_gradcheck_classifier_loss(params):
    t = ad.Tape()
    P = Params(t, params)
    cands = t.param("cands", np.random.default_rng(4).normal(size=(2, 4, CFG.horizon, 2)))
    s = M.classify_modes(P, t.param("feat", _feat(2)), cands)
    out = -ad.mean(ad.log(ad.gather(ad.reshape(s, (-1,)), [1, 6])))
    assert finite_diff_check(t, out, max_elements=8).passed
