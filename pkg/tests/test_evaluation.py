import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tae import model as M
from tae.evaluation import (
    THRESHOLDS, behavior_metrics, constant_velocity, constant_velocity_baseline, decode_modes, displacement_metrics,
    dpgmm_cluster, eligibility, evaluate, fit_dpgmm, fit_headway, infer, min_displacement, min_ego_distance,
    percent_change, sweep_behavior, vectorize,
)
from tae.features import prepare
from tae.scenario import AgentTrack, SynthConfig, synth_generate
from tae.scenario.types import INTENTS

from conftest import uniform_track


@pytest.fixture(scope="module")
def params():
    return M.init_params(M.ModelConfig(width=16, hidden=16, trunk=16, head=8, dec_hidden=16), 4)


# -- displacement -------------------------------------------------------------

def test_perfect_prediction_zero_error():
    x = np.random.default_rng(0).normal(size=(5, 30, 2))
    assert displacement_metrics(x, x) == (0.0, 0.0)


def test_three_four_five():
    x = np.random.default_rng(0).normal(size=(5, 30, 2))
    ade, fde = displacement_metrics(x + [3.0, 4.0], x)
    assert ade == pytest.approx(5.0) and fde == pytest.approx(5.0)


def test_displacement_shape_errors():
    with pytest.raises(ValueError):
        displacement_metrics(np.zeros((2, 3, 2)), np.zeros((2, 4, 2)))
    with pytest.raises(ValueError):
        displacement_metrics(np.zeros((2, 0, 2)), np.zeros((2, 0, 2)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 5, 4, 2), elements=st.floats(-50, 50)),
       arrays(np.float64, (3, 4, 2), elements=st.floats(-50, 50)))
def test_min_over_candidates_bounds_first(cands, truth):
    min_ade, min_fde = min_displacement(cands, truth)
    for i in range(len(truth)):
        ade0, fde0 = displacement_metrics(cands[i, 0], truth[i])
        assert min_fde[i] <= fde0 + 1e-12 and min_ade[i] <= ade0 + 1e-12
    # nonincreasing in K on nested candidate sets
    prev = np.full(len(truth), np.inf)
    for k in range(1, cands.shape[1] + 1):
        cur, _ = min_displacement(cands[:, :k], truth)
        assert np.all(cur <= prev + 1e-12)
        prev = cur


# -- constant velocity ---------------------------------------------------------

def test_cv_stationary():
    a = AgentTrack("s", np.tile([[4.0, 2.0]], (20, 1)), np.tile([[4.0, 2.0]], (30, 1)), "L")
    np.testing.assert_array_equal(constant_velocity(a), np.tile([[4.0, 2.0]], (30, 1)))


def test_cv_uniform_motion_exact(micro):
    for a in micro.agents:
        ade, fde = displacement_metrics(constant_velocity(a), a.fut)
        assert ade < 1e-9 and fde < 1e-9
    assert set(constant_velocity_baseline(micro)) == {"a0", "a1"}


def test_cv_turning_agent_misses():
    t = np.arange(50) * 0.1
    ang = 0.3 * t
    pts = np.stack([10 * np.sin(ang), 10 * (1 - np.cos(ang))], axis=1) * 3
    a = AgentTrack("t", pts[:20], pts[20:], "L")
    assert displacement_metrics(constant_velocity(a), a.fut)[1] > 0.5


def test_cv_needs_two_points():
    a = AgentTrack("x", np.zeros((1, 2)), np.zeros((30, 2)), "L")
    with pytest.raises(ValueError):
        constant_velocity(a)


# -- behavior metrics ------------------------------------------------------------

def test_perfect_codes():
    hi = np.array([0, 1, 2, 1])
    hh = np.array([1.0, 2.0, 3.0, 0.5])
    out = behavior_metrics(np.eye(3)[hi], hh, hi, hh)
    assert out["intent_accuracy"] == 1.0 and out["agg_mse"] == 0.0


def test_constant_mean_code_gives_variance():
    hh = np.random.default_rng(0).lognormal(0.3, 0.55, 500)
    out = behavior_metrics(np.full((500, 3), 1 / 3), np.full(500, hh.mean()), np.zeros(500, int), hh)
    assert out["agg_mse"] == pytest.approx(hh.var(), rel=1e-12)
    assert out["agg_mse"] == pytest.approx(out["agg_baseline_mse"], rel=1e-12)


def test_random_intent_near_chance():
    rng = np.random.default_rng(7)
    probs = rng.dirichlet(np.ones(3), size=1000)
    truth = rng.integers(0, 3, 1000)
    acc = behavior_metrics(probs, np.ones(1000), truth, np.ones(1000))["intent_accuracy"]
    # 3 sigma of Binomial(1000, 1/3) is about 0.045
    assert abs(acc - 1 / 3) <= 0.05


def test_masks_and_names():
    probs = np.eye(3)[[INTENTS.index("left"), INTENTS.index("right"), INTENTS.index("left")]]
    out = behavior_metrics(probs, [1.0, 9.0, 2.0], ["left", "forward", "left"], [1.0, np.nan, 3.0],
                           intent_mask=[True, True, False], headway_mask=[True, True, True])
    assert out["n_intent"] == 2 and out["intent_accuracy"] == 0.5
    assert out["n_headway"] == 2 and out["agg_mse"] == pytest.approx(0.5)


def test_hidden_truth_matches_revealed_labels_at_full_fraction():
    items = [prepare(s) for s in synth_generate(SynthConfig(n=10, seed=4, label_frac=1.0))]
    scen = synth_generate(SynthConfig(n=10, seed=4, label_frac=1.0))
    probs = np.random.default_rng(0).dirichlet(np.ones(3), size=sum(it.n_agents for it in items))
    hidden = np.concatenate([it.hidden_intent for it in items])
    revealed = np.concatenate([it.label_intent for it in items])
    im, hm = eligibility(scen)
    a = behavior_metrics(probs, np.ones(len(probs)), hidden, np.ones(len(probs)), im)
    b = behavior_metrics(probs, np.ones(len(probs)), revealed, np.ones(len(probs)), im)
    assert a["intent_accuracy"] == b["intent_accuracy"]
    np.testing.assert_array_equal(hm, np.isfinite(np.concatenate([it.label_headway for it in items])))


# -- DPGMM ----------------------------------------------------------------------

def _bundles(n=100, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.1, 3.0, 30)
    fwd = np.stack([10 * t, 0 * t], axis=1)
    left = np.stack([10 * t, 1.5 * t ** 2], axis=1)
    return np.concatenate([fwd + rng.normal(0, 0.1, (n, 30, 2)), left + rng.normal(0, 0.1, (n, 30, 2))])


def test_identical_trajectories_single_cluster():
    x = np.tile(_bundles(1)[:1], (60, 1, 1))
    out = dpgmm_cluster(x)
    assert all(c == 1 for c in out["counts"].values())


def test_two_bundles_two_clusters():
    assert dpgmm_cluster(_bundles())["counts"][0.05] == 2


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(50, 120))
def test_threshold_monotone(seed, n):
    x = np.random.default_rng(seed).normal(size=(n, 30, 2)).cumsum(axis=1)
    c = dpgmm_cluster(x)["counts"]
    assert c[0.01] >= c[0.03] >= c[0.05] >= 1


def test_elbo_nondecreasing():
    x = vectorize(np.random.default_rng(1).normal(size=(150, 30, 2)).cumsum(axis=1))
    e = np.array(fit_dpgmm(x).elbo)
    assert np.all(np.diff(e) >= -1e-6 * np.abs(e[:-1]))


def test_agrees_with_reference_implementation():
    mixture = pytest.importorskip("sklearn.mixture")
    rng = np.random.default_rng(3)
    centers = rng.normal(0, 20, size=(4, 6))
    x = np.concatenate([c + rng.normal(0, 0.5, (80, 6)) for c in centers])
    ours = fit_dpgmm(x).count(0.05)
    ref = mixture.BayesianGaussianMixture(n_components=40, covariance_type="diag", weight_concentration_prior=1.0,
                                          max_iter=500, random_state=0, init_params="k-means++").fit(x)
    assert ours == 4 == int(np.sum(ref.weights_ >= 0.05))


def test_iteration_cap_sets_flag():
    out = dpgmm_cluster(np.random.default_rng(2).normal(size=(80, 30, 2)).cumsum(1), max_iter=2)
    assert out["converged"] is False and out["n_iter"] == 2


def test_vectorize_shape():
    v = vectorize(np.zeros((7, 30, 2)))
    assert v.shape == (7, 20)


# -- headway fits -----------------------------------------------------------------

def test_lognormal_recovery():
    x = np.random.default_rng(0).lognormal(0.3, 0.55, 100_000)
    fits, best = fit_headway(x)
    assert best == "lognormal"
    assert abs(fits["lognormal"].params["mu"] - 0.3) <= 0.02
    assert abs(fits["lognormal"].params["sigma"] - 0.55) <= 0.02
    assert fits["lognormal"].kl <= min(fits["normal"].kl, fits["gamma"].kl)


def test_normal_data_prefers_normal():
    x = np.random.default_rng(1).normal(5.0, 0.5, 100_000)
    _, best = fit_headway(x[x > 0])
    assert best == "normal"


def test_gamma_data_prefers_gamma():
    x = np.random.default_rng(2).gamma(2.0, 1.2, 100_000)
    fits, best = fit_headway(x)
    assert best == "gamma"
    assert fits["gamma"].sse <= fits["normal"].sse


@pytest.mark.parametrize("bad", [np.r_[np.ones(200), 0.0], np.r_[np.ones(200), -1.0], np.ones(50)])
def test_headway_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        fit_headway(bad)


# -- sweep -----------------------------------------------------------------------

def test_percent_change():
    assert percent_change(5, 5) == 0.0
    assert percent_change(15, 10) == 50.0
    assert percent_change(0, 0) == 0.0
    assert percent_change(3, 0) is None


def test_sweep_baseline_zero_change(params, small_set):
    rows = sweep_behavior(params, small_set, offsets=(0.0, 1.0), intents=("left",))
    assert rows[0].name == "baseline" and rows[0].percent_change == 0.0
    assert rows[1].risky == rows[0].risky
    assert [r.name for r in rows] == ["baseline", "agg+0", "agg+1", "intent:left"]


def test_risky_count_shrinks_with_threshold(params, small_set):
    inf = infer(params, small_set)
    counts = [sweep_behavior(params, None, (), (), thr, inference=inf)[0].risky for thr in (5.0, 2.0, 0.5, 0.1)]
    assert counts == sorted(counts, reverse=True)


def test_sweep_is_pure(params, small_set):
    a = [r.to_dict() for r in sweep_behavior(params, small_set)]
    b = [r.to_dict() for r in sweep_behavior(params, small_set)]
    assert a == b


def test_ego_is_never_modified(params, small_set):
    inf = infer(params, small_set)
    d0 = min_ego_distance(inf, params)
    d1 = min_ego_distance(inf, params, 0.0)
    np.testing.assert_array_equal(d0, d1)
    assert np.all(np.isfinite(d0))


# -- full report -------------------------------------------------------------------

def test_evaluate_report(params, small_set, tmp_path):
    rep = evaluate(params, small_set, config={"tag": "t"})
    m = rep.metrics
    for key in ("ade", "fde", "min_ade", "min_fde", "cv_ade", "intent_accuracy", "agg_mse", "agg_baseline_mse"):
        assert key in m
    assert m["min_fde"] <= m["fde"] + 1e-12
    for kind in ("most_likely", "six_mode"):
        c = rep.clusters[kind]
        assert c["0.01"] >= c["0.03"] >= c["0.05"]
    rep.to_json(tmp_path / "r.json")
    rep.to_csv(tmp_path / "r.csv")
    assert json.loads((tmp_path / "r.json").read_text())["config"]["tag"] == "t"
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "name,value,config_hash"
    assert all(line.endswith(rep.config_hash()) for line in lines[1:])


def test_per_scenario_min_fde_never_exceeds_single(params, small_set):
    inf = infer(params, small_set)
    cands = decode_modes(params, inf.codes)
    min_ade, min_fde = min_displacement(cands, inf.fut)
    fde1 = np.linalg.norm(cands[:, 0, -1] - inf.fut[:, -1], axis=-1)
    assert np.all(min_fde <= fde1)
    assert set(THRESHOLDS) == {0.05, 0.03, 0.01}
