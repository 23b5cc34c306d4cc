"""Posterior functionals: curves, restricted means, and summaries."""

import numpy as np
import pytest
from scipy.integrate import quad

from splinehaz.basis import SplineConfig
from splinehaz.estimands import (
    EstimandSummary,
    cumhaz_draws,
    eta_draws,
    hazard_draws,
    hazard_ratio_draws,
    rmst_draws,
    rmstd_draws,
    summarize,
    survival_draws,
)
from splinehaz.model import ModelSpec, ParamVector, hazard, survival

CONFIG = SplineConfig(df=5, interior_knots=(1.0, 2.5, 3.8),
                      boundary_knots=(0.0, 5.0), bsmooth=True)


def fake_draws(spec, n, seed=0, scale=0.4):
    rng = np.random.default_rng(seed)
    return rng.normal(scale=scale, size=(n, ParamVector(spec).size))


def test_summarize_basic():
    s = summarize(np.array([1.0, 2.0, 3.0]), name="thing")
    assert isinstance(s, EstimandSummary)
    assert s.name == "thing"
    assert s.point == 2.0
    assert s.sd == pytest.approx(1.0)
    assert s.ci_low < s.point < s.ci_high


def test_summarize_constant_has_zero_width():
    s = summarize(np.full(50, 3.25))
    assert s.point == 3.25
    assert s.sd == 0.0
    assert s.ci_high - s.ci_low == 0.0


def test_summarize_normal_quantiles():
    rng = np.random.default_rng(123)
    s = summarize(rng.standard_normal(10000))
    assert s.ci_low == pytest.approx(-1.96, abs=0.05)
    assert s.ci_high == pytest.approx(1.96, abs=0.05)
    assert s.sd == pytest.approx(1.0, abs=0.03)


def test_summarize_needs_two_samples():
    with pytest.raises(ValueError):
        summarize(np.array([1.0]))


def test_survival_is_exp_of_cumhaz():
    spec = ModelSpec(config=CONFIG)
    draws = fake_draws(spec, 7)
    t = np.array([0.5, 2.0, 4.5, 6.0])
    s = survival_draws(spec, draws, t)
    big_h = cumhaz_draws(spec, draws, t)
    assert s.shape == (7, 4)
    assert np.allclose(s, np.exp(-big_h))


def test_draw_curves_match_single_theta_functions():
    spec = ModelSpec(config=CONFIG, mode="ph", ncov=1)
    draws = fake_draws(spec, 3)
    t = np.array([0.7, 3.3])
    x = np.array([0.6])
    h = hazard_draws(spec, draws, t, x)
    s = survival_draws(spec, draws, t, x)
    for j in range(3):
        assert np.allclose(h[j], hazard(spec, draws[j], t, x))
        assert np.allclose(s[j], survival(spec, draws[j], t, x))


def test_ph_hazard_ratio_equals_exp_beta():
    spec = ModelSpec(config=CONFIG, mode="ph", ncov=1)
    draws = fake_draws(spec, 9)
    pv = ParamVector(spec)
    t = np.linspace(0.2, 4.8, 6)
    hr = hazard_ratio_draws(spec, draws, t, x1=np.array([1.0]),
                            x0=np.array([0.0]))
    expected = np.exp(draws[:, pv.sl_beta])
    assert np.allclose(hr, expected, rtol=1e-12)


def test_eta_draws_exponentiates_linear_predictor():
    spec = ModelSpec(config=CONFIG, mode="ph", ncov=2)
    draws = fake_draws(spec, 4)
    pv = ParamVector(spec)
    x = np.array([0.5, -1.0])
    expected = np.exp(draws[:, 0] + draws[:, pv.sl_beta] @ x)
    assert np.allclose(eta_draws(spec, draws, x), expected)


def test_rmst_matches_adaptive_quadrature():
    spec = ModelSpec(config=CONFIG)
    draws = fake_draws(spec, 4)
    for horizon in (3.0, 5.0, 7.0):
        got = rmst_draws(spec, draws, horizon)
        for j in range(4):
            ref, err = quad(lambda u: survival(spec, draws[j],
                                               np.array([u]))[0],
                            0.0, horizon, epsabs=1e-10, limit=200)
            assert got[j] == pytest.approx(ref, abs=1e-6)


def test_rmst_node_refinement_converged():
    spec = ModelSpec(config=CONFIG)
    draws = fake_draws(spec, 6)
    a = rmst_draws(spec, draws, 5.0, n_nodes=100)
    b = rmst_draws(spec, draws, 5.0, n_nodes=400)
    assert np.allclose(a, b, atol=1e-8)


def test_rmst_bounded_and_monotone():
    spec = ModelSpec(config=CONFIG)
    draws = fake_draws(spec, 5)
    prev = np.zeros(5)
    for horizon in (1.0, 2.0, 4.0, 6.0):
        r = rmst_draws(spec, draws, horizon)
        assert np.all(r <= horizon)
        assert np.all(r >= prev)
        prev = r


def test_rmstd_antisymmetry():
    spec = ModelSpec(config=CONFIG, mode="nonph", ncov=1)
    draws = fake_draws(spec, 8)
    x1, x0 = np.array([1.0]), np.array([0.0])
    d10 = rmstd_draws(spec, draws, 5.0, x1, x0)
    d01 = rmstd_draws(spec, draws, 5.0, x0, x1)
    assert np.array_equal(d10, -d01)


def test_posterior_rmst_near_truth(exp_spec, exp_mcmc):
    # the session fixture fits an exponential with rate 0.2 censored at 5
    truth = (1.0 - np.exp(-1.0)) / 0.2
    r = rmst_draws(exp_spec, exp_mcmc.draws, 5.0)
    s = summarize(r, name="rmst")
    assert abs(s.point - truth) / truth < 0.1
    assert s.ci_low < truth < s.ci_high
