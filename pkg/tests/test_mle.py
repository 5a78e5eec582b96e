import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from ancillary_pricing import ConvergenceError, DomainError, Logistic, Normal, Uniform, compute_constants
from ancillary_pricing import mle
from ancillary_pricing.market import IIDUnitBall
from ancillary_pricing.mle import EstimatorState, Tag

from conftest import ALL_KINDS

U = Uniform(-2, 2)
C_U = compute_constants(U, 0.1, 1.0, 0.5)


def _state(dim=2, dist=U, theta_bar=0.5):
    return mle.new_state(Tag.FOCAL, dim, 1.0, theta_bar, compute_constants(dist, 0.1, 1.0, theta_bar))


def _simulate(dist, theta, n, price=0.9, seed=0):
    rng = np.random.default_rng(seed)
    X = IIDUnitBall(len(theta)).sample_many(n, rng)
    d = (X @ theta + dist.sample(rng, n) >= price).astype(int)
    return X, d


def test_log_likelihood_examples():
    assert mle.log_likelihood(U, [], np.zeros(2)) == 0.0
    assert mle.log_likelihood(U, [(1.0, np.zeros(2), 1)], np.zeros(2)) == pytest.approx(math.log(0.25))
    assert mle.log_likelihood(U, [(1.0, np.zeros(2), 0)], np.zeros(2)) == pytest.approx(math.log(0.75))


def test_log_likelihood_outside_support_raises():
    with pytest.raises(DomainError):
        mle.log_likelihood(U, [(3.0, np.array([1.0, 0.0]), 1)], np.array([0.5, 0.0]))


@pytest.mark.parametrize("dist", ALL_KINDS, ids=lambda d: d.kind)
def test_log_likelihood_concave_on_segments(dist):
    X, d = _simulate(dist, np.array([0.3, -0.2]), 300)
    obs = [(0.9, x, y) for x, y in zip(X, d)]
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.uniform(-0.35, 0.35, (2, 2))
        mid = mle.log_likelihood(dist, obs, (a + b) / 2)
        avg = 0.5 * (mle.log_likelihood(dist, obs, a) + mle.log_likelihood(dist, obs, b))
        assert mid >= avg - 1e-9


@pytest.mark.parametrize("dist", ALL_KINDS, ids=lambda d: d.kind)
def test_objective_derivatives_match_finite_differences(dist):
    st_ = _state(dist=dist)
    X, d = _simulate(dist, np.array([0.3, -0.2]), 200)
    for x, y in zip(X, d):
        mle.update(st_, 0.9, x, y)
    theta = np.array([0.1, 0.05])
    val, g, H = mle.objective(st_, dist, theta)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        vp, gp, _ = mle.objective(st_, dist, theta + e)
        vm, gm, _ = mle.objective(st_, dist, theta - e)
        assert g[i] == pytest.approx((vp - vm) / (2 * h), rel=1e-5, abs=1e-6)
        np.testing.assert_allclose(H[:, i], (gp - gm) / (2 * h), rtol=1e-4, atol=1e-5)
    ref = -mle.log_likelihood(dist, st_, theta) + st_.lam * st_.nu * float(theta @ theta)
    assert val == pytest.approx(ref, rel=1e-12)


def test_fit_zero_observations():
    st_ = _state()
    np.testing.assert_array_equal(mle.fit(st_, U), np.zeros(2))


@pytest.mark.parametrize("dist", ALL_KINDS, ids=lambda d: d.kind)
def test_fit_matches_generic_constrained_solver(dist):
    theta_star = np.array([0.3, -0.2])
    st_ = _state(dist=dist)
    X, d = _simulate(dist, theta_star, 500, seed=4)
    for x, y in zip(X, d):
        mle.update(st_, 0.9, x, y)
    th = mle.fit(st_, dist)
    f = lambda t: mle.objective(st_, dist, t, need_derivs=False)[0]  # noqa: E731
    res = optimize.minimize(f, np.zeros(2), method="SLSQP", tol=1e-14,
                            constraints=[{"type": "ineq", "fun": lambda t: 0.25 - t @ t}])
    assert f(th) <= f(res.x) + 1e-9
    np.testing.assert_allclose(th, res.x, atol=1e-5)


def test_fit_on_ball_boundary():
    # data pushing the estimate far outside the ball: the fit must stay projected
    st_ = _state()
    x = np.array([1.0, 0.0])
    for _ in range(400):
        mle.update(st_, 0.9, x, 1)
    for _ in range(20):
        mle.update(st_, 0.9, -x, 0)
    th = mle.fit(st_, U)
    assert np.linalg.norm(th) <= 0.5 + 1e-12
    _, g, _ = mle.objective(st_, U, th)
    assert mle.gradient_mapping_norm(th, g, 0.5) <= 1e-8


def test_fit_warm_start_matches_cold_start():
    st_ = _state()
    X, d = _simulate(U, np.array([0.3, -0.2]), 1500, seed=2)
    for i, (x, y) in enumerate(zip(X, d)):
        mle.update(st_, 0.9, x, y)
        if i % 100 == 0:
            mle.fit(st_, U)
    warm = mle.fit(st_, U).copy()
    cold = _state()
    for x, y in zip(X, d):
        mle.update(cold, 0.9, x, y)
    np.testing.assert_allclose(warm, mle.fit(cold, U), atol=1e-8)


def test_fit_consistency_uniform():
    theta_star = np.array([0.3, -0.2])
    st_ = _state()
    X, d = _simulate(U, theta_star, 10_000, seed=11)
    for x, y in zip(X, d):
        mle.update(st_, 0.9, x, y)
    assert np.linalg.norm(mle.fit(st_, U) - theta_star) <= 0.1


def test_fit_reports_nonconvergence():
    st_ = _state()
    X, d = _simulate(U, np.array([0.3, -0.2]), 200)
    for x, y in zip(X, d):
        mle.update(st_, 0.9, x, y)
    with pytest.raises(ConvergenceError):
        mle.fit(st_, U, tol=0.0, max_iter=1)


def test_beta_radius_example():
    st_ = _state()
    beta = mle.beta_radius(st_, C_U, 100)
    assert C_U.ratio == pytest.approx(49.0, rel=1e-9)
    assert beta == pytest.approx(1 + 49 * math.sqrt(2 * math.log(100)), rel=1e-9)
    assert beta == pytest.approx(149.71, abs=0.01)


def test_beta_bar_example():
    b = mle.beta_bar(2, 100, 1.0, 0.5, C_U)
    assert b == pytest.approx(1 + 49 * math.sqrt(2 * math.log(100) + 2 * math.log(51)), rel=1e-12)
    assert b == pytest.approx(203.5, abs=0.1)


def test_beta_radius_grows_with_data():
    st_ = _state()
    b0 = mle.beta_radius(st_, C_U, 1000)
    mle.update(st_, 0.9, np.array([0.6, 0.8]), 1)
    assert mle.beta_radius(st_, C_U, 1000) > b0


def test_valuation_bounds_examples():
    st_ = EstimatorState(Tag.FOCAL, 2, 1.0, 0.5, sigma=4 * np.eye(2), theta_hat=np.array([0.3, 0.0]))
    ci = mle.valuation_bounds(st_, 1.0, np.array([1.0, 0.0]))
    assert (ci.lcb, ci.ucb) == pytest.approx((-0.2, 0.5))
    ci0 = mle.valuation_bounds(st_, 0.0, np.array([0.6, 0.8]))
    assert ci0.lcb == ci0.ucb == pytest.approx(0.18)
    z = mle.valuation_bounds(st_, 5.0, np.zeros(2))
    assert (z.lcb, z.ucb) == (0.0, 0.0)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.0, 10.0),
       st.floats(-1, 1), st.floats(-1, 1))
def test_valuation_bounds_contain_center_and_stay_in_ball(a, b, beta, x0, x1):
    x = np.array([x0, x1])
    if np.linalg.norm(x) > 1:
        x /= np.linalg.norm(x)
    th = np.array([a, b])
    if np.linalg.norm(th) > 0.5:
        th *= 0.5 / np.linalg.norm(th)
    st_ = EstimatorState(Tag.FOCAL, 2, 1.0, 0.5, sigma=np.array([[3.0, 0.5], [0.5, 2.0]]), theta_hat=th)
    ci = mle.valuation_bounds(st_, beta, x)
    c = float(x @ th)
    cap = 0.5 * np.linalg.norm(x)
    assert ci.lcb <= c + 1e-15 and c - 1e-15 <= ci.ucb
    assert -cap - 1e-12 <= ci.lcb and ci.ucb <= cap + 1e-12


def test_update_audit_and_zero_feature():
    st_ = _state(dim=3)
    rng = np.random.default_rng(0)
    for x in IIDUnitBall(3).sample_many(200, rng):
        mle.update(st_, 0.5, x, int(rng.random() < 0.5))
    assert st_.audit()
    before = st_.sigma.copy()
    mle.update(st_, 0.5, np.zeros(3), 1)
    np.testing.assert_array_equal(st_.sigma, before)


def test_updates_commute():
    a, b = _state(), _state()
    x1, x2 = np.array([0.3, 0.4]), np.array([-0.7, 0.1])
    mle.update(a, 0.5, x1, 1)
    mle.update(a, 0.6, x2, 0)
    mle.update(b, 0.6, x2, 0)
    mle.update(b, 0.5, x1, 1)
    np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-15)
    np.testing.assert_allclose(a.sigma_inv, b.sigma_inv, atol=1e-12)


def test_in_confidence_set():
    st_ = EstimatorState(Tag.FOCAL, 2, 1.0, 0.5, sigma=4 * np.eye(2), theta_hat=np.zeros(2))
    assert mle.in_confidence_set(st_, np.array([0.5, 0.0]), 1.0)
    assert not mle.in_confidence_set(st_, np.array([0.5, 0.0]), 0.99)


@pytest.mark.parametrize("d", [2, 5])
def test_elliptical_potential_bound(d):
    rng = np.random.default_rng(d)
    for _ in range(10):
        z = rng.standard_normal((1000, d))
        X = z / np.linalg.norm(z, axis=1, keepdims=True)
        total, bound = mle.elliptical_potential(X)
        assert total <= bound


def test_alt_ancillary_estimate():
    b = EstimatorState(Tag.BUNDLE, 2, theta_hat=np.array([0.4, 0.0]))
    f = EstimatorState(Tag.FOCAL, 2, theta_hat=np.array([0.3, -0.2]))
    np.testing.assert_allclose(mle.alt_ancillary_estimate(b, f), [0.1, 0.2])


@pytest.mark.parametrize("dist", [Normal(0, 1), Logistic(0, 1)], ids=["normal", "logistic"])
def test_fit_consistency_unbounded_shocks(dist):
    theta_star = np.array([0.3, -0.2])
    st_ = _state(dist=dist)
    X, d = _simulate(dist, theta_star, 5000, seed=9)
    for x, y in zip(X, d):
        mle.update(st_, 0.9, x, y)
    assert np.linalg.norm(mle.fit(st_, dist) - theta_star) <= 0.2
