import numpy as np
import pytest

from ancillary_pricing import (EpisodeError, FixedSequence, IIDGaussianNormalized, IIDUnitBall,
                               MarketInstance, PointMass, PriceBox, PricingModel, Strategy, Uniform,
                               UnsupportedError, ValidationError, run_episode)
from ancillary_pricing.market import (compute_q_star, episode_streams, fixed_best_strategy, gen_feature,
                                      per_period_regret, realize_demand, write_feature_file)
from ancillary_pricing.policies import OracleMode, PolicyDecision, PolicyKind
from ancillary_pricing.pricing import ShockTriple, expected_revenue_bundled, expected_revenue_unbundled, optimal_strategy

U = Uniform(-2, 2)
TRIPLE = ShockTriple(U, U, U)
BOX = PriceBox(0.1, 1.0)


def _instance(source=None, theta_f=(0.3, -0.2), theta_a=(0.1, 0.2), dists=TRIPLE):
    return MarketInstance(np.array(theta_f), np.array(theta_a), dists, BOX, 0.5, source or IIDUnitBall(2))


def test_instance_norm_checks():
    with pytest.raises(ValidationError):
        _instance(theta_f=(0.6, 0.0))
    with pytest.raises(ValidationError):
        _instance(theta_f=(0.3, 0.0), theta_a=(0.3, 0.0))  # bundle coefficients leave the ball
    inst = _instance()
    np.testing.assert_allclose(inst.theta_b, [0.4, 0.0])


@pytest.mark.parametrize("source", [IIDUnitBall(3), IIDGaussianNormalized(3)], ids=["ball", "gauss"])
def test_iid_sources_are_seeded_and_bounded(source):
    a = [gen_feature(source, t, np.random.default_rng(4)) for t in range(1, 4)]
    b = [gen_feature(source, t, np.random.default_rng(4)) for t in range(1, 4)]
    np.testing.assert_array_equal(a, b)
    X = source.sample_many(100_000, np.random.default_rng(1))
    assert np.linalg.norm(X, axis=1).max() <= 1 + 1e-12
    assert np.linalg.eigvalsh(X.T @ X / len(X)).min() > 0


def test_fixed_sequence_replays_rows(tmp_path):
    rows = np.array([[0.1, 0.2], [-0.3, 0.4], [0.0, -1.0]])
    path = write_feature_file(tmp_path / "f.csv", rows)
    src = FixedSequence(str(path))
    for t in (1, 2, 3):
        np.testing.assert_array_equal(gen_feature(src, t, None), rows[t - 1])
    with pytest.raises(ValidationError):
        gen_feature(src, 4, None)
    with pytest.raises(UnsupportedError):
        compute_q_star(_instance(src), 10_000, np.random.default_rng(0))


def test_fixed_sequence_rejects_long_rows(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0.9,0.9\n")
    with pytest.raises(ValidationError):
        FixedSequence(str(p))


def test_realize_demand_examples():
    inst = _instance(PointMass((0.0, 0.0)))
    dec = PolicyDecision(Strategy.UNBUNDLE, p_f=0.875, p_a=1.0)
    x = np.zeros(2)
    assert realize_demand(inst, dec, x, quantiles=(0.9, 0.0, 0.0, 0.0))[0] == 1
    assert realize_demand(inst, dec, x, quantiles=(0.5, 0.9, 0.0, 0.0)) == (0, 0, None)
    d = realize_demand(inst, PolicyDecision(Strategy.BUNDLE, p_b=0.5), x, quantiles=(0.1, 0.1, 0.9, 0.9))
    assert d[0] is None and d[1] is None and d[2] == 1


def test_demand_frequencies_match_probabilities():
    inst = _instance()
    x = np.array([0.6, 0.3])
    v_f, v_a = inst.valuations(x)
    dec = PolicyDecision(Strategy.UNBUNDLE, p_f=0.7, p_a=0.6)
    rng = np.random.default_rng(8)
    n = 100_000
    d = np.array([realize_demand(inst, dec, x, rng)[:2] for _ in range(n)])
    pf = float(U.sf(0.7 - v_f))
    assert abs(d[:, 0].mean() - pf) < 3 * np.sqrt(pf * (1 - pf) / n)
    assert not np.any((d[:, 0] == 0) & (d[:, 1] == 1))
    pa = float(U.sf(0.6 - v_a))
    buy = d[d[:, 0] == 1, 1]
    assert abs(buy.mean() - pa) < 3 * np.sqrt(pa * (1 - pa) / len(buy))


def test_convolved_bundle_demand_frequency():
    from ancillary_pricing import convolve
    dists = ShockTriple(U, U, convolve(U, U))
    inst = _instance(dists=dists)
    x = np.array([0.5, 0.5])
    v_b = float(x @ inst.theta_b)
    dec = PolicyDecision(Strategy.BUNDLE, p_b=0.9)
    rng = np.random.default_rng(2)
    n = 100_000
    d = np.array([realize_demand(inst, dec, x, rng)[2] for _ in range(n)])
    p = float(dists.bundle.sf(0.9 - v_b))
    assert abs(d.mean() - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_regret_example():
    model = PricingModel(TRIPLE, BOX)
    dec = PolicyDecision(Strategy.UNBUNDLE, p_f=1.0, p_a=1.0)
    reg, sreg = per_period_regret(model, dec, 0.0, 0.0, OracleMode.PURE_UNBUNDLE)
    assert reg == pytest.approx(0.00390625, abs=1e-10)
    assert sreg == 0.0


def test_regret_of_oracle_is_zero_and_strategy_term():
    model = PricingModel(TRIPLE, BOX)
    q = optimal_strategy(TRIPLE, 0.2, 0.1, BOX)
    dec = PolicyDecision(q.strategy, q.p_f, q.p_a, q.p_b)
    assert per_period_regret(model, dec, 0.2, 0.1, OracleMode.PER_CUSTOMER)[0] == pytest.approx(0, abs=1e-10)
    wrong = PolicyDecision(Strategy.BUNDLE, p_b=model.price("b", 0.3))
    reg, sreg = per_period_regret(model, wrong, 0.2, 0.1, OracleMode.PER_CUSTOMER)
    assert sreg == pytest.approx(abs(q.revenue_unbundled - q.revenue_bundled), abs=1e-9)
    assert reg == pytest.approx(sreg, abs=1e-9)


def test_q_star_point_mass_example():
    inst = _instance(PointMass((0.0, 0.0)))
    q, se = compute_q_star(inst, 10_000, np.random.default_rng(0))
    assert q == pytest.approx(0.28125, abs=1e-9)
    assert se == pytest.approx(0.0, abs=1e-12)


def test_q_star_standard_error_scaling():
    inst = _instance()
    q1, se1 = compute_q_star(inst, 20_000, np.random.default_rng(0))
    q2, se2 = compute_q_star(inst, 40_000, np.random.default_rng(1))
    assert 0 <= q1 <= 1 and 0 <= q2 <= 1
    ratio = se1 / se2
    assert np.sqrt(2) / 3 <= ratio <= 3 * np.sqrt(2)
    with pytest.raises(ValidationError):
        compute_q_star(inst, 100, np.random.default_rng(0))


def test_fixed_best_on_bundle_favoring_instance():
    from ancillary_pricing import Normal
    dists = ShockTriple(Normal(0, 1), Normal(0.5, 1), Normal(0.5, np.sqrt(2)))
    inst = MarketInstance(np.array([0.3, -0.2]), np.array([0.1, 0.2]), dists, PriceBox(0.1, 3.0), 0.5,
                          IIDUnitBall(2))
    strat, mu_u, mu_b = fixed_best_strategy(inst, PricingModel(dists, inst.box))
    assert strat is Strategy.BUNDLE and mu_b - mu_u >= 0.1


@pytest.mark.parametrize("kind", ["oracle_unbundle", "oracle_per_customer", "oracle_fixed_best"])
def test_oracle_episodes_have_zero_regret(kind):
    res = run_episode(_instance(), kind, 50, 0)
    assert np.abs(res.exp_regret).max() <= 1e-12
    r1 = run_episode(_instance(), kind, 1, 0)
    assert r1.cumulative_regret == 0.0


@pytest.mark.parametrize("kind", ["alg1", "alg2", "alg3"])
def test_episode_determinism(kind):
    a = run_episode(_instance(), kind, 150, 3)
    b = run_episode(_instance(), kind, 150, 3)
    assert a.identical(b)
    c = run_episode(_instance(), kind, 150, 4)
    assert not a.identical(c)


@pytest.mark.parametrize("kind", ["alg1", "alg2"])
def test_episode_regret_accounting_audit(kind):
    inst = _instance()
    T = 300
    res = run_episode(inst, kind, T, 11)
    feat_rng, _ = episode_streams(11)
    bench = pol = 0.0
    for i in range(T):
        x = gen_feature(inst.source, i + 1, feat_rng)
        v_f, v_a = inst.valuations(x)
        q = optimal_strategy(TRIPLE, v_f, v_a, BOX)
        bench += q.revenue_unbundled if res.benchmark == "pure_unbundle" else q.expected_revenue
        if res.strategy[i] == "u":
            pol += expected_revenue_unbundled(U, U, res.p_f[i], res.p_a[i], v_f, v_a)
        else:
            pol += float(expected_revenue_bundled(U, res.p_b[i], v_f + v_a))
    assert res.cumulative_regret == pytest.approx(bench - pol, abs=1e-6)
    assert res.exp_regret.min() >= -1e-9


def test_episode_records_and_counts():
    res = run_episode(_instance(), "alg2", 400, 5)
    assert np.all(np.diff(res.n_focal) >= 0)
    assert res.n_focal[-1] == res.ancillary_count
    unb = res.strategy == "u"
    assert np.all(res.d_b[unb] == -1) and np.all(np.isnan(res.p_b[unb]))
    assert np.all(res.d_f[~unb] == -1) and np.all(np.isnan(res.p_f[~unb]))
    assert not np.any((res.d_f == 0) & (res.d_a == 1))
    assert res.lcb_violations() == 0


def test_alg1_standard_regret_trivially_bounded():
    T = 10_000
    res = run_episode(_instance(), "alg1", T, 0)
    assert np.isfinite(res.cumulative_regret) and res.cumulative_regret < 2 * BOX.p_high * T
    assert res.good_event_held


def test_episode_errors_carry_period(tmp_path):
    path = write_feature_file(tmp_path / "short.csv", np.zeros((3, 2)))
    with pytest.raises(EpisodeError) as info:
        run_episode(_instance(FixedSequence(str(path))), "alg1", 5, 0)
    assert info.value.period == 4


def test_unknown_policy_rejected():
    with pytest.raises(ValueError):
        run_episode(_instance(), "alg9", 5, 0)
