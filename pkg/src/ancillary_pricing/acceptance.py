"""Acceptance suite: twelve numbered checks with fixed tolerances.

Used by ``ancillary-bench accept`` and ``tests/test_acceptance.py``.  The
episode-based checks share one :class:`AcceptanceRun` so that the LCB
dominance check can inspect every learning episode the suite simulates.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import mle, pricing
from .bench import (ExperimentResult, aggregate, concave_in_T, fit_regret_slope, run_experiment,
                    write_aggregate_csv)
from .config import ExperimentConfig, ShockSpec, load_config, save_config
from .market import IIDUnitBall, fixed_best_strategy, write_feature_file
from .pricing import PricingModel
from .shocks import Logistic, Normal, Uniform, compute_constants

SLOPE_MAX = 0.65
COVERAGE_MIN = 0.95
MISMATCH_MAX = 0.05
SWITCH_RATE_MIN = 0.90
GAP_MIN = 0.1

UNIFORM = ShockSpec("uniform", (("lo", -2.0), ("hi", 2.0)))


def _normal(mean: float) -> ShockSpec:
    return ShockSpec("normal", (("mean", mean), ("sd", 1.0)))


# standard scenario: d=2, Uniform(-2,2) shocks, theta_bar 0.5, box [0.1, 1]
STANDARD = ExperimentConfig(
    theta_f=(0.3, -0.2), theta_a=(0.1, 0.2), theta_bar=0.5, p_low=0.1, p_high=1.0,
    focal=UNIFORM, ancillary=UNIFORM, bundle=None, policies=("alg1",), horizons=(2000,), seeds=(0,))

# Normal shocks whose means act as valuation intercepts; the bundle shock is
# their convolution.  Prices up to 3 keep every optimum interior.
MIXED = replace(STANDARD, theta_f=(0.5, 0.0), theta_a=(-0.5, 0.0), p_high=3.0,
                focal=_normal(0.5), ancillary=_normal(0.0), policies=("alg2",))
BUNDLE_DOMINANT = replace(STANDARD, p_high=3.0, focal=_normal(0.0), ancillary=_normal(0.5),
                          policies=("alg3",))
UNBUNDLE_DOMINANT = replace(STANDARD, p_high=3.0, focal=_normal(0.5), ancillary=_normal(-1.0),
                            policies=("alg3",))

HORIZONS_SCALING = (1_000, 10_000, 100_000)
SEEDS_20 = tuple(range(20))


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d}. {self.name}: {self.detail}"


def adversarial_features(T: int, theta_f, theta_a) -> np.ndarray:
    """Unit-norm features that keep LCB pricing maximally conservative.

    Each feature points near the direction that raises the focal valuation
    and lowers the ancillary one, so the lower focal bound and upper
    ancillary bound sit as far from the truth as the ball allows.  The
    direction drifts slowly so new directions keep appearing.
    """
    w = np.asarray(theta_f, float) - np.asarray(theta_a, float)
    psi0 = math.atan2(w[1], w[0])
    t = np.arange(1, T + 1)
    psi = psi0 + 0.6 * np.sin(0.5 * np.sqrt(t))
    return np.column_stack([np.cos(psi), np.sin(psi)])


class AcceptanceRun:
    """Runs criteria on demand and caches the shared episode results."""

    def __init__(self, workers: int = 1, work_dir=None):
        self.workers = workers
        self._tmp = None
        if work_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="accept-")
            work_dir = self._tmp.name
        self.work_dir = Path(work_dir)
        self.work_dir.mkdir(parents=True, exist_ok=True)
        self.experiments: dict[str, ExperimentResult] = {}
        self.results: dict[int, CriterionResult] = {}

    def experiment(self, name: str, cfg: ExperimentConfig) -> ExperimentResult:
        if name not in self.experiments:
            self.experiments[name] = run_experiment(cfg, workers=self.workers)
        return self.experiments[name]

    def run(self, number: int) -> CriterionResult:
        if number not in self.results:
            fn = CRITERIA[number]
            t0 = time.perf_counter()
            res = fn(self)
            res.seconds = time.perf_counter() - t0
            self.results[number] = res
        return self.results[number]

    def run_all(self, numbers=None, log=None) -> list[CriterionResult]:
        out = []
        for n in numbers or sorted(CRITERIA):
            res = self.run(n)
            if log is not None:
                log(res.line())
            out.append(res)
        return out

    def close(self):
        if self._tmp is not None:
            self._tmp.cleanup()


def _failures_detail(result: ExperimentResult) -> str:
    fails = result.failures
    return "" if not fails else f"; {len(fails)} episode(s) failed: {fails[0].error}"


# -- 1-3: pricing oracle --------------------------------------------------------------------


def _random_dist(rng):
    k = rng.integers(3)
    if k == 0:
        return Uniform(float(rng.uniform(-3, -2)), float(rng.uniform(2, 3)))
    if k == 1:
        return Normal(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.5, 2.0)))
    return Logistic(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.3, 1.5)))


def criterion_1(run: AcceptanceRun) -> CriterionResult:
    rng = np.random.default_rng(101)
    grid = np.linspace(0.0, 8.0, 100_000)
    worst_p = worst_r = 0.0
    bad = 0
    for _ in range(100):
        dist = _random_dist(rng)
        v = float(rng.uniform(-1, 1))
        p = pricing.optimal_price_single(dist, v).price
        r = float(pricing.expected_revenue_bundled(dist, p, v))
        rev = grid * dist.sf(grid - v)
        i = int(np.argmax(rev))
        dp, dr = abs(p - grid[i]), abs(r - rev[i])
        worst_p, worst_r = max(worst_p, dp), max(worst_r, dr)
        bad += dp > 1e-4 or dr > 1e-6
    return CriterionResult(1, "oracle equivalence", bad == 0,
                           f"{bad}/100 mismatches; max |dp|={worst_p:.2e}, max |dr|={worst_r:.2e}",
                           metrics={"max_dp": worst_p, "max_dr": worst_r})


def criterion_2(run: AcceptanceRun) -> CriterionResult:
    h = 1e-5
    v = np.linspace(-1.5, 1.5, 1000)
    lo_hi = []
    bad = 0
    for dist in (Uniform(-2, 2), Normal(0, 1), Logistic(0, 1)):
        s = (pricing.g_fn(dist, v + h) - pricing.g_fn(dist, v - h)) / (2 * h)
        bad += int(np.count_nonzero((s <= 1e-6) | (s >= 1 - 1e-6)))
        lo_hi.append(f"{dist.kind} [{s.min():.4f}, {s.max():.4f}]")
    return CriterionResult(2, "g slope in (0,1)", bad == 0, f"{bad} violations; " + ", ".join(lo_hi))


def lipschitz_violations(dist, n: int, rng, theta_bar: float = 0.5, p_high: float = 1.0,
                         p_low: float = 0.1, slack: float = 1e-9) -> dict:
    """Violation counts for the four revenue inequalities on ``n`` random tuples."""
    eta = compute_constants(dist, p_low, p_high, theta_bar).eta
    v = rng.uniform(-theta_bar, theta_bar, (4, n))
    ra = rng.uniform(0, p_high, (2, n))
    g = lambda x: pricing.g_fn(dist, x)  # noqa: E731
    r_opt = lambda x: pricing.optimal_revenue_single(dist, x)  # noqa: E731
    out = {}
    out["revenue_lipschitz"] = int(np.count_nonzero(
        np.abs(r_opt(v[0]) - r_opt(v[1])) > np.abs(v[0] - v[1]) + slack))
    out["price_lipschitz"] = int(np.count_nonzero(np.abs(g(v[0]) - g(v[1])) > np.abs(v[0] - v[1]) + slack))
    pf = lambda vf, r: g(vf + r) - r  # noqa: E731
    out["focal_price_lipschitz"] = int(np.count_nonzero(
        np.abs(pf(v[0], ra[0]) - pf(v[1], ra[1])) > np.abs(v[0] - v[1]) + 2 * np.abs(ra[0] - ra[1]) + slack))
    vf, va, vf2, va2 = v
    ra_true = r_opt(va)
    ru = (pf(vf, ra_true) + ra_true) * dist.sf(pf(vf, ra_true) - vf)
    ra2 = r_opt(va2)
    ru2 = pricing.expected_revenue_unbundled(dist, dist, pf(vf2, ra2), g(va2), vf, va)
    out["quadratic_gap"] = int(np.count_nonzero(
        ru - ru2 > 9 * eta * ((vf - vf2) ** 2 + (va - va2) ** 2) + slack))
    return out


def criterion_3(run: AcceptanceRun) -> CriterionResult:
    rng = np.random.default_rng(303)
    total = 0
    parts = []
    for dist in (Uniform(-2, 2), Normal(0, 1), Logistic(0, 1)):
        viol = lipschitz_violations(dist, 10_000, rng)
        total += sum(viol.values())
        parts.append(f"{dist.kind} {sum(viol.values())}")
    return CriterionResult(3, "revenue Lipschitz and quadratic bounds", total == 0,
                           f"{total} violations over 4 inequalities x 3 kinds x 1e4 tuples ({', '.join(parts)})")


# -- 4-9: episodes ---------------------------------------------------------------------------


def coverage_config() -> ExperimentConfig:
    return replace(STANDARD, horizons=(2000,), seeds=tuple(range(200)))


def criterion_4(run: AcceptanceRun) -> CriterionResult:
    res = run.experiment("coverage", coverage_config())
    ok = [s for s in res.summaries.values() if s.ok]
    rate = float(np.mean([s.good_event_held for s in ok])) if ok else 0.0
    passed = rate >= COVERAGE_MIN and not res.failures
    return CriterionResult(4, "confidence coverage", passed,
                           f"good event held in {rate:.1%} of {len(ok)} seeds (need >= 95%)"
                           + _failures_detail(res), metrics={"rate": rate})


def scaling_config() -> ExperimentConfig:
    return replace(STANDARD, horizons=HORIZONS_SCALING, seeds=SEEDS_20)


def adversarial_config(work_dir: Path) -> ExperimentConfig:
    path = work_dir / "adversarial_features.csv"
    if not path.exists():
        write_feature_file(path, adversarial_features(max(HORIZONS_SCALING), STANDARD.theta_f,
                                                      STANDARD.theta_a))
    return replace(scaling_config(), features="fixed_sequence", feature_file=str(path))


def _mean_series(result: ExperimentResult, policy: str):
    rows = [r for r in aggregate(result) if r.policy == policy]
    return [(r.T, r.mean_regret) for r in rows]


def _safe_slope(series):
    try:
        return fit_regret_slope(series)
    except Exception:  # DegenerateError
        return math.nan


def criterion_6(run: AcceptanceRun) -> CriterionResult:
    res = run.experiment("scaling_iid", scaling_config())
    series = _mean_series(res, "alg1")
    slope = _safe_slope(series)
    concave = concave_in_T(series)
    passed = slope <= SLOPE_MAX and concave and not res.failures
    means = ", ".join(f"T={T}: {m:.1f}" for T, m in series)
    return CriterionResult(6, "sublinear regret (LCB unbundling)", passed,
                           f"slope {slope:.3f} (need <= {SLOPE_MAX}), concave={concave}; mean regret {means}"
                           + _failures_detail(res), metrics={"slope": slope, "series": series})


def criterion_7(run: AcceptanceRun) -> CriterionResult:
    iid = run.experiment("scaling_iid", scaling_config())
    adv = run.experiment("scaling_adversarial", adversarial_config(run.work_dir))
    s_iid = _safe_slope(_mean_series(iid, "alg1"))
    s_adv = _safe_slope(_mean_series(adv, "alg1"))
    passed = s_iid < SLOPE_MAX and s_iid < s_adv and not iid.failures and not adv.failures
    return CriterionResult(7, "i.i.d. improvement direction", passed,
                           f"i.i.d. slope {s_iid:.3f} (need < {SLOPE_MAX}) vs fixed-sequence slope {s_adv:.3f}"
                           + _failures_detail(adv), metrics={"iid": s_iid, "adversarial": s_adv})


def mixed_config() -> ExperimentConfig:
    return replace(MIXED, horizons=(20_000,), seeds=SEEDS_20)


def criterion_8(run: AcceptanceRun) -> CriterionResult:
    cfg = mixed_config()
    inst = cfg.instance()
    model = PricingModel(inst.dists, inst.box)
    X = IIDUnitBall(inst.dim).sample_many(100_000, np.random.default_rng(8))
    v_f, v_a = X @ inst.theta_f, X @ inst.theta_a
    frac_b = float(np.mean(model.r_b_many(v_f + v_a) > model.r_u_many(v_f, v_a)))
    res = run.experiment("mixed", cfg)
    ok = [s for s in res.summaries.values() if s.ok]
    mismatch = float(np.mean([s.mismatch_tail for s in ok])) if ok else math.nan
    cps = np.array(ok[0].checkpoints) if ok else np.array([])
    curve = np.mean([s.strategy_regret_curve for s in ok], axis=0) if ok else np.array([])
    keep = cps >= cfg.horizons[0] // 100
    slope = _safe_slope(list(zip(cps[keep], curve[keep])))
    passed = mismatch <= MISMATCH_MAX and slope <= SLOPE_MAX and not res.failures
    return CriterionResult(8, "confidence-based strategy learning", passed,
                           f"{frac_b:.1%} of features favor bundling; final-10% mismatch {mismatch:.1%} "
                           f"(need <= 5%); strategy-regret slope {slope:.3f} (need <= {SLOPE_MAX})"
                           + _failures_detail(res),
                           metrics={"mismatch": mismatch, "slope": slope, "frac_bundle": frac_b})


def one_switch_configs() -> tuple[ExperimentConfig, ExperimentConfig]:
    seeds = tuple(range(50))
    return (replace(BUNDLE_DOMINANT, horizons=(20_000,), seeds=seeds),
            replace(UNBUNDLE_DOMINANT, horizons=(20_000,), seeds=seeds))


def criterion_9(run: AcceptanceRun) -> CriterionResult:
    cfg_b, cfg_u = one_switch_configs()
    T = cfg_b.horizons[0]
    gaps = []
    for cfg in (cfg_b, cfg_u):
        inst = cfg.instance()
        _, mu_u, mu_b = fixed_best_strategy(inst, PricingModel(inst.dists, inst.box))
        gaps.append(mu_b - mu_u)
    res_b = run.experiment("bundle_dominant", cfg_b)
    res_u = run.experiment("unbundle_dominant", cfg_u)
    ok_b = [s for s in res_b.summaries.values() if s.ok]
    ok_u = [s for s in res_u.summaries.values() if s.ok]
    early = float(np.mean([s.switch_time is not None and s.switch_time < T / 2 for s in ok_b]))
    never = float(np.mean([s.switch_time is None for s in ok_u]))
    monotone = all(s.switch_monotone for s in ok_b + ok_u)
    passed = (early >= SWITCH_RATE_MIN and never >= SWITCH_RATE_MIN and monotone
              and gaps[0] >= GAP_MIN and gaps[1] <= -GAP_MIN and not res_b.failures and not res_u.failures)
    return CriterionResult(9, "one-switch correctness", passed,
                           f"bundle-dominant (gap {gaps[0]:+.3f}): switched before T/2 in {early:.0%}; "
                           f"unbundle-dominant (gap {gaps[1]:+.3f}): never switched in {never:.0%}; "
                           f"monotone in all episodes={monotone}",
                           metrics={"early": early, "never": never, "gaps": gaps})


def criterion_5(run: AcceptanceRun) -> CriterionResult:
    # every other episode-based criterion feeds this one
    for n in (4, 6, 7, 8, 9):
        run.run(n)
    episodes = 0
    violations = 0
    for res in run.experiments.values():
        for s in res.summaries.values():
            if s.ok:
                episodes += 1
                violations += s.lcb_violations
    return CriterionResult(5, "LCB dominance", violations == 0 and episodes > 0,
                           f"{violations} violations over {episodes} episodes")


# -- 10-12 ------------------------------------------------------------------------------------


def _unit_rows(rng, T, d):
    z = rng.standard_normal((T, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def criterion_10(run: AcceptanceRun) -> CriterionResult:
    rng = np.random.default_rng(1010)
    bad = 0
    worst = 0.0
    for d in (2, 5):
        for _ in range(50):
            total, bound = mle.elliptical_potential(_unit_rows(rng, 1000, d))
            bad += total > bound
            worst = max(worst, total / bound)
    return CriterionResult(10, "elliptical potential", bad == 0,
                           f"{bad}/100 violations; max sum/bound = {worst:.3f}")


def consistency_errors(n: int, seed: int, price: float = 0.9) -> float:
    """Estimation error of the focal coefficients from ``n`` fixed-price observations."""
    dist = Uniform(-2, 2)
    theta = np.array(STANDARD.theta_f)
    rng = np.random.default_rng([1111, n, seed])
    X = IIDUnitBall(2).sample_many(n, rng)
    eps = dist.sample(rng, n)
    d = (X @ theta + eps >= price).astype(int)
    consts = compute_constants(dist, STANDARD.p_low, STANDARD.p_high, STANDARD.theta_bar)
    st = mle.new_state("focal", 2, 1.0, STANDARD.theta_bar, consts)
    for x, y in zip(X, d):
        mle.update(st, price, x, y)
    mle.fit(st, dist)
    return float(np.linalg.norm(st.theta_hat - theta))


def criterion_11(run: AcceptanceRun) -> CriterionResult:
    ns = (100, 1_000, 10_000)
    med = [float(np.median([consistency_errors(n, s) for s in range(20)])) for n in ns]
    passed = med[0] > med[1] > med[2] and med[2] <= 0.1
    return CriterionResult(11, "MLE consistency", passed,
                           "median error " + ", ".join(f"n={n}: {m:.4f}" for n, m in zip(ns, med)),
                           metrics={"median": med})


def determinism_config() -> ExperimentConfig:
    return replace(STANDARD, policies=("alg1", "alg2", "alg3", "oracle_per_customer"),
                   horizons=(300, 1000), seeds=(0, 1, 2))


def criterion_12(run: AcceptanceRun) -> CriterionResult:
    cfg_path = save_config(determinism_config(), run.work_dir / "determinism.ini")
    blobs = []
    for i, workers in enumerate((1, max(2, run.workers))):
        cfg = load_config(cfg_path)
        res = run_experiment(cfg, workers=workers)
        path = write_aggregate_csv(aggregate(res), run.work_dir / f"determinism_{i}.csv")
        blobs.append(path.read_bytes())
    same = blobs[0] == blobs[1]
    return CriterionResult(12, "determinism", same,
                           f"aggregate CSVs {'byte-identical' if same else 'differ'} across two runs "
                           f"({len(blobs[0])} bytes)")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
            11: criterion_11, 12: criterion_12}


def run_acceptance(numbers=None, workers: int = 1, work_dir=None, log=print) -> list[CriterionResult]:
    run = AcceptanceRun(workers, work_dir)
    try:
        return run.run_all(numbers, log)
    finally:
        run.close()
