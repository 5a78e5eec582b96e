"""Ground-truth market simulator.

Holds the true coefficients, draws features and demands, and scores each
period's decision against a clairvoyant benchmark using exact expected
revenues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import EpisodeError, PricingError, UnsupportedError, ValidationError
from .mle import Tag
from .policies import (LearningPolicy, OracleMode, PolicyDecision, PolicyKind, RefitCadence,
                       oracle_step)
from .pricing import PriceBox, PricingModel, ShockTriple, Strategy
from .shocks import Convolution

NORM_TOL = 1e-12


# -- feature sources ------------------------------------------------------------------


@dataclass(frozen=True)
class IIDUnitBall:
    """Uniform draws from the unit ball."""

    dim: int

    def generate(self, t: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(1, rng)[0]

    def sample_many(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        return z * rng.random(n)[:, None] ** (1.0 / self.dim)

    def to_record(self) -> dict:
        return {"kind": "iid_unit_ball", "dim": self.dim}


@dataclass(frozen=True)
class IIDGaussianNormalized:
    """Standard normal draws, rescaled to unit norm when they exceed it."""

    dim: int

    def generate(self, t: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(1, rng)[0]

    def sample_many(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        nrm = np.linalg.norm(z, axis=1, keepdims=True)
        return np.where(nrm > 1.0, z / np.maximum(nrm, 1e-300), z)

    def to_record(self) -> dict:
        return {"kind": "iid_gaussian_normalized", "dim": self.dim}


@dataclass(frozen=True)
class PointMass:
    """The same feature every period."""

    x: tuple

    @property
    def dim(self) -> int:
        return len(self.x)

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if np.linalg.norm(self.x) > 1 + NORM_TOL:
            raise ValidationError(f"point-mass feature has norm {np.linalg.norm(self.x):.6g} > 1")

    def generate(self, t: int, rng: np.random.Generator) -> np.ndarray:
        return np.array(self.x)

    def sample_many(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.tile(np.array(self.x), (n, 1))

    def to_record(self) -> dict:
        return {"kind": "point_mass", "x": list(self.x)}


@dataclass(frozen=True, eq=False)
class FixedSequence:
    """Replays rows of a comma-separated file; period ``t`` (1-based) uses row ``t``."""

    path: str
    rows: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.rows is None:
            object.__setattr__(self, "rows", load_feature_file(self.path))
        else:
            object.__setattr__(self, "rows", np.atleast_2d(np.asarray(self.rows, dtype=float)))

    def __eq__(self, other):
        return isinstance(other, FixedSequence) and self.path == other.path

    def __hash__(self):
        return hash(self.path)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def generate(self, t: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if not 1 <= t <= len(self.rows):
            raise ValidationError(f"feature file {self.path} has {len(self.rows)} rows; period {t} requested")
        return self.rows[t - 1].copy()

    def sample_many(self, n: int, rng=None) -> np.ndarray:
        raise UnsupportedError("a fixed feature sequence has no sampling distribution")

    def to_record(self) -> dict:
        return {"kind": "fixed_sequence", "path": str(self.path)}


def load_feature_file(path) -> np.ndarray:
    """Read one comma-separated feature vector per line; blank lines are skipped."""
    path = Path(path)
    with path.open() as fh:
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    if not rows:
        raise ValidationError(f"feature file {path} is empty")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValidationError(f"feature file {path} has rows of different lengths {sorted(widths)}")
    X = np.array(rows)
    norms = np.linalg.norm(X, axis=1)
    if norms.max() > 1 + NORM_TOL:
        bad = int(np.argmax(norms)) + 1
        raise ValidationError(f"feature file {path} row {bad} has norm {norms.max():.6g} > 1")
    return X


def write_feature_file(path, X) -> Path:
    path = Path(path)
    np.savetxt(path, np.atleast_2d(X), delimiter=",", fmt="%.17g")
    return path


def feature_source_from_record(rec: dict):
    kind = rec.get("kind")
    if kind == "iid_unit_ball":
        return IIDUnitBall(int(rec["dim"]))
    if kind == "iid_gaussian_normalized":
        return IIDGaussianNormalized(int(rec["dim"]))
    if kind == "point_mass":
        return PointMass(tuple(rec["x"]))
    if kind == "fixed_sequence":
        return FixedSequence(rec["path"])
    raise ValidationError(f"unknown feature source {kind!r}")


def gen_feature(source, t: int, rng: np.random.Generator) -> np.ndarray:
    return source.generate(t, rng)


# -- instance -----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarketInstance:
    theta_f: np.ndarray
    theta_a: np.ndarray
    dists: ShockTriple
    box: PriceBox
    theta_bar: float
    source: object

    def __post_init__(self):
        object.__setattr__(self, "theta_f", np.asarray(self.theta_f, dtype=float))
        object.__setattr__(self, "theta_a", np.asarray(self.theta_a, dtype=float))
        object.__setattr__(self, "dists", ShockTriple(*self.dists))
        errors = []
        if self.theta_f.shape != self.theta_a.shape or self.theta_f.ndim != 1:
            errors.append("theta_f and theta_a must be vectors of the same length")
        if self.theta_bar <= 0:
            errors.append(f"theta_bar must be positive, got {self.theta_bar}")
        for name, th in (("theta_f", self.theta_f), ("theta_a", self.theta_a), ("theta_b", self.theta_b)):
            nrm = float(np.linalg.norm(th))
            if nrm > self.theta_bar + NORM_TOL:
                errors.append(f"{name}: norm {nrm:.6g} exceeds the parameter-ball radius {self.theta_bar}")
        if getattr(self.source, "dim", self.dim) != self.dim:
            errors.append(f"feature source dimension {self.source.dim} != parameter dimension {self.dim}")
        if errors:
            raise ValidationError("; ".join(errors), errors)

    @property
    def theta_b(self) -> np.ndarray:
        return self.theta_f + self.theta_a

    @property
    def dim(self) -> int:
        return self.theta_f.shape[0]

    def truth(self) -> dict:
        return {Tag.FOCAL: self.theta_f, Tag.ANCILLARY: self.theta_a, Tag.BUNDLE: self.theta_b}

    def valuations(self, x) -> tuple[float, float]:
        return float(x @ self.theta_f), float(x @ self.theta_a)


def realize_demand(instance: MarketInstance, decision: PolicyDecision, x, rng=None,
                   quantiles=None) -> tuple:
    """Draw ``(d_f, d_a, d_b)`` for one period; absent demands are ``None``.

    ``quantiles`` supplies the shock quantiles ``(u_f, u_a, u_b, u_b2)``
    directly; otherwise four uniforms are drawn from ``rng``.  ``u_b2`` is
    only used when the bundle shock is a sum of two component draws.
    """
    u = rng.random(4) if quantiles is None else quantiles
    v_f, v_a = instance.valuations(x)
    dists = instance.dists
    if decision.strategy is Strategy.UNBUNDLE:
        d_f = int(v_f + float(dists.focal.ppf(u[0])) >= decision.p_f)
        d_a = int(v_a + float(dists.ancillary.ppf(u[1])) >= decision.p_a) if d_f else 0
        return d_f, d_a, None
    db = dists.bundle
    if isinstance(db, Convolution):
        eps_b = float(db.first.ppf(u[2])) + float(db.second.ppf(u[3]))
    else:
        eps_b = float(db.ppf(u[2]))
    return None, None, int(v_f + v_a + eps_b >= decision.p_b)


def decision_revenue(model: PricingModel, decision: PolicyDecision, v_f: float, v_a: float) -> float:
    """Exact expected revenue of a decision at true valuations."""
    if decision.strategy is Strategy.UNBUNDLE:
        return model.revenue_unbundled(decision.p_f, decision.p_a, v_f, v_a)
    return model.revenue_single("b", decision.p_b, v_f + v_a)


def per_period_regret(model: PricingModel, decision: PolicyDecision, v_f: float, v_a: float,
                      mode: OracleMode, fixed_strategy: Strategy | None = None) -> tuple[float, float]:
    """``(expected_regret, strategy_regret_term)`` for one period."""
    mode = OracleMode(mode)
    r_u = model.r_u(v_f, v_a)
    if mode is OracleMode.PURE_UNBUNDLE:
        bench, strat = r_u, 0.0
    else:
        r_b = model.r_b(v_f + v_a)
        if mode is OracleMode.PER_CUSTOMER:
            bench = max(r_u, r_b)
            best = Strategy.BUNDLE if r_b > r_u else Strategy.UNBUNDLE
            strat = abs(r_b - r_u) if decision.strategy is not best else 0.0
        else:
            bench = r_b if Strategy(fixed_strategy) is Strategy.BUNDLE else r_u
            strat = 0.0
    return bench - decision_revenue(model, decision, v_f, v_a), strat


def compute_q_star(instance: MarketInstance, n_samples: int, rng: np.random.Generator,
                   model: PricingModel | None = None) -> tuple[float, float]:
    """Monte-Carlo focal purchase probability under clairvoyant pricing.

    Returns ``(estimate, standard_error)``.
    """
    if isinstance(instance.source, FixedSequence):
        raise UnsupportedError("purchase probability needs an i.i.d. feature source")
    if n_samples < 10_000:
        raise ValidationError(f"n_samples must be at least 10000, got {n_samples}")
    model = model or PricingModel(instance.dists, instance.box)
    X = instance.source.sample_many(n_samples, rng)
    q = model.focal_purchase_prob_many(X @ instance.theta_f, X @ instance.theta_a)
    return float(q.mean()), float(q.std(ddof=1) / math.sqrt(n_samples))


def fixed_best_strategy(instance: MarketInstance, model: PricingModel, n_samples: int = 100_000,
                        seed: int = 0) -> tuple[Strategy, float, float]:
    """Strategy with the larger average optimal revenue over the feature law.

    For a fixed sequence the average runs over its rows.  Ties go to
    unbundling.  Returns ``(strategy, mean_r_u, mean_r_b)``.
    """
    if isinstance(instance.source, FixedSequence):
        X = instance.source.rows
    else:
        X = instance.source.sample_many(n_samples, np.random.default_rng(seed))
    v_f, v_a = X @ instance.theta_f, X @ instance.theta_a
    mu_u = float(np.mean(model.r_u_many(v_f, v_a)))
    mu_b = float(np.mean(model.r_b_many(v_f + v_a)))
    return (Strategy.BUNDLE if mu_b > mu_u else Strategy.UNBUNDLE), mu_u, mu_b


# -- episodes -------------------------------------------------------------------------------

BENCHMARK_FOR = {
    PolicyKind.LCB_UNBUNDLE: OracleMode.PURE_UNBUNDLE,
    PolicyKind.CONFIDENCE: OracleMode.PER_CUSTOMER,
    PolicyKind.ONE_SWITCH: OracleMode.FIXED_BEST,
    PolicyKind.ORACLE_UNBUNDLE: OracleMode.PURE_UNBUNDLE,
    PolicyKind.ORACLE_PER_CUSTOMER: OracleMode.PER_CUSTOMER,
    PolicyKind.ORACLE_FIXED_BEST: OracleMode.FIXED_BEST,
}

ABSENT = -1


@dataclass(eq=False)
class EpisodeResult:
    """Per-period records and summary of one simulated episode.

    Demand arrays use ``-1`` for demands that do not exist under the period's
    strategy; price arrays use NaN likewise.
    """

    policy: str
    horizon: int
    seed: int
    benchmark: str
    strategy: np.ndarray          # 'u' / 'b'
    p_f: np.ndarray
    p_a: np.ndarray
    p_b: np.ndarray
    d_f: np.ndarray
    d_a: np.ndarray
    d_b: np.ndarray
    exp_regret: np.ndarray
    strategy_regret: np.ndarray
    n_focal: np.ndarray
    good_event: np.ndarray
    clairvoyant_p_f: np.ndarray
    best_strategy: np.ndarray     # per-customer optimal strategy, 'u' / 'b'
    switch_time: int | None = None
    fixed_strategy: str | None = None
    ancillary_count: int = 0
    estimator_clamps: int = 0
    pricing_clamps: int = 0
    theta_hat: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.horizon + 1)

    @property
    def cumulative_regret(self) -> float:
        return float(np.sum(self.exp_regret))

    @property
    def cumulative_strategy_regret(self) -> float:
        return float(np.sum(self.strategy_regret))

    @property
    def good_event_held(self) -> bool:
        return bool(np.all(self.good_event))

    def lcb_violations(self, tol: float = 1e-9) -> int:
        """Good-event unbundled periods whose focal price beats the clairvoyant one."""
        mask = self.good_event & (self.strategy == Strategy.UNBUNDLE.value)
        return int(np.count_nonzero(self.p_f[mask] > self.clairvoyant_p_f[mask] + tol))

    def mismatch_fraction(self, tail: float = 0.1) -> float:
        k = max(1, int(round(tail * self.horizon)))
        return float(np.mean(self.strategy[-k:] != self.best_strategy[-k:]))

    def rows(self):
        """Per-period CSV rows in the fixed column order."""
        for i in range(self.horizon):
            yield (i + 1, self.strategy[i], self.p_f[i], self.p_a[i], self.p_b[i], self.d_f[i],
                   self.d_a[i], self.d_b[i], self.exp_regret[i], self.strategy_regret[i],
                   self.n_focal[i], int(self.good_event[i]))

    def identical(self, other: "EpisodeResult") -> bool:
        arrays = ("strategy", "p_f", "p_a", "p_b", "d_f", "d_a", "d_b", "exp_regret",
                  "strategy_regret", "n_focal", "good_event", "clairvoyant_p_f")
        return (self.switch_time == other.switch_time and all(
            np.array_equal(getattr(self, a), getattr(other, a), equal_nan=a.startswith("p_") or a == "clairvoyant_p_f")
            for a in arrays))


def episode_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent feature and demand generators derived from one seed."""
    feat, dem = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(feat), np.random.default_rng(dem)


def run_episode(instance: MarketInstance, policy_kind, T: int, seed: int, *, lam: float = 1.0,
                refit=RefitCadence.EVERY, model: PricingModel | None = None,
                beta_override: float | None = None, benchmark=None,
                fixed_best_samples: int = 100_000) -> EpisodeResult:
    """Simulate ``T`` periods of one policy.

    Features and shock quantiles come from streams derived from ``seed`` and
    are drawn the same way whatever the policy does, so two policies run with
    the same seed face the same customers.

    Raises
    ------
    EpisodeError
        Wrapping any package error, with the failing period attached.
    """
    kind = PolicyKind(policy_kind)
    if T < 1:
        raise ValidationError(f"horizon must be positive, got {T}")
    model = model or PricingModel(instance.dists, instance.box)
    mode = BENCHMARK_FOR[kind] if benchmark is None else OracleMode(benchmark)
    fixed = None
    if mode is OracleMode.FIXED_BEST or kind is PolicyKind.ORACLE_FIXED_BEST:
        fixed = fixed_best_strategy(instance, model, fixed_best_samples)[0]
    policy = None
    truth = None
    if not kind.is_oracle:
        policy = LearningPolicy(kind, instance.dists, instance.box, instance.theta_bar, instance.dim,
                                T, lam=lam, refit=refit, model=model, beta_override=beta_override)
        truth = {tag: instance.truth()[tag] for tag in policy.tracked_tags}
    feat_rng, dem_rng = episode_streams(seed)
    clamps_before = model.clamps

    strategy = np.empty(T, dtype="<U1")
    p = np.full((3, T), np.nan)
    dem = np.full((3, T), ABSENT, dtype=np.int8)
    regret = np.zeros(T)
    sregret = np.zeros(T)
    n_focal = np.zeros(T, dtype=np.int64)
    good = np.ones(T, dtype=bool)
    clair = np.full(T, np.nan)
    best = np.empty(T, dtype="<U1")
    focal_count = 0
    t = 0
    try:
        for t in range(1, T + 1):
            x = gen_feature(instance.source, t, feat_rng)
            quantiles = dem_rng.random(4)
            v_f, v_a = instance.valuations(x)
            if policy is None:
                omode = {PolicyKind.ORACLE_UNBUNDLE: OracleMode.PURE_UNBUNDLE,
                         PolicyKind.ORACLE_PER_CUSTOMER: OracleMode.PER_CUSTOMER,
                         PolicyKind.ORACLE_FIXED_BEST: OracleMode.FIXED_BEST}[kind]
                dec = oracle_step(model, v_f, v_a, omode, fixed)
            else:
                good[t - 1] = policy.memberships(truth, T)
                dec = policy.decide(x, t)
            i = t - 1
            p_f_star, _, r_u_star = model.unbundled(v_f, v_a)
            clair[i] = p_f_star
            best[i] = (Strategy.BUNDLE if model.r_b(v_f + v_a) > r_u_star else Strategy.UNBUNDLE).value
            demands = realize_demand(instance, dec, x, quantiles=quantiles)
            regret[i], sregret[i] = per_period_regret(model, dec, v_f, v_a, mode, fixed)
            strategy[i] = dec.strategy.value
            for j, (pv, dv) in enumerate(zip(dec.prices(), demands)):
                if pv is not None:
                    p[j, i] = pv
                if dv is not None:
                    dem[j, i] = dv
            if demands[0] == 1:
                focal_count += 1
            n_focal[i] = focal_count
            if policy is not None:
                policy.observe(dec, x, demands, t)
    except PricingError as exc:
        raise EpisodeError(f"{kind.value} seed {seed}: {exc}", period=t) from exc

    res = EpisodeResult(kind.value, T, seed, mode.value, strategy, p[0], p[1], p[2],
                        dem[0], dem[1], dem[2], regret, sregret, n_focal, good, clair, best,
                        fixed_strategy=None if fixed is None else fixed.value,
                        pricing_clamps=model.clamps - clamps_before)
    if policy is not None:
        est = policy.est
        res.ancillary_count = est.ancillary.n
        res.estimator_clamps = est.focal.clamps + est.ancillary.clamps + est.bundle.clamps
        res.theta_hat = {tag.value: est.state(tag).theta_hat.tolist() for tag in Tag}
        if policy.switch_state is not None:
            res.switch_time = policy.switch_state.switch_time
    return res
