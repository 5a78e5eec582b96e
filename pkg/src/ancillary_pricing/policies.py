"""Online pricing policies.

Each learning policy keeps one :class:`~ancillary_pricing.mle.EstimatorState`
per product and exposes ``decide(x, t)`` and ``observe(decision, x, demands)``.
The step functions below are the stateless cores; the classes add the
estimator bookkeeping and the refit schedule.

Demands are triples ``(d_f, d_a, d_b)`` with ``None`` for quantities that do
not exist under the chosen strategy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import mle
from .errors import ConsistencyError, ValidationError
from .mle import EstimatorState, Tag
from .pricing import PriceBox, PricingModel, ShockTriple, Strategy
from .shocks import ShockConstants, compute_constants


class PolicyKind(str, Enum):
    LCB_UNBUNDLE = "alg1"
    CONFIDENCE = "alg2"
    ONE_SWITCH = "alg3"
    ORACLE_UNBUNDLE = "oracle_unbundle"
    ORACLE_PER_CUSTOMER = "oracle_per_customer"
    ORACLE_FIXED_BEST = "oracle_fixed_best"

    @property
    def is_oracle(self) -> bool:
        return self.value.startswith("oracle")


class OracleMode(str, Enum):
    PURE_UNBUNDLE = "pure_unbundle"
    PER_CUSTOMER = "per_customer"
    FIXED_BEST = "fixed_best"


class RefitCadence(str, Enum):
    EVERY = "every"
    DOUBLING = "doubling"


@dataclass
class PolicyDecision:
    strategy: Strategy
    p_f: float | None = None
    p_a: float | None = None
    p_b: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        unb = self.strategy is Strategy.UNBUNDLE
        if unb != (self.p_f is not None and self.p_a is not None) or unb == (self.p_b is not None):
            raise ValidationError(f"prices {self.prices()} do not match strategy {self.strategy.name}")

    def prices(self) -> tuple:
        return self.p_f, self.p_a, self.p_b

    def check_box(self, box: PriceBox, tol: float = 1e-12) -> bool:
        return all(box.p_low - tol <= p <= box.p_high + tol for p in self.prices() if p is not None)


@dataclass
class OneSwitchState:
    """Running sums for the averaged-revenue switching test."""

    switched: bool = False
    switch_time: int | None = None
    norm_sum: float = 0.0  # sum of ||x_t'|| in the inverse ancillary design at t'-1
    features: list = field(default_factory=list)
    last_mean_u: float = math.nan
    last_mean_b: float = math.nan
    last_width: float = math.inf

    def switch(self, t: int) -> None:
        if not self.switched:
            self.switched = True
            self.switch_time = t


@dataclass
class Estimators:
    """One estimator per product plus the constants that set its radius."""

    focal: EstimatorState
    ancillary: EstimatorState
    bundle: EstimatorState
    constants: dict  # Tag -> ShockConstants

    @classmethod
    def fresh(cls, dists: ShockTriple, box: PriceBox, theta_bar: float, dim: int,
              lam: float = 1.0) -> "Estimators":
        consts = {tag: compute_constants(dist, box.p_low, box.p_high, theta_bar)
                  for tag, dist in zip(Tag, dists)}
        states = [mle.new_state(tag, dim, lam, theta_bar, consts[tag]) for tag in Tag]
        return cls(*states, constants=consts)

    def state(self, tag) -> EstimatorState:
        return {Tag.FOCAL: self.focal, Tag.ANCILLARY: self.ancillary, Tag.BUNDLE: self.bundle}[Tag(tag)]

    def beta(self, tag, T: int) -> float:
        tag = Tag(tag)
        return mle.beta_radius(self.state(tag), self.constants[tag], T)


# -- step functions ----------------------------------------------------------------


def _betas(est: Estimators, T: int, beta_override, tags):
    if beta_override is not None:
        return {tag: float(beta_override) for tag in tags}
    return {tag: est.beta(tag, T) for tag in tags}


def _unbundle_prices(est: Estimators, model: PricingModel, x, ci_f, ci_a):
    r_a_ucb = model.opt_revenue("a", ci_a.ucb)
    p_f = model.focal_price(ci_f.lcb, r_a_ucb)
    p_a = model.price("a", float(x @ est.ancillary.theta_hat))
    return p_f, p_a, r_a_ucb


def alg1_step(est: Estimators, model: PricingModel, x, t: int, T: int,
              beta_override: float | None = None) -> PolicyDecision:
    """Lower-confidence focal price and point-estimate ancillary price."""
    x = np.asarray(x, dtype=float)
    betas = _betas(est, T, beta_override, (Tag.FOCAL, Tag.ANCILLARY))
    ci_f = mle.valuation_bounds(est.focal, betas[Tag.FOCAL], x)
    ci_a = mle.valuation_bounds(est.ancillary, betas[Tag.ANCILLARY], x)
    p_f, p_a, r_a_ucb = _unbundle_prices(est, model, x, ci_f, ci_a)
    diag = {"beta_f": betas[Tag.FOCAL], "beta_a": betas[Tag.ANCILLARY],
            "v_f_lcb": ci_f.lcb, "v_a_ucb": ci_a.ucb, "r_a_ucb": r_a_ucb}
    return PolicyDecision(Strategy.UNBUNDLE, p_f=p_f, p_a=p_a, diagnostics=diag)


def alg2_step(est: Estimators, model: PricingModel, x, t: int, T: int,
              beta_override: float | None = None) -> PolicyDecision:
    """Pick the strategy from revenue confidence bounds, then price.

    A strategy is chosen outright when its lower revenue bound beats the
    other's upper bound.  Otherwise the product whose estimator is less
    certain along ``x`` is sold, unbundling on ties.
    """
    x = np.asarray(x, dtype=float)
    betas = _betas(est, T, beta_override, tuple(Tag))
    ci_f = mle.valuation_bounds(est.focal, betas[Tag.FOCAL], x)
    ci_a = mle.valuation_bounds(est.ancillary, betas[Tag.ANCILLARY], x)
    ci_b = mle.valuation_bounds(est.bundle, betas[Tag.BUNDLE], x)
    va_hi = ci_b.ucb - ci_f.lcb
    va_lo = ci_b.lcb - ci_f.ucb
    r_u_hi = model.r_u(ci_f.ucb, va_hi)
    r_u_lo = model.r_u(ci_f.lcb, va_lo)
    r_b_hi = model.r_b(ci_b.ucb)
    r_b_lo = model.r_b(ci_b.lcb)
    n_f = est.focal.norm_inv(x)
    n_b = est.bundle.norm_inv(x)
    if r_b_lo > r_u_hi:
        strategy, rule = Strategy.BUNDLE, "sure"
    elif r_u_lo > r_b_hi:
        strategy, rule = Strategy.UNBUNDLE, "sure"
    else:
        strategy = Strategy.UNBUNDLE if n_f >= n_b else Strategy.BUNDLE
        rule = "info"
    diag = {"beta_f": betas[Tag.FOCAL], "beta_a": betas[Tag.ANCILLARY], "beta_b": betas[Tag.BUNDLE],
            "r_u_lcb": r_u_lo, "r_u_ucb": r_u_hi, "r_b_lcb": r_b_lo, "r_b_ucb": r_b_hi,
            "norm_f": n_f, "norm_b": n_b, "rule": rule}
    if strategy is Strategy.BUNDLE:
        p_b = model.price("b", float(x @ est.bundle.theta_hat))
        return PolicyDecision(Strategy.BUNDLE, p_b=p_b, diagnostics=diag)
    p_f, p_a, r_a_ucb = _unbundle_prices(est, model, x, ci_f, ci_a)
    diag.update(v_f_lcb=ci_f.lcb, v_a_ucb=ci_a.ucb, r_a_ucb=r_a_ucb)
    return PolicyDecision(Strategy.UNBUNDLE, p_f=p_f, p_a=p_a, diagnostics=diag)


def alg3_step(est: Estimators, model: PricingModel, x, t: int, T: int, state: OneSwitchState,
              beta_override: float | None = None) -> tuple[PolicyDecision, OneSwitchState]:
    """Unbundle with LCB pricing until switched, then bundle with plug-in prices.

    The switching test itself runs in :func:`one_switch_update` once the
    period's data are in.
    """
    x = np.asarray(x, dtype=float)
    if state.switched:
        theta_b = est.focal.theta_hat + est.ancillary.theta_hat
        p_b = model.price("b", float(x @ theta_b))
        return PolicyDecision(Strategy.BUNDLE, p_b=p_b, diagnostics={"switched": 1.0}), state
    # the width uses the ancillary design at the start of the period
    state.norm_sum += est.ancillary.norm_inv(x)
    dec = alg1_step(est, model, x, t, T, beta_override)
    dec.diagnostics["switched"] = 0.0
    return dec, state


def one_switch_width(t: int, T: int, p_high: float, b_bar: float, norm_sum: float) -> float:
    """Half-width of the averaged-revenue confidence intervals after ``t`` periods."""
    return 4.0 * p_high * math.sqrt(math.log(T) / t) + 2.0 * b_bar * norm_sum / t


def one_switch_update(est: Estimators, model: PricingModel, t: int, T: int, state: OneSwitchState,
                      b_bar: float) -> OneSwitchState:
    """Run the switching test with the estimators fitted through period ``t``.

    The plug-in averages are only needed when a switch is arithmetically
    possible: bundle revenue never exceeds ``p_high`` and unbundled revenue is
    nonnegative, so a half-width above ``p_high / 2`` rules it out.
    """
    if state.switched:
        return state
    w = one_switch_width(t, T, model.box.p_high, b_bar, state.norm_sum)
    state.last_width = w
    if 2.0 * w > model.box.p_high:
        return state
    X = np.asarray(state.features)
    v_f = X @ est.focal.theta_hat
    v_a = X @ est.ancillary.theta_hat
    mean_u = float(np.mean(model.r_u_many(v_f, v_a)))
    mean_b = float(np.mean(model.r_b_many(v_f + v_a)))
    state.last_mean_u, state.last_mean_b = mean_u, mean_b
    if mean_b - w >= mean_u + w:
        state.switch(t)
    return state


def oracle_step(model: PricingModel, v_f: float, v_a: float, mode: OracleMode,
                fixed_strategy: Strategy | None = None) -> PolicyDecision:
    """Clairvoyant decision at true valuations ``v_f``, ``v_a``."""
    mode = OracleMode(mode)
    if mode is OracleMode.PER_CUSTOMER:
        q = model.quote(v_f, v_a)
        return PolicyDecision(q.strategy, q.p_f, q.p_a, q.p_b)
    if mode is OracleMode.FIXED_BEST:
        if fixed_strategy is None:
            raise ValidationError("fixed-best oracle needs the precomputed strategy")
        if Strategy(fixed_strategy) is Strategy.BUNDLE:
            return PolicyDecision(Strategy.BUNDLE, p_b=model.price("b", v_f + v_a))
    p_f, p_a, _ = model.unbundled(v_f, v_a)
    return PolicyDecision(Strategy.UNBUNDLE, p_f=p_f, p_a=p_a)


def check_demands(decision: PolicyDecision, demands) -> tuple:
    """Validate a demand triple against the decision's strategy."""
    if len(demands) != 3:
        raise ConsistencyError(f"expected (d_f, d_a, d_b), got {demands!r}")
    d_f, d_a, d_b = demands
    if decision.strategy is Strategy.UNBUNDLE:
        if d_b is not None or d_f not in (0, 1) or d_a not in (0, 1):
            raise ConsistencyError(f"unbundled sale needs focal and ancillary demands only, got {demands!r}")
        if d_f == 0 and d_a == 1:
            raise ConsistencyError("ancillary purchase without a focal purchase")
    else:
        if d_f is not None or d_a is not None or d_b not in (0, 1):
            raise ConsistencyError(f"bundled sale needs the bundle demand only, got {demands!r}")
    return d_f, d_a, d_b


def observe(est: Estimators, decision: PolicyDecision, x, demands) -> list[Tag]:
    """Record one period's outcome; returns the tags whose data changed."""
    d_f, d_a, d_b = check_demands(decision, demands)
    touched = []
    if decision.strategy is Strategy.UNBUNDLE:
        mle.update(est.focal, decision.p_f, x, d_f)
        touched.append(Tag.FOCAL)
        if d_f == 1:
            mle.update(est.ancillary, decision.p_a, x, d_a)
            touched.append(Tag.ANCILLARY)
    else:
        mle.update(est.bundle, decision.p_b, x, d_b)
        touched.append(Tag.BUNDLE)
    return touched


# -- policy objects --------------------------------------------------------------


class LearningPolicy:
    """A learning policy with its estimators and refit schedule.

    Parameters
    ----------
    kind : PolicyKind
        One of the three learning kinds.
    dists : ShockTriple
        Shock laws assumed known to the seller.
    box : PriceBox
    theta_bar : float
        Radius of the parameter ball.
    dim : int
    horizon : int
        Known horizon ``T`` (enters the confidence radius).
    lam : float
        Ridge parameter.
    refit : RefitCadence
        ``every`` refits after each new observation; ``doubling`` only when an
        estimator's sample count reaches a power of two.
    model : PricingModel, optional
        Shared pricing tables; built from ``dists`` and ``box`` if omitted.
    beta_override : float, optional
        Fixed confidence radius replacing the formula (diagnostic use).
    """

    def __init__(self, kind, dists: ShockTriple, box: PriceBox, theta_bar: float, dim: int,
                 horizon: int, lam: float = 1.0, refit=RefitCadence.EVERY,
                 model: PricingModel | None = None, beta_override: float | None = None):
        self.kind = PolicyKind(kind)
        if self.kind.is_oracle:
            raise ValidationError(f"{self.kind.value} is not a learning policy")
        self.dists = ShockTriple(*dists)
        self.box = box
        self.theta_bar = theta_bar
        self.horizon = int(horizon)
        self.refit = RefitCadence(refit)
        self.model = model or PricingModel(self.dists, box)
        self.beta_override = beta_override
        self.est = Estimators.fresh(self.dists, box, theta_bar, dim, lam)
        self.switch_state = OneSwitchState() if self.kind is PolicyKind.ONE_SWITCH else None
        if self.kind is PolicyKind.ONE_SWITCH:
            # focal and ancillary both feed the averaged revenues; use the looser constants
            ca = self.est.constants[Tag.ANCILLARY]
            cf = self.est.constants[Tag.FOCAL]
            worst = ca if ca.ratio >= cf.ratio else cf
            self.b_bar = mle.beta_bar(dim, self.horizon, lam, theta_bar, worst)

    def decide(self, x, t: int) -> PolicyDecision:
        if self.kind is PolicyKind.LCB_UNBUNDLE:
            return alg1_step(self.est, self.model, x, t, self.horizon, self.beta_override)
        if self.kind is PolicyKind.CONFIDENCE:
            return alg2_step(self.est, self.model, x, t, self.horizon, self.beta_override)
        dec, self.switch_state = alg3_step(self.est, self.model, x, t, self.horizon,
                                           self.switch_state, self.beta_override)
        return dec

    def _maybe_fit(self, tag: Tag) -> None:
        st = self.est.state(tag)
        if self.refit is RefitCadence.DOUBLING and st.n & (st.n - 1):
            return
        mle.fit(st, self.dists[list(Tag).index(tag)])

    def observe(self, decision: PolicyDecision, x, demands, t: int) -> None:
        x = np.asarray(x, dtype=float)
        for tag in observe(self.est, decision, x, demands):
            self._maybe_fit(tag)
        if self.kind is PolicyKind.ONE_SWITCH:
            ss = self.switch_state
            if ss.switched:
                return
            ss.features.append(x)
            one_switch_update(self.est, self.model, t, self.horizon, ss, self.b_bar)

    def memberships(self, truth: dict, T: int) -> bool:
        """Whether every true parameter lies in its confidence ellipsoid.

        ``truth`` maps tags to true coefficient vectors; only the simulator
        calls this.
        """
        for tag, theta in truth.items():
            st = self.est.state(tag)
            beta = self.est.beta(tag, T) if self.beta_override is None else self.beta_override
            if not mle.in_confidence_set(st, theta, beta):
                return False
        return True

    @property
    def tracked_tags(self) -> tuple:
        if self.kind is PolicyKind.CONFIDENCE:
            return tuple(Tag)
        return (Tag.FOCAL, Tag.ANCILLARY)
