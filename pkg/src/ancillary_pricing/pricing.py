"""Optimal prices and expected revenues when valuations are known.

The single-item optimal price is ``g(v) = v + phi^{-1}(-v)`` where ``phi`` is
the virtual valuation of the shock.  The focal item is priced as
``g_f(v_f + r_a) - r_a`` so that the ancillary revenue ``r_a`` earned after a
focal sale is internalised.

Module-level functions are the exact reference (bisection, tolerance 1e-10).
:class:`PricingModel` answers the same questions through cached cubic-Hermite
tables of ``g`` and is what the online policies and the simulator call in their
inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import BracketError, ValidationError
from .shocks import ShockDistribution, Uniform

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200


class Strategy(str, Enum):
    BUNDLE = "b"
    UNBUNDLE = "u"


@dataclass(frozen=True)
class PriceBox:
    p_low: float
    p_high: float

    def __post_init__(self):
        if not 0 < self.p_low < self.p_high:
            raise ValidationError(f"price box needs 0 < p_low < p_high, got [{self.p_low}, {self.p_high}]")

    def clip(self, p):
        q = min(max(p, self.p_low), self.p_high)
        return q, q != p


class ClippedPrice(NamedTuple):
    price: float
    clipped: bool


class ShockTriple(NamedTuple):
    focal: ShockDistribution
    ancillary: ShockDistribution
    bundle: ShockDistribution


@dataclass(frozen=True)
class RevenueQuote:
    strategy: Strategy
    p_f: float | None
    p_a: float | None
    p_b: float | None
    expected_revenue: float
    revenue_unbundled: float
    revenue_bundled: float


# -- virtual valuation inverse -------------------------------------------------


def _bracket(dist: ShockDistribution, ylo: float, yhi: float) -> tuple[float, float]:
    lo, hi = dist.support()
    if math.isfinite(lo) and math.isfinite(hi):
        if isinstance(dist, Uniform):
            return lo, hi
        # density vanishes at the ends of a tabulated support
        eps = 1e-6 * (hi - lo)
        return lo + eps, hi - eps
    center = float(dist.ppf(0.5))
    spread = float(dist.ppf(0.75) - dist.ppf(0.25))
    a, b = center - 4 * spread, center + 4 * spread
    with np.errstate(over="ignore"):
        for _ in range(60):
            if float(dist.virtual_valuation(a)) <= ylo:
                break
            a -= 2 * spread
        for _ in range(60):
            if float(dist.virtual_valuation(b)) >= yhi:
                break
            b += 2 * spread + max(0.0, yhi - b)
    return a, b


def inverse_virtual_valuation(dist: ShockDistribution, y, tol: float = BISECT_TOL,
                              max_iter: int = BISECT_MAX_ITER):
    """Solve ``phi(u) = y`` by bisection (vectorized over ``y``).

    Raises
    ------
    BracketError
        If some ``y`` lies outside the range ``phi`` attains on the bracket.
    """
    y = np.asarray(y, dtype=float)
    a, b = _bracket(dist, float(np.min(y)), float(np.max(y)))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        pa, pb = float(dist.virtual_valuation(a)), float(dist.virtual_valuation(b))
    if np.any(y < pa) or np.any(y > pb):
        raise BracketError(
            f"{dist.kind}: virtual-valuation target in [{float(np.min(y)):.6g}, {float(np.max(y)):.6g}] "
            f"outside attainable range [{pa:.6g}, {pb:.6g}]")
    lo = np.full_like(y, a)
    hi = np.full_like(y, b)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = np.asarray(dist.virtual_valuation(mid)) < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) <= tol:
            break
    u = 0.5 * (lo + hi)
    return float(u) if u.ndim == 0 else u


def g_fn(dist: ShockDistribution, v):
    """Optimal single-item price ``v + phi^{-1}(-v)`` for valuation ``v``."""
    v = np.asarray(v, dtype=float)
    out = v + np.asarray(inverse_virtual_valuation(dist, -v))
    return float(out) if out.ndim == 0 else out


def g_prime(dist: ShockDistribution, v):
    """Slope of ``g``: ``1 - 1/phi'(u)`` at ``u = phi^{-1}(-v)``."""
    u = inverse_virtual_valuation(dist, -np.asarray(v, dtype=float))
    out = 1.0 - 1.0 / np.asarray(dist.virtual_valuation_slope(u))
    return float(out) if np.ndim(out) == 0 else out


def g_domain(dist: ShockDistribution) -> tuple[float, float]:
    """Valuations for which ``g`` is defined (``-v`` in the range of ``phi``)."""
    lo, hi = dist.support()
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return (-math.inf, math.inf)
    a, b = _bracket(dist, 0.0, 0.0)
    return (-float(dist.virtual_valuation(b)), -float(dist.virtual_valuation(a)))


# -- reference pricing functions ------------------------------------------------


def _clip(p: float, box: PriceBox | None) -> ClippedPrice:
    if box is None:
        return ClippedPrice(float(p), False)
    q, c = box.clip(float(p))
    return ClippedPrice(q, c)


def optimal_price_single(dist: ShockDistribution, v: float, box: PriceBox | None = None) -> ClippedPrice:
    """Revenue-maximizing posted price for a single item, clipped to ``box``."""
    return _clip(g_fn(dist, v), box)


def optimal_price_focal(dist_f: ShockDistribution, v_f: float, r_a: float,
                        box: PriceBox | None = None) -> ClippedPrice:
    """Focal price internalising an expected ancillary revenue ``r_a >= 0``."""
    if r_a < 0:
        raise ValidationError(f"ancillary revenue must be nonnegative, got {r_a}")
    return _clip(g_fn(dist_f, v_f + r_a) - r_a, box)


def expected_revenue_bundled(dist_b: ShockDistribution, p_b, v_b):
    """``p_b (1 - F_b(p_b - v_b))``."""
    return p_b * dist_b.sf(np.asarray(p_b) - v_b)


def expected_revenue_unbundled(dist_f: ShockDistribution, dist_a: ShockDistribution,
                               p_f, p_a, v_f, v_a):
    """``(p_f + p_a (1 - F_a(p_a - v_a))) (1 - F_f(p_f - v_f))``."""
    return (p_f + p_a * dist_a.sf(np.asarray(p_a) - v_a)) * dist_f.sf(np.asarray(p_f) - v_f)


def optimal_revenue_single(dist: ShockDistribution, v, box: PriceBox | None = None):
    """Expected revenue at the optimal price, ``g(v) (1 - F(g(v) - v))``."""
    if box is None:
        p = g_fn(dist, v)
    else:
        p = np.clip(g_fn(dist, v), box.p_low, box.p_high)
    out = p * np.asarray(dist.sf(np.asarray(p) - v))
    return float(out) if np.ndim(out) == 0 else out


def optimal_unbundled(dist_f, dist_a, v_f: float, v_a: float, box: PriceBox | None = None):
    """Jointly optimal ``(p_f, p_a, revenue)`` under sequential selling."""
    p_a = optimal_price_single(dist_a, v_a, box).price
    r_a = float(expected_revenue_bundled(dist_a, p_a, v_a))
    p_f = optimal_price_focal(dist_f, v_f, r_a, box).price
    return p_f, p_a, float(expected_revenue_unbundled(dist_f, dist_a, p_f, p_a, v_f, v_a))


def optimal_strategy(dists: ShockTriple, v_f: float, v_a: float,
                     box: PriceBox | None = None) -> RevenueQuote:
    """Pick bundling only if it strictly beats sequential selling.

    The bundle valuation is ``v_f + v_a``.
    """
    p_f, p_a, r_u = optimal_unbundled(dists.focal, dists.ancillary, v_f, v_a, box)
    v_b = v_f + v_a
    p_b = optimal_price_single(dists.bundle, v_b, box).price
    r_b = float(expected_revenue_bundled(dists.bundle, p_b, v_b))
    if r_b > r_u:
        return RevenueQuote(Strategy.BUNDLE, None, None, p_b, r_b, r_u, r_b)
    return RevenueQuote(Strategy.UNBUNDLE, p_f, p_a, None, r_u, r_u, r_b)


# -- tabulated fast path ---------------------------------------------------------


class GTable:
    """Cubic-Hermite interpolant of ``g`` on ``[lo, hi]`` using exact slopes."""

    def __init__(self, dist: ShockDistribution, lo: float, hi: float, n: int = 4097):
        dlo, dhi = g_domain(dist)
        span = dhi - dlo
        if math.isfinite(span):
            margin = 1e-6 * span
            lo, hi = max(lo, dlo + margin), min(hi, dhi - margin)
        self.dist = dist
        self.lo, self.hi, self.n = float(lo), float(hi), int(n)
        self.domain = (dlo, dhi)
        self.h = (self.hi - self.lo) / (self.n - 1)
        nodes = np.linspace(self.lo, self.hi, self.n)
        self.y = np.asarray(g_fn(dist, nodes))
        self.dy = np.asarray(g_prime(dist, nodes)) * self.h
        self._y = self.y.tolist()
        self._dy = self.dy.tolist()

    def scalar(self, v: float) -> float:
        if not (self.lo <= v <= self.hi):
            return g_fn(self.dist, v)
        s = (v - self.lo) / self.h
        i = min(int(s), self.n - 2)
        t = s - i
        t2 = t * t
        t3 = t2 * t
        y0, y1, d0, d1 = self._y[i], self._y[i + 1], self._dy[i], self._dy[i + 1]
        return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * d0
                + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * d1)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 0:
            return self.scalar(float(v))
        inside = (v >= self.lo) & (v <= self.hi)
        s = (np.clip(v, self.lo, self.hi) - self.lo) / self.h
        i = np.minimum(s.astype(np.int64), self.n - 2)
        t = s - i
        t2 = t * t
        t3 = t2 * t
        out = ((2 * t3 - 3 * t2 + 1) * self.y[i] + (t3 - 2 * t2 + t) * self.dy[i]
               + (-2 * t3 + 3 * t2) * self.y[i + 1] + (t3 - t2) * self.dy[i + 1])
        if not inside.all():
            out[~inside] = g_fn(self.dist, v[~inside])
        return out


class PricingModel:
    """Box-constrained optimal pricing for a focal/ancillary/bundle triple.

    Prices are clipped to ``box``; the ancillary revenue fed into the focal
    price is the revenue at the clipped ancillary price, so every quantity here
    is the exact optimum within the box.  Valuations outside the domain of
    ``g`` are clamped to it and counted in ``clamps``.
    """

    def __init__(self, dists: ShockTriple, box: PriceBox, v_range: tuple[float, float] = (-4.0, 4.0),
                 n_nodes: int = 4097):
        self.dists = ShockTriple(*dists)
        self.box = box
        self.tables = {k: GTable(d, *v_range, n_nodes) for k, d in zip("fab", self.dists)}
        self._sf = {k: d.sf for k, d in zip("fab", self.dists)}
        self.clamps = 0

    def g(self, which: str, v: float) -> float:
        tab = self.tables[which]
        dlo, dhi = tab.domain
        if not (dlo < v < dhi):
            self.clamps += 1
            margin = 1e-9 * (dhi - dlo)
            v = min(max(v, dlo + margin), dhi - margin)
        return tab.scalar(v)

    def price(self, which: str, v: float) -> float:
        return min(max(self.g(which, v), self.box.p_low), self.box.p_high)

    def revenue_single(self, which: str, p: float, v: float) -> float:
        return p * float(self._sf[which](p - v))

    def opt_revenue(self, which: str, v: float) -> float:
        """Best expected revenue for one item at valuation ``v``."""
        p = self.price(which, v)
        return self.revenue_single(which, p, v)

    def focal_price(self, v_f: float, r_a: float) -> float:
        return min(max(self.g("f", v_f + r_a) - r_a, self.box.p_low), self.box.p_high)

    def revenue_unbundled(self, p_f, p_a, v_f, v_a) -> float:
        return (p_f + self.revenue_single("a", p_a, v_a)) * float(self._sf["f"](p_f - v_f))

    def unbundled(self, v_f: float, v_a: float) -> tuple[float, float, float]:
        """Optimal ``(p_f, p_a, revenue)``."""
        p_a = self.price("a", v_a)
        r_a = self.revenue_single("a", p_a, v_a)
        p_f = self.focal_price(v_f, r_a)
        return p_f, p_a, (p_f + r_a) * float(self._sf["f"](p_f - v_f))

    def r_u(self, v_f: float, v_a: float) -> float:
        return self.unbundled(v_f, v_a)[2]

    def r_b(self, v_b: float) -> float:
        return self.opt_revenue("b", v_b)

    # vectorized versions used for averages over many features
    def _price_many(self, which, v):
        tab = self.tables[which]
        dlo, dhi = tab.domain
        margin = 1e-9 * (dhi - dlo) if math.isfinite(dhi - dlo) else 0.0
        v = np.clip(v, dlo + margin, dhi - margin)
        return np.clip(tab(v), self.box.p_low, self.box.p_high)

    def r_u_many(self, v_f, v_a) -> np.ndarray:
        v_f = np.asarray(v_f, dtype=float)
        v_a = np.asarray(v_a, dtype=float)
        p_a = self._price_many("a", v_a)
        r_a = p_a * self.dists.ancillary.sf(p_a - v_a)
        p_f = np.clip(self._price_many_raw("f", v_f + r_a) - r_a, self.box.p_low, self.box.p_high)
        return (p_f + r_a) * self.dists.focal.sf(p_f - v_f)

    def _price_many_raw(self, which, v):
        tab = self.tables[which]
        dlo, dhi = tab.domain
        margin = 1e-9 * (dhi - dlo) if math.isfinite(dhi - dlo) else 0.0
        return tab(np.clip(v, dlo + margin, dhi - margin))

    def r_b_many(self, v_b) -> np.ndarray:
        v_b = np.asarray(v_b, dtype=float)
        p_b = self._price_many("b", v_b)
        return p_b * self.dists.bundle.sf(p_b - v_b)

    def focal_purchase_prob_many(self, v_f, v_a) -> np.ndarray:
        """``1 - F_f(p_f* - v_f)`` at the optimal unbundled prices."""
        v_f = np.asarray(v_f, dtype=float)
        v_a = np.asarray(v_a, dtype=float)
        p_a = self._price_many("a", v_a)
        r_a = p_a * self.dists.ancillary.sf(p_a - v_a)
        p_f = np.clip(self._price_many_raw("f", v_f + r_a) - r_a, self.box.p_low, self.box.p_high)
        return self.dists.focal.sf(p_f - v_f)

    def quote(self, v_f: float, v_a: float) -> RevenueQuote:
        """Box-constrained analogue of :func:`optimal_strategy`."""
        p_f, p_a, r_u = self.unbundled(v_f, v_a)
        v_b = v_f + v_a
        p_b = self.price("b", v_b)
        r_b = self.revenue_single("b", p_b, v_b)
        if r_b > r_u:
            return RevenueQuote(Strategy.BUNDLE, None, None, p_b, r_b, r_u, r_b)
        return RevenueQuote(Strategy.UNBUNDLE, p_f, p_a, None, r_u, r_u, r_b)
