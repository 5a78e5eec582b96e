"""Utility-shock distributions.

Each distribution exposes its CDF, density and density derivative together with
the log-derivatives the likelihood and the pricing maps need.  All methods are
vectorized: they accept floats or arrays and return the same shape.

The constants that govern learning speed (strong convexity ``nu``, smoothness
``mu``, density bounds ``B`` and ``B'``) come from :func:`compute_constants`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, ValidationError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class ShockDistribution:
    """Base class; use :class:`Uniform`, :class:`Normal`, :class:`Logistic`."""

    kind = "abstract"

    # -- primitives every subclass provides --------------------------------
    def cdf(self, v):
        raise NotImplementedError

    def sf(self, v):
        return _out(1.0 - np.asarray(self.cdf(v)))

    def pdf(self, v):
        raise NotImplementedError

    def pdf_prime(self, v):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        """Open interval on which the CDF is strictly increasing."""
        return (-math.inf, math.inf)

    @property
    def params(self) -> dict:
        raise NotImplementedError

    # -- derived quantities --------------------------------------------------
    def lower_hazard(self, v):
        """``f/F``, equal to ``(log F)'``."""
        v = np.asarray(v, dtype=float)
        return _out(np.asarray(self.pdf(v)) / np.asarray(self.cdf(v)))

    def hazard(self, v):
        """``f/(1-F)``, equal to ``-(log(1-F))'``."""
        v = np.asarray(v, dtype=float)
        return _out(np.asarray(self.pdf(v)) / np.asarray(self.sf(v)))

    def curvature_cdf(self, v):
        """``-(log F)''``."""
        v = np.asarray(v, dtype=float)
        F, f, fp = (np.asarray(g(v)) for g in (self.cdf, self.pdf, self.pdf_prime))
        return _out((f * f - fp * F) / (F * F))

    def curvature_sf(self, v):
        """``-(log(1-F))''``."""
        v = np.asarray(v, dtype=float)
        S, f, fp = (np.asarray(g(v)) for g in (self.sf, self.pdf, self.pdf_prime))
        return _out((f * f + fp * S) / (S * S))

    def virtual_valuation(self, v):
        """``v - (1-F(v))/f(v)``; raises :class:`DomainError` where ``f = 0``."""
        v = np.asarray(v, dtype=float)
        f = np.asarray(self.pdf(v))
        if np.any(f <= 0.0):
            raise DomainError(f"{self.kind}: density vanishes, virtual valuation undefined")
        return _out(v - np.asarray(self.sf(v)) / f)

    def virtual_valuation_slope(self, v):
        """Derivative of the virtual valuation, ``2 + (1-F) f' / f**2``."""
        v = np.asarray(v, dtype=float)
        f = np.asarray(self.pdf(v))
        return _out(2.0 + np.asarray(self.sf(v)) * np.asarray(self.pdf_prime(v)) / (f * f))

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draw(s) using ``rng``."""
        u = rng.random(size)
        # rng.random can return exactly 0.0
        u = np.where(u <= 0.0, np.nextafter(0.0, 1.0), u)
        return self.ppf(u if size is not None else float(u))

    def to_record(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


@dataclass(frozen=True)
class Uniform(ShockDistribution):
    lo: float = -2.0
    hi: float = 2.0
    kind = "uniform"

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.hi > self.lo):
            raise ValidationError(f"uniform: need finite lo < hi, got ({self.lo}, {self.hi})")

    @property
    def params(self):
        return {"lo": self.lo, "hi": self.hi}

    @property
    def width(self):
        return self.hi - self.lo

    def support(self):
        return (self.lo, self.hi)

    def cdf(self, v):
        return _out(np.clip((np.asarray(v, dtype=float) - self.lo) / self.width, 0.0, 1.0))

    def sf(self, v):
        return _out(np.clip((self.hi - np.asarray(v, dtype=float)) / self.width, 0.0, 1.0))

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        return _out(np.where((v >= self.lo) & (v <= self.hi), 1.0 / self.width, 0.0))

    def pdf_prime(self, v):
        return _out(np.zeros_like(np.asarray(v, dtype=float)))

    def ppf(self, u):
        return _out(self.lo + np.asarray(u, dtype=float) * self.width)

    def lower_hazard(self, v):
        return _out(1.0 / (np.asarray(v, dtype=float) - self.lo))

    def hazard(self, v):
        return _out(1.0 / (self.hi - np.asarray(v, dtype=float)))

    def curvature_cdf(self, v):
        return _out((np.asarray(v, dtype=float) - self.lo) ** -2)

    def curvature_sf(self, v):
        return _out((self.hi - np.asarray(v, dtype=float)) ** -2)

    def virtual_valuation_slope(self, v):
        return _out(np.full_like(np.asarray(v, dtype=float), 2.0))


@dataclass(frozen=True)
class Normal(ShockDistribution):
    mean: float = 0.0
    sd: float = 1.0
    kind = "normal"

    def __post_init__(self):
        if not (math.isfinite(self.mean) and self.sd > 0 and math.isfinite(self.sd)):
            raise ValidationError(f"normal: need finite mean and sd > 0, got ({self.mean}, {self.sd})")

    @property
    def params(self):
        return {"mean": self.mean, "sd": self.sd}

    def _z(self, v):
        return (np.asarray(v, dtype=float) - self.mean) / self.sd

    def cdf(self, v):
        return _out(special.ndtr(self._z(v)))

    def sf(self, v):
        return _out(special.ndtr(-self._z(v)))

    def _logpdf_std(self, z):
        return -0.5 * z * z - _LOG_SQRT_2PI

    def pdf(self, v):
        z = self._z(v)
        return _out(np.exp(self._logpdf_std(z)) / self.sd)

    def pdf_prime(self, v):
        z = self._z(v)
        return _out(-z * np.exp(self._logpdf_std(z)) / self.sd**2)

    def ppf(self, u):
        return _out(self.mean + self.sd * special.ndtri(np.asarray(u, dtype=float)))

    def lower_hazard(self, v):
        z = self._z(v)
        return _out(np.exp(self._logpdf_std(z) - special.log_ndtr(z)) / self.sd)

    def hazard(self, v):
        z = self._z(v)
        return _out(np.exp(self._logpdf_std(z) - special.log_ndtr(-z)) / self.sd)

    def curvature_cdf(self, v):
        z = self._z(v)
        m = np.exp(self._logpdf_std(z) - special.log_ndtr(z))
        return _out(m * (z + m) / self.sd**2)

    def curvature_sf(self, v):
        z = self._z(v)
        h = np.exp(self._logpdf_std(z) - special.log_ndtr(-z))
        return _out(h * (h - z) / self.sd**2)


@dataclass(frozen=True)
class Logistic(ShockDistribution):
    loc: float = 0.0
    scale: float = 1.0
    kind = "logistic"

    def __post_init__(self):
        if not (math.isfinite(self.loc) and self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError(f"logistic: need finite loc and scale > 0, got ({self.loc}, {self.scale})")

    @property
    def params(self):
        return {"loc": self.loc, "scale": self.scale}

    def _z(self, v):
        return (np.asarray(v, dtype=float) - self.loc) / self.scale

    def cdf(self, v):
        return _out(special.expit(self._z(v)))

    def sf(self, v):
        return _out(special.expit(-self._z(v)))

    def pdf(self, v):
        z = self._z(v)
        return _out(special.expit(z) * special.expit(-z) / self.scale)

    def pdf_prime(self, v):
        z = self._z(v)
        F, S = special.expit(z), special.expit(-z)
        return _out(F * S * (S - F) / self.scale**2)

    def ppf(self, u):
        return _out(self.loc + self.scale * special.logit(np.asarray(u, dtype=float)))

    def lower_hazard(self, v):
        return _out(special.expit(-self._z(v)) / self.scale)

    def hazard(self, v):
        return _out(special.expit(self._z(v)) / self.scale)

    def curvature_cdf(self, v):
        z = self._z(v)
        return _out(special.expit(z) * special.expit(-z) / self.scale**2)

    curvature_sf = curvature_cdf


@dataclass(frozen=True)
class Convolution(ShockDistribution):
    """Law of ``first + second`` for independent shocks, tabulated on a grid.

    CDF and density are ``int F1(v - y) f2(y) dy`` and ``int f1(v - y) f2(y) dy``
    on a grid of about ``grid_n`` points (trapezoid weights, FFT), interpolated
    linearly; the density derivative is differentiated numerically.  Sampling adds one draw from each component.
    """

    first: ShockDistribution = field(default_factory=Uniform)
    second: ShockDistribution = field(default_factory=Uniform)
    grid_n: int = 10_000
    kind = "convolution"

    def __post_init__(self):
        from scipy.signal import fftconvolve

        lo1, hi1 = _finite_span(self.first)
        lo2, hi2 = _finite_span(self.second)
        # step divides the second span exactly so trapezoid weights hit its ends
        n2 = max(2, int(math.ceil((hi2 - lo2) / (hi1 + hi2 - lo1 - lo2) * (self.grid_n - 1))))
        h = (hi2 - lo2) / n2
        g2 = lo2 + h * np.arange(n2 + 1)
        w = np.full(n2 + 1, h)
        w[[0, -1]] *= 0.5
        f2w = np.asarray(self.second.pdf(g2)) * w
        # first grid runs past hi1 by the second span so every output sees F1 = 1 there
        n1 = int(math.ceil((hi1 - lo1) / h)) + n2 + 1
        g1 = lo1 + h * np.arange(n1)
        n_out = int(math.ceil((hi1 + hi2 - lo1 - lo2) / h)) + 1
        cdf = fftconvolve(np.asarray(self.first.cdf(g1)), f2w)[:n_out]
        dens = fftconvolve(np.asarray(self.first.pdf(g1)), f2w)[:n_out]
        grid = lo1 + lo2 + h * np.arange(n_out)
        cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
        cdf = (cdf - cdf[0]) / (cdf[-1] - cdf[0])
        dens = np.clip(dens, 0.0, None)
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(self, "_pdf", dens)
        object.__setattr__(self, "_cdf", cdf)
        object.__setattr__(self, "_dpdf", np.gradient(dens, grid))

    @property
    def params(self):
        return {"first": self.first.to_record(), "second": self.second.to_record()}

    def support(self):
        a, b = self.first.support(), self.second.support()
        return (a[0] + b[0], a[1] + b[1])

    def cdf(self, v):
        return _out(np.interp(v, self._grid, self._cdf, left=0.0, right=1.0))

    def pdf(self, v):
        return _out(np.interp(v, self._grid, self._pdf, left=0.0, right=0.0))

    def pdf_prime(self, v):
        return _out(np.interp(v, self._grid, self._dpdf, left=0.0, right=0.0))

    def ppf(self, u):
        return _out(np.interp(u, self._cdf, self._grid))

    def sample(self, rng, size=None):
        return _out(np.asarray(self.first.sample(rng, size)) + np.asarray(self.second.sample(rng, size)))


def _finite_span(dist, tail=1e-12):
    lo, hi = dist.support()
    if not math.isfinite(lo):
        lo = float(dist.ppf(tail))
    if not math.isfinite(hi):
        hi = float(dist.ppf(1.0 - tail))
    return lo, hi


def convolve(first: ShockDistribution, second: ShockDistribution, grid_n: int = 10_000) -> ShockDistribution:
    """Distribution of the sum of two independent shocks.

    Two normals combine in closed form; anything else is tabulated.
    """
    if isinstance(first, Normal) and isinstance(second, Normal):
        return Normal(first.mean + second.mean, math.hypot(first.sd, second.sd))
    return Convolution(first, second, grid_n)


_KINDS = {"uniform": Uniform, "normal": Normal, "logistic": Logistic}


def make_shock(kind: str, **params) -> ShockDistribution:
    """Build a distribution from its kind name and parameters."""
    try:
        cls = _KINDS[kind.lower()]
    except KeyError:
        raise ValidationError(f"unknown shock kind {kind!r}; expected one of {sorted(_KINDS)}") from None
    try:
        return cls(**{k: float(v) for k, v in params.items()})
    except TypeError as exc:
        raise ValidationError(f"{kind}: bad parameters {params}: {exc}") from None


def from_record(record: dict) -> ShockDistribution:
    if record["kind"] == "convolution":
        p = record["params"]
        return convolve(from_record(p["first"]), from_record(p["second"]))
    return make_shock(record["kind"], **record["params"])


# -- constants -----------------------------------------------------------------


@dataclass(frozen=True)
class ShockConstants:
    """Curvature and density bounds over the working interval.

    ``nu`` lower-bounds both ``-(log F)''`` and ``-(log(1-F))''``; ``mu``
    upper-bounds ``|(log F)'|`` and ``|(log(1-F))'|``.  ``b_max`` and
    ``b_prime_max`` bound ``f`` and ``|f'|``; ``eta = b_max + p_high * b_prime_max``.
    """

    nu: float
    mu: float
    b_max: float
    b_prime_max: float
    eta: float
    working_lo: float
    working_hi: float
    p_high: float

    @property
    def ratio(self) -> float:
        """``2 mu / nu``, the multiplier in the confidence radius."""
        return 2.0 * self.mu / self.nu


def working_interval(p_low: float, p_high: float, theta_bar: float) -> tuple[float, float]:
    """Symmetric interval ``|v| <= p_high + theta_bar`` over which nu and mu are taken."""
    w = p_high + theta_bar
    return (-w, w)


def compute_constants(dist: ShockDistribution, p_low: float, p_high: float,
                      theta_bar: float, grid_n: int = 10_000) -> ShockConstants:
    """Derive ``nu``, ``mu``, ``B``, ``B'`` for one distribution.

    ``nu``/``mu`` are taken over ``|v| <= p_high + theta_bar``; ``B``/``B'``
    over ``[p_low - theta_bar, p_high + theta_bar]``.  Uniform and logistic
    use closed forms for ``nu``/``mu``; other kinds use a grid that includes
    the endpoints, plus density critical points for ``B``/``B'``.

    Raises
    ------
    ValidationError
        If the CDF is not strictly increasing on the interval or either
        second log-derivative is non-positive at a grid point.
    """
    if grid_n < 1000:
        raise ValidationError(f"grid_n must be >= 1000, got {grid_n}")
    if not 0 < p_low < p_high:
        raise ValidationError(f"price box needs 0 < p_low < p_high, got [{p_low}, {p_high}]")
    if theta_bar <= 0:
        raise ValidationError(f"theta_bar must be positive, got {theta_bar}")
    lo, hi = working_interval(p_low, p_high, theta_bar)
    s_lo, s_hi = dist.support()
    if not (s_lo < lo and hi < s_hi):
        raise ValidationError(
            f"{dist.kind}{tuple(dist.params.values())}: working interval [{lo}, {hi}] "
            f"must lie strictly inside the support ({s_lo}, {s_hi})")
    grid = np.linspace(lo, hi, grid_n)
    if np.any(np.asarray(dist.pdf(grid)) <= 0) or np.any(np.diff(np.asarray(dist.cdf(grid))) <= 0):
        raise ValidationError(f"{dist.kind}: CDF not strictly increasing on [{lo}, {hi}]")
    c_cdf = np.asarray(dist.curvature_cdf(grid))
    c_sf = np.asarray(dist.curvature_sf(grid))
    if np.any(c_cdf <= 0) or np.any(c_sf <= 0):
        bad = grid[(c_cdf <= 0) | (c_sf <= 0)][0]
        raise ValidationError(f"{dist.kind}: log-concavity fails near v={bad:.6g}")

    if isinstance(dist, Uniform):
        nu = min((hi - dist.lo) ** -2, (dist.hi - lo) ** -2)
        mu = max(1.0 / (lo - dist.lo), 1.0 / (dist.hi - hi))
    elif isinstance(dist, Logistic):
        nu = min(float(dist.curvature_cdf(lo)), float(dist.curvature_cdf(hi)))
        mu = max(float(dist.lower_hazard(lo)), float(dist.hazard(hi)))
    else:
        nu = float(min(c_cdf.min(), c_sf.min()))
        mu = float(max(np.abs(np.asarray(dist.lower_hazard(grid))).max(),
                       np.abs(np.asarray(dist.hazard(grid))).max()))

    b_lo = p_low - theta_bar
    bgrid = np.linspace(b_lo, hi, grid_n)
    extra = []
    if isinstance(dist, Normal):
        extra = [dist.mean, dist.mean - dist.sd, dist.mean + dist.sd]
    elif isinstance(dist, Logistic):
        r = dist.scale * math.log(2.0 + math.sqrt(3.0))
        extra = [dist.loc, dist.loc - r, dist.loc + r]
    extra = [e for e in extra if b_lo <= e <= hi]
    pts = np.concatenate([bgrid, extra])
    b_max = float(np.max(dist.pdf(pts)))
    b_prime = float(np.max(np.abs(dist.pdf_prime(pts))))
    return ShockConstants(nu=float(nu), mu=float(mu), b_max=b_max, b_prime_max=b_prime,
                          eta=b_max + p_high * b_prime, working_lo=lo, working_hi=hi,
                          p_high=p_high)


def combine_constants(*consts: ShockConstants) -> ShockConstants:
    """Worst case over several distributions (min nu, max of the rest)."""
    b = max(c.b_max for c in consts)
    bp = max(c.b_prime_max for c in consts)
    p_high = consts[0].p_high
    return ShockConstants(
        nu=min(c.nu for c in consts), mu=max(c.mu for c in consts), b_max=b,
        b_prime_max=bp, eta=b + p_high * bp,
        working_lo=min(c.working_lo for c in consts),
        working_hi=max(c.working_hi for c in consts), p_high=p_high)
