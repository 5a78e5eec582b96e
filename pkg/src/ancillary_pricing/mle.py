"""Regularized maximum likelihood for binary purchase data.

An :class:`EstimatorState` keeps the observations of one product (focal,
ancillary or bundle), its design matrix ``lam*I + sum x x^T`` with inverse and
log-determinant maintained by rank-one updates, and the current estimate.

The estimate minimises ``-LL(theta) + lam*nu*||theta||^2`` over the ball
``||theta|| <= theta_bar``.  The objective is strongly convex, so the solver
runs warm-started Newton steps with Armijo backtracking; when a Newton step
would leave the ball it solves the quadratic model restricted to the ball
instead.  The objective, gradient and Hessian at the last solution are cached
so a refit only has to add the new observations' terms before stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConvergenceError, DomainError
from .shocks import Logistic, Normal, ShockConstants, ShockDistribution, Uniform

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

FIT_TOL = 1e-8
FIT_MAX_ITER = 500
CLAMP_MARGIN = 1e-12
ARMIJO = 1e-4


class Tag(str, Enum):
    FOCAL = "focal"
    ANCILLARY = "ancillary"
    BUNDLE = "bundle"


@dataclass(frozen=True)
class ConfidenceInterval:
    lcb: float
    ucb: float

    def __post_init__(self):
        if self.lcb > self.ucb:
            raise ValueError(f"empty interval [{self.lcb}, {self.ucb}]")

    def contains(self, v: float) -> bool:
        return self.lcb <= v <= self.ucb


# -- per-observation loss terms ---------------------------------------------------
#
# For an observation (p, x, d) with u = p - x.theta the negative log-likelihood
# term is -log(1-F(u)) if d == 1 else -log F(u).  Kernels return its value and
# first two derivatives in u; the chain rule gives grad = -l' x, hess = l'' x x^T.

_KIND_CODES = {Uniform: 0, Normal: 1, Logistic: 2}


def _kind_params(dist: ShockDistribution):
    code = _KIND_CODES.get(type(dist))
    if code is None:
        return None
    if code == 0:
        return code, dist.lo, dist.hi
    if code == 1:
        return code, dist.mean, dist.sd
    return code, dist.loc, dist.scale


def _loss_terms_numpy(dist: ShockDistribution, u: np.ndarray, d: np.ndarray):
    buy = d.astype(bool)
    with np.errstate(divide="ignore"):
        val = np.where(buy, -np.log(dist.sf(u)), -np.log(dist.cdf(u)))
    d1 = np.where(buy, dist.hazard(u), -np.asarray(dist.lower_hazard(u)))
    d2 = np.where(buy, dist.curvature_sf(u), dist.curvature_cdf(u))
    return np.asarray(val, float), np.asarray(d1, float), np.asarray(d2, float)


def _objective_numpy(dist, theta, X, p, d, clo, chi, need_derivs):
    u = p - X @ theta
    clamped = int(np.count_nonzero((u < clo) | (u > chi)))
    u = np.clip(u, clo, chi)
    val, d1, d2 = _loss_terms_numpy(dist, u, d)
    if not need_derivs:
        return float(val.sum()), None, None, clamped
    grad = -(X.T @ d1)
    hess = (X * d2[:, None]).T @ X
    return float(val.sum()), grad, hess, clamped


if numba is not None:

    @numba.njit(cache=True)
    def _objective_kernel(code, a, b, theta, X, p, d, n, clo, chi, need_val, need_derivs):
        dim = theta.shape[0]
        grad = np.zeros(dim)
        hess = np.zeros((dim, dim))
        val = 0.0
        clamped = 0
        inv_sqrt2 = 0.7071067811865476
        log_sqrt_2pi = 0.9189385332046727
        width = b - a
        g0 = g1 = h00 = h01 = h11 = 0.0
        for i in range(n):
            if dim == 2:
                xt = X[i, 0] * theta[0] + X[i, 1] * theta[1]
            else:
                xt = 0.0
                for k in range(dim):
                    xt += X[i, k] * theta[k]
            u = p[i] - xt
            if u < clo:
                u = clo
                clamped += 1
            elif u > chi:
                u = chi
                clamped += 1
            buy = d[i] != 0
            if code == 0:
                r = b - u if buy else u - a
                if need_val:
                    val -= math.log(r / width)
                l1 = 1.0 / r if buy else -1.0 / r
                l2 = l1 * l1
            elif code == 1:
                z = (u - a) / b
                phi = math.exp(-0.5 * z * z - log_sqrt_2pi)
                if buy:
                    S = 0.5 * math.erfc(z * inv_sqrt2)
                    if need_val:
                        val -= math.log(S)
                    h = phi / S
                    l1 = h / b
                    l2 = h * (h - z) / (b * b)
                else:
                    F = 0.5 * math.erfc(-z * inv_sqrt2)
                    if need_val:
                        val -= math.log(F)
                    m = phi / F
                    l1 = -m / b
                    l2 = m * (z + m) / (b * b)
            else:
                z = (u - a) / b
                ez = math.exp(-abs(z))
                if z >= 0:
                    F = 1.0 / (1.0 + ez)
                    S = ez * F
                else:
                    S = 1.0 / (1.0 + ez)
                    F = ez * S
                if need_val:
                    # -log S = log(1+e^z), -log F = log(1+e^-z)
                    val += math.log1p(ez) + (max(z, 0.0) if buy else max(-z, 0.0))
                l1 = F / b if buy else -S / b
                l2 = F * S / (b * b)
            if not need_derivs:
                continue
            if dim == 2:
                x0 = X[i, 0]
                x1 = X[i, 1]
                g0 -= l1 * x0
                g1 -= l1 * x1
                h00 += l2 * x0 * x0
                h01 += l2 * x0 * x1
                h11 += l2 * x1 * x1
            else:
                for k in range(dim):
                    grad[k] -= l1 * X[i, k]
                    for m2 in range(k, dim):
                        hess[k, m2] += l2 * X[i, k] * X[i, m2]
        if need_derivs and dim == 2:
            grad[0] = g0
            grad[1] = g1
            hess[0, 0] = h00
            hess[0, 1] = h01
            hess[1, 1] = h11
        if need_derivs:
            for k in range(dim):
                for m2 in range(k):
                    hess[k, m2] = hess[m2, k]
        return val, grad, hess, clamped


# -- estimator state ------------------------------------------------------------


@dataclass
class EstimatorState:
    """Data, design matrix and estimate for one product.

    ``nu`` scales the ridge penalty (``lam * nu``); ``working`` is the interval
    the likelihood arguments ``p - x.theta`` are clamped to before taking logs.
    """

    tag: Tag
    dim: int
    lam: float = 1.0
    theta_bar: float = 1.0
    nu: float = 1.0
    working: tuple[float, float] = (-math.inf, math.inf)
    sigma: np.ndarray = field(default=None, repr=False)
    sigma_inv: np.ndarray = field(default=None, repr=False)
    logdet: float = 0.0
    theta_hat: np.ndarray = field(default=None)
    n: int = 0
    clamps: int = 0
    fits: int = 0

    def __post_init__(self):
        self.tag = Tag(self.tag)
        d = self.dim
        if self.sigma is None:
            self.sigma = self.lam * np.eye(d)
            self.sigma_inv = np.eye(d) / self.lam
            self.logdet = d * math.log(self.lam)
        else:
            self.sigma = np.array(self.sigma, dtype=float)
            if self.sigma_inv is None:
                self.sigma_inv = np.linalg.inv(self.sigma)
                self.logdet = float(np.linalg.slogdet(self.sigma)[1])
        self.theta_hat = np.zeros(d) if self.theta_hat is None else np.array(self.theta_hat, dtype=float)
        cap = 64
        self._X = np.zeros((cap, d))
        self._p = np.zeros(cap)
        self._d = np.zeros(cap, dtype=np.int8)
        # objective cache: value/grad/hess at _c_theta over the first _c_n points
        self._c_n = 0
        self._c_theta = self.theta_hat.copy()
        self._c_val = 0.0
        self._c_grad = np.zeros(d)
        self._c_hess = np.zeros((d, d))
        self._fitted_n = 0

    # -- observations --------------------------------------------------------
    @property
    def prices(self) -> np.ndarray:
        return self._p[: self.n]

    @property
    def features(self) -> np.ndarray:
        return self._X[: self.n]

    @property
    def demands(self) -> np.ndarray:
        return self._d[: self.n]

    @property
    def observations(self) -> list[tuple[float, np.ndarray, int]]:
        return [(float(p), x.copy(), int(y)) for p, x, y in zip(self.prices, self.features, self.demands)]

    @property
    def needs_fit(self) -> bool:
        return self._fitted_n != self.n

    def norm_inv(self, x: np.ndarray) -> float:
        """``||x||`` in the inverse design-matrix metric."""
        si = self.sigma_inv
        if self.dim == 2:
            return math.sqrt(max(si[0, 0] * x[0] * x[0] + 2 * si[0, 1] * x[0] * x[1] + si[1, 1] * x[1] * x[1], 0.0))
        return math.sqrt(max(float(x @ si @ x), 0.0))

    def audit(self, atol: float = 1e-8) -> bool:
        """Recompute the design matrix from stored features and compare."""
        X = self.features
        sigma = self.lam * np.eye(self.dim) + X.T @ X
        return (np.allclose(sigma, self.sigma, atol=atol, rtol=1e-10)
                and np.allclose(np.linalg.inv(sigma), self.sigma_inv, atol=atol, rtol=1e-8)
                and abs(np.linalg.slogdet(sigma)[1] - self.logdet) <= 1e-8 * max(1.0, abs(self.logdet)))


def new_state(tag, dim: int, lam: float = 1.0, theta_bar: float = 1.0,
              constants: ShockConstants | None = None) -> EstimatorState:
    """Fresh estimator with the ridge scale and clamp interval from ``constants``."""
    if constants is None:
        return EstimatorState(tag, dim, lam, theta_bar)
    return EstimatorState(tag, dim, lam, theta_bar, nu=constants.nu,
                          working=(constants.working_lo, constants.working_hi))


def update(state: EstimatorState, price: float, x, demand: int) -> EstimatorState:
    """Append one observation and apply the rank-one design-matrix update.

    The estimate is not refit; call :func:`fit` when the policy wants it.
    """
    x = np.asarray(x, dtype=float)
    if state.n == state._p.size:
        cap = 2 * state._p.size
        state._X = np.resize(state._X, (cap, state.dim))
        state._p = np.resize(state._p, cap)
        state._d = np.resize(state._d, cap)
    i = state.n
    state._X[i] = x
    state._p[i] = price
    state._d[i] = 1 if demand else 0
    state.n += 1
    if x.any():
        state.sigma += np.outer(x, x)
        si_x = state.sigma_inv @ x
        denom = 1.0 + float(x @ si_x)
        state.sigma_inv -= np.outer(si_x, si_x) / denom
        state.logdet += math.log(denom)
    return state


# -- likelihood -------------------------------------------------------------------


def _as_arrays(observations):
    if isinstance(observations, EstimatorState):
        return observations.prices, observations.features, observations.demands
    if len(observations) == 0:
        return np.zeros(0), np.zeros((0, 1)), np.zeros(0, dtype=np.int8)
    p = np.array([o[0] for o in observations], dtype=float)
    X = np.array([np.atleast_1d(o[1]) for o in observations], dtype=float)
    d = np.array([o[2] for o in observations], dtype=np.int8)
    return p, X, d


def log_likelihood(dist: ShockDistribution, observations, theta) -> float:
    """Sum of ``log(1-F(p - x.theta))`` over purchases and ``log F(...)`` otherwise.

    ``observations`` is a sequence of ``(price, x, demand)`` or an
    :class:`EstimatorState`.

    Raises
    ------
    DomainError
        If some ``p - x.theta`` falls outside the open support of ``dist``.
    """
    p, X, d = _as_arrays(observations)
    if p.size == 0:
        return 0.0
    u = p - X @ np.atleast_1d(np.asarray(theta, dtype=float))
    lo, hi = dist.support()
    if np.any(u <= lo) or np.any(u >= hi):
        raise DomainError(f"likelihood argument outside ({lo}, {hi})")
    val, _, _ = _loss_terms_numpy(dist, u, d)
    return -float(val.sum())


def _clamp_bounds(state: EstimatorState, dist: ShockDistribution):
    lo, hi = state.working
    s_lo, s_hi = dist.support()
    lo, hi = max(lo, s_lo), min(hi, s_hi)
    return lo + CLAMP_MARGIN, hi - CLAMP_MARGIN


def _raw_objective(state, dist, theta, start, stop, need_derivs=True, need_val=True):
    """Negative log-likelihood over observations ``start:stop`` (no penalty)."""
    clo, chi = _clamp_bounds(state, dist)
    X = state._X[start:stop]
    p = state._p[start:stop]
    d = state._d[start:stop]
    kp = _kind_params(dist)
    if numba is not None and kp is not None:
        code, a, b = kp
        val, g, h, c = _objective_kernel(code, a, b, theta, X, p, d, stop - start,
                                         clo, chi, need_val, need_derivs)
    else:
        val, g, h, c = _objective_numpy(dist, theta, X, p, d, clo, chi, need_derivs)
    state.clamps += c
    return (val if need_val else None), g, h


def objective(state: EstimatorState, dist: ShockDistribution, theta, need_derivs: bool = True):
    """Penalised negative log-likelihood with gradient and Hessian."""
    theta = np.asarray(theta, dtype=float)
    val, g, h = _raw_objective(state, dist, theta, 0, state.n, need_derivs)
    reg = state.lam * state.nu
    val += reg * float(theta @ theta)
    if need_derivs:
        g = g + 2 * reg * theta
        h = h + 2 * reg * np.eye(state.dim)
    return val, g, h


def _project(theta, radius):
    nrm = math.sqrt(float(theta @ theta))
    return theta if nrm <= radius else theta * (radius / nrm)


def gradient_mapping_norm(theta, grad, radius) -> float:
    """``||theta - P(theta - grad)||`` with unit step; zero exactly at the optimum."""
    return float(np.linalg.norm(theta - _project(theta - grad, radius)))


def _ball_newton_point(theta, g, H, radius):
    """Minimise the quadratic model over the ball via its secular equation."""
    w, V = np.linalg.eigh(H)
    c = V.T @ (H @ theta - g)

    def point(kappa):
        return V @ (c / (w + kappa))

    lo, hi = 0.0, max(1.0, float(np.linalg.norm(c)) / radius)
    while np.linalg.norm(point(hi)) > radius:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(point(mid)) > radius:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    return _project(point(hi), radius)


def fit(state: EstimatorState, dist: ShockDistribution, tol: float = FIT_TOL,
        max_iter: int = FIT_MAX_ITER) -> np.ndarray:
    """Refit ``state.theta_hat`` on all stored observations and return it.

    Warm-starts from the previous estimate.  Stops once the gradient-mapping
    norm is at most ``tol``.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations pass without meeting ``tol``.
    """
    d = state.dim
    reg = state.lam * state.nu
    radius = state.theta_bar
    theta = state._c_theta
    if state.n == 0:
        state.theta_hat = np.zeros(d)
        state._fitted_n = 0
        return state.theta_hat
    # bring the cached derivatives up to date with the new observations
    if state._c_n < state.n:
        v, g, h = _raw_objective(state, dist, theta, state._c_n, state.n,
                                 need_val=state._c_val is not None)
        state._c_val = None if v is None else state._c_val + v
        state._c_grad = state._c_grad + g
        state._c_hess = state._c_hess + h
        state._c_n = state.n
    eye2 = 2 * reg * np.eye(d)
    f = None if state._c_val is None else state._c_val + reg * float(theta @ theta)
    g = state._c_grad + 2 * reg * theta
    H = state._c_hess + eye2
    for it in range(max_iter + 1):
        gm = gradient_mapping_norm(theta, g, radius)
        if gm <= tol:
            break
        if it == max_iter:
            raise ConvergenceError(
                f"{state.tag.value} fit: gradient mapping {gm:.3e} after {max_iter} iterations")
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g / max(float(np.trace(H)), 1e-12)
        if np.linalg.norm(theta + step) > radius:
            step = _ball_newton_point(theta, g, H, radius) - theta
        slope = float(g @ step)
        if slope >= 0:
            # model direction not downhill numerically; use a projected gradient step
            step = _project(theta - g / max(np.linalg.eigvalsh(H)[-1], 1e-12), radius) - theta
            slope = float(g @ step)
        # full step first, judged by the gradient mapping alone (no log terms needed)
        cand = theta + step
        _, g_raw, h_raw = _raw_objective(state, dist, cand, 0, state.n, need_val=False)
        g_new = g_raw + 2 * reg * cand
        if gradient_mapping_norm(cand, g_new, radius) < gm:
            theta, g, H, f = cand, g_new, h_raw + eye2, None
            state._c_val, state._c_grad, state._c_hess = None, g_raw, h_raw
            continue
        # safeguard: Armijo backtracking on the objective value
        if f is None:
            v0, _, _ = _raw_objective(state, dist, theta, 0, state.n, need_derivs=False)
            f = v0 + reg * float(theta @ theta)
        alpha = 1.0
        for _ in range(60):
            cand = theta + alpha * step
            v_raw, g_raw, h_raw = _raw_objective(state, dist, cand, 0, state.n)
            f_new = v_raw + reg * float(cand @ cand)
            # below rounding resolution of f the test is noise; take the step
            if (f_new <= f + ARMIJO * alpha * slope or -slope <= 1e-13 * max(1.0, abs(f))
                    or alpha * np.linalg.norm(step) < 1e-15):
                break
            alpha *= 0.5
        theta, f = cand, f_new
        state._c_val, state._c_grad, state._c_hess = v_raw, g_raw, h_raw
        g = g_raw + 2 * reg * theta
        H = h_raw + eye2
    state._c_theta = theta.copy()
    state.theta_hat = theta.copy()
    state._fitted_n = state.n
    state.fits += 1
    return state.theta_hat


# -- confidence machinery -------------------------------------------------------------


def beta_radius(state: EstimatorState, constants: ShockConstants, horizon_T: int) -> float:
    """Confidence radius ``2 sqrt(lam) theta_bar + (2 mu/nu) sqrt(2 log T + log(det S / lam^d))``."""
    det_term = state.logdet - state.dim * math.log(state.lam)
    inner = 2.0 * math.log(horizon_T) + max(det_term, 0.0)
    return 2.0 * math.sqrt(state.lam) * state.theta_bar + constants.ratio * math.sqrt(inner)


def beta_bar(d: int, horizon_T: int, lam: float, theta_bar: float, constants: ShockConstants) -> float:
    """Uniform bound on the confidence radius over the horizon."""
    inner = 2.0 * math.log(horizon_T) + d * math.log((d * lam + horizon_T) / (d * lam))
    return 2.0 * math.sqrt(lam) * theta_bar + constants.ratio * math.sqrt(inner)


def valuation_bounds(state: EstimatorState, beta: float, x) -> ConfidenceInterval:
    """Extremes of ``x.theta`` over the confidence ellipsoid, clipped to the ball.

    The clipped interval contains ``x.theta`` for every ``theta`` in the
    intersection of the ellipsoid and the ball.
    """
    x = np.asarray(x, dtype=float)
    center = float(x @ state.theta_hat)
    width = beta * state.norm_inv(x)
    cap = state.theta_bar * math.sqrt(float(x @ x))
    lcb = min(max(center - width, -cap), cap)
    ucb = min(max(center + width, -cap), cap)
    return ConfidenceInterval(min(lcb, center), max(ucb, center))


def in_confidence_set(state: EstimatorState, theta, beta: float) -> bool:
    """``||theta_hat - theta||_Sigma <= beta``."""
    diff = state.theta_hat - np.asarray(theta, dtype=float)
    return math.sqrt(max(float(diff @ state.sigma @ diff), 0.0)) <= beta


def alt_ancillary_estimate(bundle: EstimatorState, focal: EstimatorState) -> np.ndarray:
    """Ancillary coefficients implied by the bundle and focal estimates."""
    return bundle.theta_hat - focal.theta_hat


def elliptical_potential(X, lam: float = 1.0) -> tuple[float, float]:
    """``sum_t ||x_t||^2`` in the inverse of ``lam*I + sum_{s<t} x_s x_s^T``, and its bound."""
    X = np.asarray(X, dtype=float)
    T, d = X.shape
    inv = np.eye(d) / lam
    total = 0.0
    for x in X:
        ix = inv @ x
        q = float(x @ ix)
        total += q
        inv -= np.outer(ix, ix) / (1.0 + q)
    return total, 2.0 * d * math.log((lam * d + T) / (lam * d))
