"""Large-deviation decay rates of the worst-case queue.

Everything here works in per-slot packet units: spectral efficiencies in
nats are turned into packets per slot with ``RateParams.kappa`` before
they are compared with arrival rates.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate, optimize

from .channel import sinr_cdf, sinr_pdf
from .scheduler import eta_hat, s_star_upper_bound
from .traffic import ArrivalModel, arrival_lmf

__all__ = [
    "RateParams",
    "HypothesisError",
    "RootFindingError",
    "lambert_w",
    "local_lmf",
    "poisson_departure_lmf",
    "nontrivial_root",
    "rate_integral",
    "i_baseline",
    "mu_b",
    "mu_p_hat",
    "mu_p_tilde",
    "r0",
    "floor_crossing",
    "rate_constant",
    "i_prop_lb",
    "i_prop_lb_numeric",
    "p0T",
    "t_step_penalty",
    "i_prop_T",
]

_EXP_NEG1 = math.exp(-1.0)


class HypothesisError(ValueError):
    """A decay-rate formula was asked for outside its validity range."""


class RootFindingError(RuntimeError):
    """No nontrivial root of the local log-moment function was found."""


@dataclass(frozen=True)
class RateParams:
    """Inputs of the closed-form decay rates.

    ``lam_tot`` is in packets per second, ``L`` in bits, ``BW`` in Hz and
    ``tau`` in seconds per slot. ``V`` is the cost weight in the scaled
    buffer coordinate ``x = Q_max / B`` used by the rate integrals.
    """

    K: int = 40
    M: int = 4
    N: int = 2
    P: float = 10.0
    lam_tot: float = 7500.0
    L: int = 8000
    BW: float = 10e6
    tau: float = 1e-3
    V: float = 1.0
    r0_upper: float = math.inf

    @property
    def kappa(self) -> float:
        """Packets per slot carried by one nat per channel use."""
        return self.BW * self.tau / (self.L * math.log(2.0))

    @property
    def lam(self) -> float:
        """Per-user arrival rate, packets per slot."""
        return self.lam_tot * self.tau / self.K

    @property
    def lam_slot(self) -> float:
        """Total arrivals per slot."""
        return self.lam_tot * self.tau

    def with_(self, **kw) -> "RateParams":
        return replace(self, **kw)


# -- special functions ----------------------------------------------------------

def _lambert_w_scalar(x: float) -> float:
    if math.isnan(x):
        return math.nan
    if x < -_EXP_NEG1:
        if x > -_EXP_NEG1 - 1e-15:
            return -1.0
        raise ValueError(f"Lambert W is real only for x >= -1/e, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return math.inf
    if x < -0.25:
        # branch-point series in p = sqrt(2(e x + 1))
        p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    elif x < math.e:
        w = math.log1p(x) * (1.0 - math.log1p(math.log1p(x)) / (2.0 + math.log1p(x)))
    else:
        l1 = math.log(x)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if abs(dw) <= 4e-16 * (1.0 + abs(w)):
            break
    return w


def lambert_w(x):
    """Principal branch of the Lambert W function (``W e^W = x``).

    Halley iteration started from the branch-point series near ``-1/e``,
    a log1p-based guess on ``(-1/4, e)`` and the two-term asymptotic
    ``ln x - ln ln x`` above ``e``.
    """
    if np.ndim(x) == 0:
        return _lambert_w_scalar(float(x))
    arr = np.asarray(x, dtype=float)
    return np.vectorize(_lambert_w_scalar, otypes=[float])(arr)


# -- local rate function machinery ----------------------------------------------

def poisson_departure_lmf(mu):
    """LMF ``mu(x) (e^theta - 1)`` of Poisson departures.

    ``mu`` is a number or a callable of the scaled queue ``x``.
    """
    rate = mu if callable(mu) else (lambda x: mu)

    def lmf(x, theta):
        return rate(x) * math.expm1(theta)

    return lmf


def local_lmf(x: float, theta: float, arrival: ArrivalModel, departure_lmf) -> float:
    """``g(x, theta) = Lambda_A(theta) + Lambda_D(x, -theta)``."""
    return arrival_lmf(arrival, theta) + departure_lmf(x, -theta)


def nontrivial_root(g, x: float | None = None, h: float = 1e-7) -> float:
    """Nonzero root of a convex ``g`` with ``g(0) = 0``.

    The root is positive when ``g'(0) < 0`` (arrivals slower than service)
    and negative otherwise.
    """
    slope = (g(h) - g(-h)) / (2.0 * h)
    if not math.isfinite(slope) or abs(slope) < 1e-14:
        raise RootFindingError(f"degenerate local LMF at x={x}: g'(0)={slope}")
    sign = 1.0 if slope < 0 else -1.0
    a = 1e-3
    while g(sign * a) >= 0.0:
        a *= 0.5
        if a < 1e-14:
            raise RootFindingError(f"cannot bracket root near zero at x={x}")
    b = 1.0
    while g(sign * b) <= 0.0:
        b *= 2.0
        if b > 1e6:
            raise RootFindingError(f"root beyond search range at x={x}")
    lo, hi = sorted((sign * a, sign * b))
    return optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                           maxiter=500)


def rate_integral(theta_star, points=None, epsabs: float = 1e-8):
    """``int_0^1 theta*(x) dx`` by adaptive quadrature.

    Returns ``(value, error_estimate)``.
    """
    val, err = integrate.quad(theta_star, 0.0, 1.0, epsabs=epsabs, epsrel=1e-10,
                              limit=400, points=points)
    return val, err


# -- baseline (CSI-only) -------------------------------------------------------

def mu_b(params: RateParams, form: str = "exact") -> float:
    """Mean CSI-only departures of one user, packets per slot."""
    k = params
    if form == "exact":
        # eta_hat already accounts for the M beams shared by K users
        return k.kappa * eta_hat(k.K, k.M, k.N, k.P)
    if form == "asymptotic":
        return k.kappa * k.M * math.log(k.P * math.log(k.N * k.K)) / k.K
    raise ValueError(f"unknown form {form!r}")


def i_baseline(params: RateParams, form: str = "exact") -> float:
    """Decay rate of the CSI-only scheduler, ``log(mu_b / lambda)``."""
    mb = mu_b(params, form)
    if not mb > params.lam:
        raise HypothesisError(
            f"CSI-only decay rate needs mu_b > lambda: mu_b={mb:.6g}, "
            f"lambda={params.lam:.6g} packets/slot")
    return math.log(mb / params.lam)


# -- proposed scheme -----------------------------------------------------------

def r0(params: RateParams, upper: float | None = None) -> float:
    """Mean single-beam rate ``int_0^U ln(1+x) dF(x)`` in nats."""
    U = params.r0_upper if upper is None else upper
    M, P = params.M, params.P

    def f(x):
        return math.log1p(x) * float(sinr_pdf(x, M, P))

    if math.isinf(U):
        # tail where the integrand is below 1e-12 of its scale is dropped
        hi = P
        while f(hi) > 1e-16:
            hi *= 2.0
        pts = [0.0, 1.0, P, hi]
        return sum(integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
                   for a, b in zip(pts[:-1], pts[1:]))
    return integrate.quad(f, 0.0, U, epsabs=1e-14, epsrel=1e-12, limit=200)[0]


def mu_p_hat(x: float, params: RateParams) -> float:
    """Departure rate of the longest queue at scaled level ``x``.

    ``kappa M ln(P ln(N S)) / S`` with ``S`` the Lambert-W feedback bound
    at ``q_max = x``. Returns ``-inf`` where ``P ln(N S) <= 0`` (the
    logarithm is undefined there; it tends to ``-inf`` as ``x -> 0``).
    """
    k = params
    S = s_star_upper_bound(x, k.M, k.N, k.V, k.K)
    inner = k.P * math.log(k.N * S)
    if inner <= 0.0:
        return -math.inf
    return k.kappa * k.M * math.log(inner) / S


def _floor(params: RateParams, r0_val: float | None = None) -> float:
    r = r0(params) if r0_val is None else r0_val
    return params.kappa * params.M * r / params.K


def mu_p_tilde(x: float, params: RateParams, r0_val: float | None = None) -> float:
    """``mu_p_hat`` floored at the single-beam share ``kappa M r0 / K``."""
    return max(mu_p_hat(x, params), _floor(params, r0_val))


def _peak(params: RateParams) -> float:
    res = optimize.minimize_scalar(lambda x: -mu_p_hat(x, params),
                                   bounds=(1e-12, 1.0), method="bounded",
                                   options={"xatol": 1e-12})
    return float(res.x)


def floor_crossing(params: RateParams, r0_val: float | None = None) -> float:
    """Cutoff ``eps`` where ``mu_p_hat`` first reaches the floor.

    Clamped to ``(0, 1]``: 1 when the floor dominates the whole range.
    """
    fl = _floor(params, r0_val)
    xp = _peak(params)
    if mu_p_hat(xp, params) <= fl:
        return 1.0
    lo = xp
    while mu_p_hat(lo, params) > fl:
        lo *= 0.5
        if lo < 1e-300:
            return lo
    return optimize.brentq(lambda x: mu_p_hat(x, params) - fl, lo, xp,
                           xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def rate_constant(params: RateParams, eps: float) -> float:
    """``C = int_eps^1 [ln(N ln(P W(MNx/V))) - W(MNx/V)] dx``."""
    k = params
    c = k.M * k.N / k.V

    def f(x):
        w = _lambert_w_scalar(c * x)
        return math.log(k.N * math.log(k.P * w)) - w

    return integrate.quad(f, eps, 1.0, epsabs=1e-12, epsrel=1e-12, limit=400)[0]


def _hypothesis(params: RateParams) -> None:
    # literal inf over [0, 1] is -inf (mu_p_hat -> -inf at 0); enforce the
    # negative-drift condition on the decreasing branch instead
    xs = [1.0]
    xp = _peak(params)
    if xp < 1.0:
        xs.append(xp)
    worst = min(mu_p_hat(x, params) for x in xs)
    if not params.lam < worst:
        raise HypothesisError(
            f"proposed decay rate needs lambda < mu_p on the decreasing branch: "
            f"lambda={params.lam:.6g}, min mu_p={worst:.6g} packets/slot")


def i_prop_lb(params: RateParams, details: bool = False):
    """Closed-form lower bound on the proposed scheme's decay rate.

    ``(1-eps) ln K + ln(kappa M / lambda_slot) + eps ln r0 + C``.
    With ``details`` a dict of the individual terms is returned as well.
    """
    _hypothesis(params)
    _warn_if_clamped(params)
    r = r0(params)
    eps = floor_crossing(params, r)
    C = rate_constant(params, eps)
    k = params
    terms = {
        "log_K": (1.0 - eps) * math.log(k.K),
        "log_ratio": math.log(k.kappa * k.M / k.lam_slot),
        "log_r0": eps * math.log(r),
        "C": C,
        "eps": eps,
        "r0": r,
    }
    val = terms["log_K"] + terms["log_ratio"] + terms["log_r0"] + C
    return (val, terms) if details else val


def i_prop_lb_numeric(params: RateParams, generic_root: bool = False) -> float:
    """``int_0^1 theta*(x) dx`` evaluated directly from ``mu_p_tilde``.

    With ``generic_root`` each ``theta*(x)`` comes from a numerical root of
    the Poisson/Poisson local LMF instead of ``log(mu/lambda)``.
    """
    r = r0(params)
    eps = floor_crossing(params, r)
    arrival = ArrivalModel("poisson", rate=params.lam)
    dep = poisson_departure_lmf(lambda x: mu_p_tilde(x, params, r))

    if generic_root:
        def theta(x):
            return nontrivial_root(lambda t: local_lmf(x, t, arrival, dep), x)
    else:
        def theta(x):
            return math.log(mu_p_tilde(x, params, r) / params.lam)

    pts = [eps] if 0.0 < eps < 1.0 else None
    return rate_integral(theta, points=pts, epsabs=1e-11)[0]


# -- T-step feedback -------------------------------------------------------------

def _inverse_sinr_cdf(u: np.ndarray, M: int, P: float) -> np.ndarray:
    # solve x/P + (M-1) ln(1+x) = -ln(1-u) by bracketed Newton
    y = -np.log1p(-u)
    lo = np.zeros_like(y)
    hi = P * y
    x = hi.copy()
    for _ in range(200):
        h = x / P + (M - 1) * np.log1p(x) - y
        lo = np.where(h < 0, x, lo)
        hi = np.where(h >= 0, x, hi)
        step = h / (1.0 / P + (M - 1) / (1.0 + x))
        xn = x - step
        bad = (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        if np.all(np.abs(xn - x) <= 1e-14 * (1.0 + np.abs(x))):
            return xn
        x = xn
    return x


def p0T(T: int, arrival: ArrivalModel, params: RateParams, n_samples: int = 100_000,
        rng: np.random.Generator | None = None, return_all: bool = False):
    """Monte-Carlo estimate of ``Pr{sum_{tau=1}^{T-1} v(tau) > 0}``.

    ``v = A1 - A2 - d``: two independent arrival streams and the
    best-effort departure ``d = (BW tau / L) log2(1 + P X)`` of a user
    served every slot, with ``X`` drawn from the SINR law by inverse CDF.
    ``T = 1`` returns 1 by convention. With ``return_all`` the estimates
    for every ``T' = 1..T`` (same sample paths) are returned.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if n_samples < 1000:
        raise ValueError("p0T needs at least 1000 samples")
    if T == 1 and not return_all:
        return 1.0
    rng = np.random.default_rng() if rng is None else rng
    steps = max(T - 1, 1)
    a1 = _arrival_paths(arrival, rng, (n_samples, steps))
    a2 = _arrival_paths(arrival, rng, (n_samples, steps))
    u = rng.random((n_samples, steps))
    X = _inverse_sinr_cdf(u, params.M, params.P)
    d = params.BW * params.tau / params.L * np.log2(1.0 + params.P * X)
    paths = np.cumsum(a1 - a2 - d, axis=1)
    probs = np.concatenate([[1.0], np.mean(paths > 0, axis=0)])
    if return_all:
        return probs[:T]
    return float(probs[T - 1])


def _arrival_paths(arrival, rng, shape):
    if arrival.kind == "poisson":
        return rng.poisson(arrival.rate, size=shape).astype(float)
    if arrival.kind == "deterministic":
        return np.full(shape, float(arrival.rate))
    return (rng.random(shape) < arrival.p) * float(arrival.batch)


def t_step_penalty(mu: float, lam: float, p0: float) -> float:
    """Per-level loss in decay rate from stale feedback, in ``[0, 1]``.

    ``(1/D) ln(e^D - (e^D - 1) p0)`` with ``D = mu - lam``; 0 at ``p0 = 1``
    and 1 at ``p0 = 0``.
    """
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must be a probability")
    if p0 == 1.0:
        return 0.0
    D = mu - lam
    if math.isinf(D):
        return 1.0 if D > 0 else 0.0
    if abs(D) < 1e-12:
        return 1.0 - p0
    if D > 30.0:
        # ln(e^D (1-p0) + p0) = D + ln(1 - p0 + p0 e^-D)
        return 1.0 + math.log1p(-p0 + p0 * math.exp(-D)) / D
    return math.log1p(math.expm1(D) * (1.0 - p0)) / D


def i_prop_T(T: int, params: RateParams, p0: float | None = None,
             arrival: ArrivalModel | None = None, n_samples: int = 100_000,
             rng: np.random.Generator | None = None) -> float:
    """Lower bound on the decay rate when feedback is refreshed every ``T``
    slots: the ``T = 1`` bound minus the integrated stale-feedback penalty.
    """
    base = i_prop_lb(params)
    if T == 1:
        return base
    if p0 is None:
        arrival = arrival or ArrivalModel("poisson", rate=params.lam)
        p0 = p0T(T, arrival, params, n_samples, rng)
    if p0 == 1.0:
        return base
    r = r0(params)
    eps = floor_crossing(params, r)

    def pen(x):
        return t_step_penalty(mu_p_tilde(x, params, r), params.lam, p0)

    pts = [eps] if 0.0 < eps < 1.0 else None
    loss = integrate.quad(pen, 0.0, 1.0, epsabs=1e-10, epsrel=1e-10, limit=400,
                          points=pts)[0]
    return base - loss


def _warn_if_clamped(params: RateParams) -> None:
    if s_star_upper_bound(1.0, params.M, params.N, params.V, params.K) >= params.K:
        warnings.warn("feedback bound clamps at K inside [0, 1]; the closed form "
                      "ignores the clamp", RuntimeWarning, stacklevel=3)
