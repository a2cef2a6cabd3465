"""Two-timescale queue-aware scheduling.

Stage I picks how many users may feed back (``ffca``) and which ones
(``theorem1_policy``, the longest queues). Stage II assigns each beam to
the feedback user with the largest queue-weighted rate.
"""
from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .channel import SinrReport, sinr_logcdf, sinr_pdf, InvalidConfigError

__all__ = [
    "FeedbackPolicy",
    "ScheduleAssignment",
    "eta_hat",
    "eta_table",
    "max_sinr_log_rate",
    "w_hat",
    "u_hat",
    "bisect_s_star",
    "ffca",
    "theorem1_policy",
    "queue_order",
    "s_star_upper_bound",
    "draw_feedback_set",
    "stage2_schedule",
    "queue_update",
    "feedback_cost",
    "log_rate",
]


@dataclass
class FeedbackPolicy:
    """Feedback probabilities broadcast by the base station."""

    p: np.ndarray
    S: float
    valid_from: int = 0
    valid_until: int | None = None

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.p > 0)


@dataclass
class ScheduleAssignment:
    """Beam winners (``-1`` = idle) and per-user rate."""

    winners: np.ndarray
    rates: np.ndarray
    feedback_count: int = 0
    extra: dict = field(default_factory=dict)

    def beams_of(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.winners == k)


def log_rate(gamma):
    """Default rate map, nats per channel use."""
    return np.log1p(gamma)


# -- heavy-traffic per-user rate ---------------------------------------------

def _max_support(n: float, M: int, P: float, tail: float = 1e-13):
    # [lo, hi] where the max of n draws lives, up to mass `tail` on each side
    def logcdf_max(x):
        return n * float(sinr_logcdf(x, M, P))

    lo_target = math.log(tail)
    hi_target = math.log1p(-tail)
    hi = P
    while logcdf_max(hi) < hi_target:
        hi *= 2.0
    lo = 0.0
    if logcdf_max(hi / 2**40) < lo_target:
        lo = optimize.brentq(lambda x: logcdf_max(x) - lo_target, 1e-300, hi)
    return lo, hi


def max_sinr_log_rate(n: float, M: int, P: float) -> float:
    """``E[ln(1 + Y)]`` with ``Y`` the max of ``n`` i.i.d. SINR draws.

    Evaluated as ``int ln(1+x) n f(x) F(x)^(n-1) dx`` by adaptive
    quadrature on the interval carrying all but ~1e-13 of the mass.
    """
    if n <= 0:
        raise ValueError("need a positive number of draws")

    def integrand(x):
        if x <= 0.0:
            return 0.0
        lf = float(sinr_logcdf(x, M, P))
        return math.log1p(x) * n * float(sinr_pdf(x, M, P)) * math.exp((n - 1) * lf)

    lo, hi = _max_support(n, M, P)
    pts = np.linspace(lo, hi, 9)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-11,
                                limit=200)
        total += val
    return total


_ETA_LOCK = threading.Lock()


@functools.lru_cache(maxsize=4096)
def _eta_cached(S: float, M: int, N: int, P: float) -> float:
    return M / S * max_sinr_log_rate(N * S, M, P)


def eta_hat(S: float, M: int, N: int, P: float) -> float:
    """Heavy-traffic mean rate (nats/slot) of a feedback user when ``S``
    users feed back: ``(M/S) E[ln(1 + max of N*S SINR draws)]``.

    Memoised per ``(S, M, N, P)``.
    """
    if S <= 0:
        raise ValueError(f"feedback amount must be positive, got {S}")
    with _ETA_LOCK:
        return _eta_cached(float(S), int(M), int(N), float(P))


def eta_table(K: int, M: int, N: int, P: float) -> np.ndarray:
    """``eta_hat(S)`` for ``S = 0..K`` (entry 0 is 0)."""
    out = np.zeros(K + 1)
    for s in range(1, K + 1):
        out[s] = eta_hat(s, M, N, P)
    return out


# -- Stage I -------------------------------------------------------------------

def queue_order(queues) -> np.ndarray:
    """Users sorted by queue length, longest first, ties to the lower index."""
    q = np.asarray(queues)
    return np.argsort(-q, kind="stable")


def w_hat(S: float, sorted_queues, M: int, N: int, P: float,
          eta: np.ndarray | None = None) -> float:
    """Approximate queue-weighted utility at (possibly fractional) ``S``.

    Linear interpolation between the integer points
    ``W(s) = eta(s) * sum_{k<=s} Q_(k)``.
    """
    q = np.asarray(sorted_queues, dtype=float)
    K = q.size
    if not 1 <= S <= K:
        raise ValueError(f"S must lie in [1, {K}], got {S}")
    s0 = int(math.floor(S))
    frac = S - s0
    eta_at = (lambda s: eta[s]) if eta is not None else (
        lambda s: eta_hat(s, M, N, P))
    prefix = np.cumsum(q)
    val = prefix[s0 - 1] * eta_at(s0) * (1.0 - frac)
    if frac > 0:
        val += prefix[s0] * eta_at(s0 + 1) * frac
    return float(val)


def u_hat(S: float, sorted_queues, V: float, M: int, N: int, P: float,
          eta: np.ndarray | None = None) -> float:
    """Stage-I objective: utility minus ``V`` per unit of feedback."""
    return w_hat(S, sorted_queues, M, N, P, eta) - V * S


def bisect_s_star(U, K: int) -> int:
    """Integer bisection for the maximiser of a concave ``U`` on ``1..K``.

    ``U(0)`` is never evaluated; the step at ``S = 1`` is always taken as
    an ascent. Ties go to the smaller ``S`` (same utility, less feedback).
    """
    if K < 1:
        raise InvalidConfigError("need at least one user")
    if K == 1:
        return 1
    s_min, s_max = 1, K
    s = K // 2
    while s_max - s_min > 1:
        if s <= 1 or U(s) > U(s - 1):
            s_min = s
        else:
            s_max = s
        s = (s_min + s_max) // 2
    return s_max if U(s_max) > U(s_min) else s_min


def theorem1_policy(queues, S: float, slot: int = 0,
                    T: int | None = None) -> FeedbackPolicy:
    """Longest-queue-first feedback probabilities summing to ``S``.

    The ``floor(S)`` longest queues get probability 1, the next one gets
    the fractional part of ``S``, everybody else 0.
    """
    q = np.asarray(queues)
    K = q.size
    if not 0 <= S <= K:
        raise ValueError(f"S must lie in [0, {K}]")
    order = queue_order(q)
    p = np.zeros(K)
    s0 = int(math.floor(S))
    p[order[:s0]] = 1.0
    if s0 < K and S > s0:
        p[order[s0]] = S - s0
    return FeedbackPolicy(p, float(S), slot, None if T is None else slot + T)


def ffca(queues, V: float, M: int, N: int, P: float, K: int | None = None,
         eta: np.ndarray | None = None, slot: int = 0, T: int | None = None):
    """Feedback filtering: optimal feedback amount and its policy.

    Returns ``(S_star, policy)``.
    """
    q = np.asarray(queues, dtype=float)
    K = q.size if K is None else K
    if K < 1:
        raise InvalidConfigError("need at least one user")
    if V < 0:
        raise ValueError("V must be nonnegative")
    if eta is None:
        eta = eta_table(K, M, N, P)
    prefix = np.cumsum(q[queue_order(q)])

    def U(s):
        return prefix[s - 1] * eta[s] - V * s

    s_star = bisect_s_star(U, K)
    return s_star, theorem1_policy(q, s_star, slot, T)


def s_star_upper_bound(q_max: float, M: int, N: int, V: float, K: int) -> float:
    """Lambert-W bound on the optimal feedback amount,
    ``min(exp(W(M N q_max / V)) / N, K)``."""
    from .analysis import lambert_w

    if V == 0:
        return float(K)
    if q_max < 0 or V < 0:
        raise ValueError("q_max and V must be nonnegative")
    c1 = M * N * q_max / V
    return min(math.exp(lambert_w(c1)) / N, float(K))


# -- Stage II ------------------------------------------------------------------

def draw_feedback_set(policy: FeedbackPolicy, rng: np.random.Generator) -> set:
    """Independent Bernoulli(p_k) feedback decisions."""
    chi = rng.random(policy.p.size) < policy.p
    return set(np.flatnonzero(chi).tolist())


def _per_beam_argmax(weights: np.ndarray) -> np.ndarray:
    # lowest index wins ties; beams without a positive weight idle
    winners = np.argmax(weights, axis=0)
    winners[weights.max(axis=0) <= 0.0] = -1
    return winners


def _rates(winners, gamma, K, rate_map):
    rates = np.zeros(K)
    for i, k in enumerate(winners):
        if k >= 0:
            rates[k] += float(rate_map(gamma[k, i]))
    return rates


def stage2_schedule(report: SinrReport | np.ndarray, feedback_set, queues,
                    rate_map=log_rate) -> ScheduleAssignment:
    """Queue-weighted beam assignment among the feedback users.

    Beam ``i`` goes to ``argmax_k Q_k ln(1 + gamma_k^i)`` over feedback
    users that reported it; it idles when no candidate has positive weight.
    ``report`` may also be a precomputed ``(K, M)`` gamma array.
    """
    gamma = report.gamma() if isinstance(report, SinrReport) else np.asarray(report)
    q = np.asarray(queues, dtype=float)
    K = gamma.shape[0]
    mask = np.zeros(K, bool)
    members = list(feedback_set)
    mask[members] = True
    w = np.where(mask[:, None] & (gamma > 0), q[:, None] * np.log1p(gamma), 0.0)
    winners = _per_beam_argmax(w)
    return ScheduleAssignment(winners, _rates(winners, gamma, K, rate_map),
                              int(mask.sum()))


def queue_update(queues, departures, arrivals) -> np.ndarray:
    """One slot of backlog evolution: ``max(0, Q - D) + A``."""
    q = np.asarray(queues, dtype=float)
    d = np.asarray(departures, dtype=float)
    a = np.asarray(arrivals, dtype=float)
    if np.any(d < 0) or np.any(a < 0):
        raise ValueError("departures and arrivals must be nonnegative")
    return np.maximum(q - d, 0.0) + a


def feedback_cost(policy: FeedbackPolicy) -> float:
    """Expected number of feedback users, ``sum_k p_k``."""
    return float(np.sum(policy.p))
