"""Slotted downlink simulation and the statistics drawn from it.

Queues are held in bits as 64-bit integers, so packet conservation is exact.
Channels, beams, arrivals and feedback coin flips come from four independent
streams spawned from the run seed; two runs differing only in the scheduler
therefore see the same channels and arrivals.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import stats

from . import kernels
from .channel import (InvalidConfigError, _gamma_from_reports, all_sinrs,
                      draw_beam_block, draw_channel_block, report_arrays)
from .scheduler import eta_table
from .traffic import ArrivalModel, draw_arrivals

__all__ = [
    "SimParams",
    "MetricsTrace",
    "OverflowCurve",
    "DecayFit",
    "InsufficientTailError",
    "run",
    "overflow_curve",
    "overflow_ci",
    "empirical_decay_rate",
    "fifo_delays",
    "growth_fit",
    "boundedness_ratio",
    "SCHEDULERS",
]

SCHEDULERS = tuple(kernels.SCHEDULER_CODES)
_ACC_LIMIT = 2**52  # keep bit counts exactly representable as doubles
PFS_FLOOR = 1e-6


class InsufficientTailError(ValueError):
    """Too few overflow points in the fitting band."""


@dataclass(frozen=True)
class SimParams:
    """One simulation run.

    ``P`` is linear, ``lam_tot`` is packets per second summed over users,
    ``tau`` the slot length in seconds. ``T`` is the Stage-I refresh period
    and ``V`` the feedback price, both only used by ``proposed``.
    ``threshold_db`` applies to ``csio_lf`` and ``t_w`` (slots) to ``pfs``.
    """

    K: int = 40
    M: int = 4
    N: int = 2
    P: float = 10.0
    lam_tot: float = 7500.0
    L: int = 8000
    BW: float = 10e6
    tau: float = 1e-3
    T: int = 1
    V: float = 0.005
    T_tot: int = 110_000
    scheduler: str = "proposed"
    threshold_db: float = 1.0
    t_w: float = 100.0
    arrival: str = "poisson"
    batch: int = 1
    ar_coef: float = 0.0
    beams: str = "fresh"
    seed: int = 0
    warmup: int | None = None
    block: int = 4096

    def __post_init__(self):
        for name in ("K", "M", "N", "L", "T", "T_tot", "block"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidConfigError(f"{name} must be a positive integer, got {v}")
        for name in ("P", "BW", "tau", "t_w"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.lam_tot < 0 or self.V < 0:
            raise InvalidConfigError("lam_tot and V must be nonnegative")
        if self.scheduler not in SCHEDULERS:
            raise InvalidConfigError(
                f"unknown scheduler {self.scheduler!r}; pick one of {SCHEDULERS}")
        if self.beams not in ("fresh", "fixed"):
            raise InvalidConfigError("beams must be 'fresh' or 'fixed'")
        if not 0.0 <= self.ar_coef < 1.0:
            raise InvalidConfigError("ar_coef must satisfy 0 <= a < 1")
        if self.warmup is not None and not 0 <= self.warmup < self.T_tot:
            raise InvalidConfigError("warmup must lie in [0, T_tot)")
        try:
            self.arrival_model()
        except ValueError as exc:
            raise InvalidConfigError(str(exc)) from None
        if self.K < self.M:
            warnings.warn(f"K={self.K} < M={self.M}: some beams will often idle",
                          stacklevel=3)

    @property
    def lam(self) -> float:
        """Per-user arrival rate in packets per slot."""
        return self.lam_tot * self.tau / self.K

    @property
    def n_warmup(self) -> int:
        return self.T_tot // 10 if self.warmup is None else int(self.warmup)

    @property
    def threshold(self) -> float:
        return 10.0 ** (self.threshold_db / 10.0)

    def arrival_model(self) -> ArrivalModel:
        if self.arrival == "bernoulli_batch":
            return ArrivalModel("bernoulli_batch", p=self.lam / self.batch,
                                batch=self.batch, packet_bits=self.L)
        return ArrivalModel(self.arrival, rate=self.lam, packet_bits=self.L)

    def with_(self, **kw) -> "SimParams":
        return replace(self, **kw)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


@dataclass
class MetricsTrace:
    """Per-slot records after warmup plus per-user aggregates.

    ``qmax`` is the longest queue (packets) after each slot's update and
    ``argmax`` its owner (lowest index on ties). ``feedback`` counts the
    users that fed back, ``fb_cost`` is the expected count (``sum p`` for
    the proposed scheme) and ``s_star`` the Stage-I feedback amount.
    Per-user means cover the post-warmup window; ``conservation`` and
    ``little`` cover the whole run, which starts from empty queues.
    """

    params: SimParams
    qmax: np.ndarray
    argmax: np.ndarray
    feedback: np.ndarray
    fb_cost: np.ndarray
    s_star: np.ndarray
    q_mean: np.ndarray
    d_mean: np.ndarray
    a_mean: np.ndarray
    conservation: dict
    little: dict
    backend: str = ""
    served: np.ndarray | None = None
    arrivals: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return self.qmax.size

    @property
    def feedback_mean(self) -> float:
        return float(self.feedback.mean())

    @property
    def throughput(self) -> float:
        """Delivered packets per slot, all users."""
        return float(self.d_mean.sum())

    @property
    def delay(self) -> np.ndarray:
        """Mean FIFO sojourn per user, slots."""
        return self.little["delay"]

    def conserved(self) -> bool:
        c = self.conservation
        return c["arrived"] == c["departed"] + c["final"] - c["initial"]

    def little_gap(self) -> np.ndarray:
        """Relative gap ``|T - Q/D| / (Q/D)`` per user (NaN where D = 0)."""
        lt = self.little
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = lt["q_mean"] / lt["d_mean"]
            return np.abs(lt["delay"] - ratio) / ratio


class _FifoLedger:
    """Arrival history just long enough to date the bits still queued."""

    def __init__(self, K):
        self.blocks = []  # (first slot, arrivals (n, K), cumulative before)
        self.cum_arr = np.zeros(K, dtype=np.int64)
        self.cum_dep = np.zeros(K, dtype=np.int64)
        # per-user sums of slot index times bits
        self.t_arr_user = np.zeros(K, dtype=np.int64)
        self.t_dep_user = np.zeros(K, dtype=np.int64)

    def add(self, slot0, arr, served):
        n = arr.shape[0]
        t = np.arange(slot0, slot0 + n, dtype=np.int64)
        self.blocks.append((slot0, arr, self.cum_arr.copy()))
        self.t_arr_user += (t[:, None] * arr).sum(axis=0)
        self.t_dep_user += (t[:, None] * served).sum(axis=0)
        self.cum_arr += arr.sum(axis=0)
        self.cum_dep += served.sum(axis=0)
        while len(self.blocks) > 1 and np.all(self.blocks[1][2] <= self.cum_dep):
            self.blocks.pop(0)

    def queued_arrival_mass(self):
        # sum of arrival slots over the bits still in queue (the newest ones)
        K = self.cum_arr.size
        mass = np.zeros(K)
        for slot0, arr, before in self.blocks:
            c_hi = before + np.cumsum(arr, axis=0)
            c_lo = c_hi - arr
            part = np.clip(c_hi - np.maximum(c_lo, self.cum_dep), 0, None)
            t = np.arange(slot0, slot0 + arr.shape[0], dtype=float)
            mass += t @ part.astype(float)
        return mass


def _block_inputs(p: SimParams, n, rngs, prev, fixed_beams, lf):
    rng_ch, rng_bm, rng_ar, rng_fb = rngs
    H = draw_channel_block(n, p.K, p.N, p.M, rng_ch, prev, p.ar_coef)
    Phi = fixed_beams if fixed_beams is not None else draw_beam_block(n, p.M, rng_bm)
    best, val = report_arrays(all_sinrs(H, Phi, p.P))
    gamma = _gamma_from_reports(best, val, p.M, p.threshold if lf else 0.0)
    lr = np.ascontiguousarray(np.log1p(gamma))
    bits = np.floor(lr * (p.BW * p.tau / math.log(2.0))).astype(np.int64)
    arr = draw_arrivals(p.arrival_model(), p.K, rng_ar, n) * np.int64(p.L)
    unif = rng_fb.random((n, p.K))
    return H[-1], lr, bits, np.ascontiguousarray(arr), unif


def run(params: SimParams, trace: bool = False, backend=None) -> MetricsTrace:
    """Simulate ``params.T_tot`` slots and collect metrics.

    With ``trace=True`` the per-slot served and arrived packets of every
    user are kept for the whole run (memory ``2 * T_tot * K`` integers).
    ``backend`` overrides the slot-loop implementation (a ``run_block``
    callable); by default the compiled kernel is used when available.
    """
    p = params
    K, M = p.K, p.M
    step = backend or kernels.run_block
    kind = kernels.SCHEDULER_CODES[p.scheduler]
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(p.seed).spawn(4)]
    fixed = draw_beam_block(1, M, rngs[1])[0] if p.beams == "fixed" else None
    eta = (eta_table(K, M, p.N, p.P) if kind == kernels.PROPOSED
           else np.zeros(K + 1))

    q = np.zeros(K, dtype=np.int64)
    prob = np.zeros(K)
    pfs_avg = np.full(K, PFS_FLOOR)
    w0 = p.n_warmup
    n_post = p.T_tot - w0
    rec = {"qmax": np.empty(n_post, np.int64), "argmax": np.empty(n_post, np.int32),
           "feedback": np.empty(n_post, np.int32), "fb_cost": np.empty(n_post),
           "s_star": np.empty(n_post, np.int32)}
    q_sum = np.zeros(K, dtype=np.int64)
    d_sum = np.zeros(K, dtype=np.int64)
    a_sum = np.zeros(K, dtype=np.int64)
    q_sum_all = np.zeros(K, dtype=np.int64)
    ledger = _FifoLedger(K)
    full_served = np.empty((p.T_tot, K), np.int64) if trace else None
    full_arr = np.empty((p.T_tot, K), np.int64) if trace else None
    prev = None

    for slot0 in range(0, p.T_tot, p.block):
        n = min(p.block, p.T_tot - slot0)
        prev, lr, bits, arr, unif = _block_inputs(
            p, n, rngs, prev, fixed, kind == kernels.CSIO_LF)
        out = {"qmax": np.empty(n, np.int64), "argmax": np.empty(n, np.int32),
               "nfb": np.empty(n, np.int32), "fbcost": np.empty(n),
               "sstar": np.empty(n, np.int32),
               "served": np.empty((n, K), np.int64), "q": np.empty((n, K), np.int64)}
        step(kind, lr, bits, arr, unif, q, prob, pfs_avg, eta, float(p.V),
             int(p.L), int(p.T), int(slot0), 1.0 / p.t_w, PFS_FLOOR,
             out["qmax"], out["argmax"], out["nfb"], out["fbcost"],
             out["sstar"], out["served"], out["q"])
        if q.max(initial=0) > _ACC_LIMIT:
            raise OverflowError("queue length exceeds the exact accumulator range")

        ledger.add(slot0, arr, out["served"])
        q_sum_all += out["q"].sum(axis=0)
        if trace:
            full_served[slot0:slot0 + n] = out["served"]
            full_arr[slot0:slot0 + n] = arr
        lo = max(w0 - slot0, 0)
        if lo < n:
            dst = slice(slot0 + lo - w0, slot0 + n - w0)
            rec["qmax"][dst] = out["qmax"][lo:]
            rec["argmax"][dst] = out["argmax"][lo:]
            rec["feedback"][dst] = out["nfb"][lo:]
            rec["fb_cost"][dst] = out["fbcost"][lo:]
            rec["s_star"][dst] = out["sstar"][lo:]
            q_sum += out["q"][lo:].sum(axis=0)
            d_sum += out["served"][lo:].sum(axis=0)
            a_sum += arr[lo:].sum(axis=0)

    L = float(p.L)
    arrived, departed = ledger.cum_arr, ledger.cum_dep
    per_user_soj = _per_user_sojourn(ledger)
    with np.errstate(divide="ignore", invalid="ignore"):
        delay = np.where(departed > 0, per_user_soj / departed, np.nan)
    little = {"q_mean": q_sum_all / (p.T_tot * L), "d_mean": departed / (p.T_tot * L),
              "delay": delay}
    conservation = {"arrived": int(arrived.sum()), "departed": int(departed.sum()),
                    "final": int(q.sum()), "initial": 0,
                    "arrived_per_user": arrived.copy(), "departed_per_user": departed.copy(),
                    "final_per_user": q.copy()}
    return MetricsTrace(
        params=p, qmax=rec["qmax"] / L, argmax=rec["argmax"],
        feedback=rec["feedback"], fb_cost=rec["fb_cost"], s_star=rec["s_star"],
        q_mean=q_sum / (n_post * L), d_mean=d_sum / (n_post * L),
        a_mean=a_sum / (n_post * L), conservation=conservation, little=little,
        backend="custom" if backend is not None else kernels.BACKEND,
        served=full_served, arrivals=full_arr)


def _per_user_sojourn(ledger: _FifoLedger) -> np.ndarray:
    # departed-bit sojourn per user: sum t*served - (sum t*arrived - queued mass)
    return ledger.t_dep_user - ledger.t_arr_user + ledger.queued_arrival_mass()


def fifo_delays(arrivals: np.ndarray, served: np.ndarray) -> np.ndarray:
    """Mean FIFO sojourn (slots) per user from full per-slot records.

    Matches each departed bit with the oldest queued bit: the bit with
    cumulative index ``u`` arrives in the first slot whose cumulative
    arrivals reach ``u`` and leaves in the first slot whose cumulative
    departures reach ``u``. Integrates the difference piecewise over the
    merged breakpoints. NaN for users that never sent anything.
    """
    arrivals = np.asarray(arrivals, dtype=np.int64)
    served = np.asarray(served, dtype=np.int64)
    n, K = arrivals.shape
    out = np.full(K, np.nan)
    for k in range(K):
        ca = np.cumsum(arrivals[:, k])
        cd = np.cumsum(served[:, k])
        total = int(cd[-1]) if n else 0
        if total == 0:
            continue
        # breakpoints of both step functions on (0, total]
        cuts = np.union1d(ca[ca < total], cd[cd < total])
        cuts = np.concatenate(([0], cuts[cuts > 0], [total]))
        mids = cuts[1:]  # right end of each piece, inclusive
        width = np.diff(cuts)
        t_in = np.searchsorted(ca, mids, side="left")
        t_out = np.searchsorted(cd, mids, side="left")
        out[k] = float(np.dot(width, t_out - t_in)) / total
    return out


@dataclass
class OverflowCurve:
    B: np.ndarray
    prob: np.ndarray
    n_slots: int


@dataclass
class DecayFit:
    """Least-squares fit of ``-log Pr(Q_max > B)`` against ``B``."""

    rate: float
    intercept: float
    r2: float
    stderr: float
    band: tuple
    n_points: int


def _qmax_of(trace) -> np.ndarray:
    x = trace.qmax if isinstance(trace, MetricsTrace) else np.asarray(trace, float)
    if x.size == 0:
        raise ValueError("empty trace")
    return x


def overflow_curve(trace, B_grid) -> OverflowCurve:
    """Fraction of recorded slots with ``Q_max > B`` for each ``B``."""
    x = np.sort(_qmax_of(trace))
    B = np.asarray(B_grid, dtype=float)
    above = x.size - np.searchsorted(x, B, side="right")
    return OverflowCurve(B, above / x.size, x.size)


def overflow_ci(trace, B: float, n_batches: int = 20, level: float = 0.95):
    """Overflow probability at ``B`` with a batch-means confidence interval.

    Returns ``(estimate, half_width)``; slots are split into ``n_batches``
    contiguous batches whose means are treated as i.i.d.
    """
    x = _qmax_of(trace)
    if n_batches < 2 or x.size < n_batches:
        raise ValueError("need at least two nonempty batches")
    hit = (x > B).astype(float)
    usable = x.size - x.size % n_batches
    means = hit[:usable].reshape(n_batches, -1).mean(axis=1)
    t = stats.t.ppf(0.5 + level / 2.0, n_batches - 1)
    return float(hit.mean()), float(t * means.std(ddof=1) / math.sqrt(n_batches))


def empirical_decay_rate(curve, band=(1e-4, 1e-1), min_points: int = 4) -> DecayFit:
    """Fit the exponential tail of an overflow curve.

    Only points with probability inside ``band`` are used. ``curve`` is an
    ``OverflowCurve`` or a ``(B, prob)`` pair.
    """
    B, prob = (curve.B, curve.prob) if isinstance(curve, OverflowCurve) else curve
    B = np.asarray(B, dtype=float)
    prob = np.asarray(prob, dtype=float)
    lo, hi = band
    sel = (prob >= lo) & (prob <= hi)
    if sel.sum() < min_points:
        raise InsufficientTailError(
            f"only {int(sel.sum())} overflow points in [{lo:g}, {hi:g}]; "
            f"need {min_points}. Run longer or refine the B grid.")
    x, y = B[sel], -np.log(prob[sel])
    res = stats.linregress(x, y)
    return DecayFit(float(res.slope), float(res.intercept), float(res.rvalue**2),
                    float(res.stderr), (lo, hi), int(sel.sum()))


def growth_fit(trace, start_frac: float = 0.5):
    """Linear fit of ``Q_max`` against slot on the tail of the run.

    Returns ``(slope per slot, R^2)``.
    """
    x = _qmax_of(trace)
    i0 = int(x.size * start_frac)
    res = stats.linregress(np.arange(i0, x.size, dtype=float), x[i0:])
    return float(res.slope), float(res.rvalue**2)


def boundedness_ratio(trace) -> float:
    """Mean ``Q_max`` over the last tenth of the run divided by the run mean."""
    x = _qmax_of(trace)
    m = x.mean()
    if m == 0:
        return 1.0
    return float(x[-max(x.size // 10, 1):].mean() / m)
