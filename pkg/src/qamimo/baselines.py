"""Reference schedulers: max-SINR (with and without a feedback threshold),
proportional fair, and max-weight-queue over all users."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import SinrReport
from .scheduler import (ScheduleAssignment, _per_beam_argmax, _rates,
                        log_rate, stage2_schedule)

__all__ = ["PfsState", "csio_schedule", "csio_lf_schedule", "pfs_schedule",
           "mwq_schedule", "PFS_FLOOR"]

PFS_FLOOR = 1e-6


def _gamma(report, threshold=0.0):
    if isinstance(report, SinrReport):
        return report.gamma(threshold)
    g = np.asarray(report, dtype=float)
    return np.where(g >= threshold, g, 0.0) if threshold > 0 else g


@dataclass
class PfsState:
    """Per-user EWMA throughput (bits/slot) over a window of ``t_w`` slots."""

    avg: np.ndarray
    t_w: float = 100.0

    @classmethod
    def initial(cls, K: int, t_w: float = 100.0, floor: float = PFS_FLOOR):
        if t_w < 1:
            raise ValueError("PF window must be at least one slot")
        return cls(np.full(K, floor), float(t_w))


def csio_schedule(report, rate_map=log_rate) -> ScheduleAssignment:
    """Each beam goes to the user reporting the highest SINR on it."""
    gamma = _gamma(report)
    winners = _per_beam_argmax(gamma)
    K = gamma.shape[0]
    nfb = int((gamma > 0).any(axis=1).sum())
    return ScheduleAssignment(winners, _rates(winners, gamma, K, rate_map), nfb)


def csio_lf_schedule(report, threshold: float,
                     rate_map=log_rate) -> ScheduleAssignment:
    """Max-SINR among reports with SINR at least ``threshold`` (linear).

    Users with no qualifying report stay silent and count as no feedback.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    gamma = _gamma(report, threshold)
    if threshold == np.inf:
        gamma = np.zeros_like(gamma)
    return csio_schedule(gamma, rate_map)


def pfs_schedule(report, state: PfsState, rate_map=None,
                 bits_per_nat: float = 1.0):
    """Proportional fair assignment and the updated throughput averages.

    The per-beam metric is ``rate / avg``; ``rate_map`` defaults to bits
    per slot, ``bits_per_nat * ln(1 + gamma)``. After scheduling every
    user's average moves toward the bits it was scheduled this slot.
    """
    gamma = _gamma(report)
    if rate_map is None:
        def rate_map(g):
            return bits_per_nat * np.log1p(g)
    K = gamma.shape[0]
    rate = np.where(gamma > 0, rate_map(gamma), 0.0)
    winners = _per_beam_argmax(rate / state.avg[:, None])
    rates = _rates(winners, gamma, K, rate_map)
    a = 1.0 / state.t_w
    new = np.maximum((1.0 - a) * state.avg + a * rates, PFS_FLOOR)
    nfb = int((gamma > 0).any(axis=1).sum())
    return ScheduleAssignment(winners, rates, nfb), PfsState(new, state.t_w)


def mwq_schedule(report, queues, rate_map=log_rate) -> ScheduleAssignment:
    """Queue-weighted assignment with every user feeding back."""
    gamma = _gamma(report)
    return stage2_schedule(gamma, range(gamma.shape[0]), queues, rate_map)
