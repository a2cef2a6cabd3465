"""Bursty packet arrivals and their log-moment generating functions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ArrivalModel", "draw_arrivals", "arrival_lmf"]

_KINDS = ("poisson", "bernoulli_batch", "deterministic")


@dataclass(frozen=True)
class ArrivalModel:
    """Per-user i.i.d. arrival law, in packets per slot.

    ``kind`` is one of ``poisson`` (mean ``rate``), ``deterministic``
    (exactly ``rate`` packets, must be an integer) or ``bernoulli_batch``
    (a batch of ``batch`` packets with probability ``p``; ``rate`` is then
    derived as ``p * batch``).
    """

    kind: str = "poisson"
    rate: float = 0.0
    p: float = 0.0
    batch: int = 1
    packet_bits: int = 8000

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown arrival kind {self.kind!r}")
        if self.kind == "bernoulli_batch":
            if not 0.0 <= self.p <= 1.0 or self.batch < 1:
                raise ValueError("bernoulli_batch needs 0 <= p <= 1, batch >= 1")
            object.__setattr__(self, "rate", self.p * self.batch)
        if self.rate < 0:
            raise ValueError("arrival rate must be nonnegative")
        if self.kind == "deterministic" and self.rate != int(self.rate):
            raise ValueError("deterministic arrivals need an integer rate")

    @property
    def mean(self) -> float:
        return self.rate

    def with_rate(self, rate: float) -> "ArrivalModel":
        """Same law rescaled to mean ``rate`` (batch arrivals keep the batch)."""
        if self.kind == "bernoulli_batch":
            return ArrivalModel(self.kind, p=rate / self.batch, batch=self.batch,
                                packet_bits=self.packet_bits)
        return ArrivalModel(self.kind, rate=rate, packet_bits=self.packet_bits)


def draw_arrivals(model: ArrivalModel, K: int, rng: np.random.Generator,
                  n_slots: int | None = None) -> np.ndarray:
    """Packets arriving for ``K`` users, shape ``(K,)`` or ``(n_slots, K)``."""
    shape = (K,) if n_slots is None else (n_slots, K)
    if model.kind == "poisson":
        return rng.poisson(model.rate, size=shape).astype(np.int64)
    if model.kind == "deterministic":
        return np.full(shape, int(model.rate), dtype=np.int64)
    hits = rng.random(size=shape) < model.p
    return hits.astype(np.int64) * model.batch


def arrival_lmf(model: ArrivalModel, theta: float) -> float:
    """``log E[exp(theta * A)]`` for one user and one slot."""
    if model.kind == "poisson":
        return model.rate * math.expm1(theta)
    if model.kind == "deterministic":
        return model.rate * theta
    return math.log1p(model.p * math.expm1(theta * model.batch))
