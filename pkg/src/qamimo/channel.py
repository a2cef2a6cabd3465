"""Rayleigh MU-MIMO channel with random orthonormal beamforming.

Channel gains, isotropic beam sets, per-beam effective SINR and the
closed-form SINR distribution of a single (user, antenna, beam) triple.
Beam indices are zero-based throughout the package.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

__all__ = [
    "ChannelRealization",
    "BeamSet",
    "SinrReport",
    "InvalidConfigError",
    "complex_normal",
    "draw_channel",
    "draw_channel_block",
    "draw_beams",
    "draw_beam_block",
    "effective_sinr",
    "all_sinrs",
    "build_sinr_report",
    "report_arrays",
    "sinr_cdf",
    "sinr_pdf",
    "sinr_logcdf",
    "check_beam_dominance",
]


class InvalidConfigError(ValueError):
    """Raised for parameter combinations the model does not support."""


@dataclass
class ChannelRealization:
    """Per-slot channel gains, shape ``(K, N, M)``."""

    gains: np.ndarray
    slot_index: int = 0

    @property
    def shape(self):
        return self.gains.shape


@dataclass
class BeamSet:
    """``M`` orthonormal beams stored as the columns of an ``(M, M)`` matrix."""

    beams: np.ndarray

    @property
    def M(self) -> int:
        return self.beams.shape[1]

    def gram(self) -> np.ndarray:
        return self.beams.conj().T @ self.beams


@dataclass
class SinrReport:
    """Best-beam feedback of every (user, antenna) pair.

    Attributes
    ----------
    best_beam : (K, N) int array
        Zero-based index of the strongest beam on each antenna.
    sinr : (K, N) float array
        SINR of that beam (linear scale).
    M : int
        Number of beams.
    """

    best_beam: np.ndarray
    sinr: np.ndarray
    M: int

    @property
    def K(self) -> int:
        return self.sinr.shape[0]

    def antennas_on(self, k: int, i: int) -> np.ndarray:
        """Antennas of user ``k`` that reported beam ``i``."""
        return np.flatnonzero(self.best_beam[k] == i)

    def gamma(self, threshold: float = 0.0) -> np.ndarray:
        """Per-user, per-beam reported SINR, shape ``(K, M)``.

        Entry ``(k, i)`` is the largest SINR user ``k`` fed back for beam
        ``i``, or 0 when no antenna of ``k`` picked ``i``. Reports below
        ``threshold`` are dropped.
        """
        return _gamma_from_reports(self.best_beam, self.sinr, self.M, threshold)


def _gamma_from_reports(best, sinr, M, threshold=0.0):
    onehot = best[..., None] == np.arange(M)
    keep = sinr >= threshold if threshold > 0 else np.ones(sinr.shape, bool)
    vals = np.where(onehot & keep[..., None], sinr[..., None], 0.0)
    # reduce over the antenna axis
    return vals.max(axis=-2)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


def _check_ar(ar_coef: float) -> None:
    if not 0.0 <= ar_coef < 1.0:
        raise InvalidConfigError(
            f"AR(1) coefficient must satisfy 0 <= a < 1, got {ar_coef}"
        )


def draw_channel(K: int, N: int, M: int, rng: np.random.Generator,
                 prev: ChannelRealization | None = None,
                 ar_coef: float = 0.0) -> ChannelRealization:
    """Draw one slot of channel gains.

    With ``ar_coef == 0`` (or no previous realization) the gains are fresh
    i.i.d. CN(0, 1) draws. Otherwise ``h(t) = a h(t-1) + sqrt(1-a^2) w(t)``,
    which keeps the CN(0, 1) marginal.
    """
    _check_ar(ar_coef)
    w = complex_normal(rng, (K, N, M))
    if prev is None or ar_coef == 0.0:
        return ChannelRealization(w, 0 if prev is None else prev.slot_index + 1)
    g = ar_coef * prev.gains + np.sqrt(1.0 - ar_coef**2) * w
    return ChannelRealization(g, prev.slot_index + 1)


def draw_channel_block(n: int, K: int, N: int, M: int,
                       rng: np.random.Generator,
                       prev: np.ndarray | None = None,
                       ar_coef: float = 0.0) -> np.ndarray:
    """Draw ``n`` consecutive slots of gains, shape ``(n, K, N, M)``.

    ``prev`` is the last slot of the previous block (AR(1) mode only).
    """
    _check_ar(ar_coef)
    w = complex_normal(rng, (n, K, N, M))
    if ar_coef == 0.0:
        return w
    s = np.sqrt(1.0 - ar_coef**2)
    out = np.empty_like(w)
    if prev is None:
        # stationary start: the first slot is a plain CN(0, 1) draw
        out[0] = w[0]
    else:
        out[0] = ar_coef * prev + s * w[0]
    if n > 1:
        out[1:], _ = signal.lfilter([s], [1.0, -ar_coef], w[1:],
                                        axis=0, zi=(ar_coef * out[0])[None])
    return out


def _fix_phase(q: np.ndarray) -> np.ndarray:
    # rotate each column so its first nonzero entry is real-positive
    idx = np.argmax(np.abs(q) > 1e-300, axis=-2)
    lead = np.take_along_axis(q, idx[..., None, :], axis=-2)
    return q * (np.abs(lead) / lead)


def draw_beams(M: int, rng: np.random.Generator) -> BeamSet:
    """Draw an isotropically distributed orthonormal beam set."""
    if M < 1:
        raise InvalidConfigError(f"M must be >= 1, got {M}")
    return BeamSet(draw_beam_block(1, M, rng)[0])


def draw_beam_block(n: int, M: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent beam sets, shape ``(n, M, M)`` (beams are columns).

    QR of a complex Gaussian matrix, with the R-diagonal phase folded back
    into Q so the result is Haar distributed.
    """
    if M < 1:
        raise InvalidConfigError(f"M must be >= 1, got {M}")
    z = complex_normal(rng, (n, M, M))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    q = q * (d / np.abs(d))[..., None, :]
    return _fix_phase(q)


def effective_sinr(channel: ChannelRealization | np.ndarray,
                   beams: BeamSet | np.ndarray, P: float,
                   k: int, n: int, i: int) -> float:
    """SINR of beam ``i`` on antenna ``n`` of user ``k``.

    ``|h phi_i|^2 / (sum_{j != i} |h phi_j|^2 + 1/P)`` with ``h`` the
    ``n``-th row of user ``k``'s channel matrix.
    """
    H = channel.gains if isinstance(channel, ChannelRealization) else channel
    Phi = beams.beams if isinstance(beams, BeamSet) else beams
    row = H[k, n]
    power = np.abs(row @ Phi) ** 2
    interference = sum(float(power[j]) for j in range(Phi.shape[1]) if j != i)
    return float(power[i]) / (interference + 1.0 / P)


def all_sinrs(H: np.ndarray, Phi: np.ndarray, P: float) -> np.ndarray:
    """Vectorised SINR of every beam, shape ``H.shape``.

    ``H`` is ``(..., K, N, M)`` and ``Phi`` is ``(..., M, M)`` with matching
    leading dimensions (or a single beam set shared by all slots).
    """
    if Phi.ndim == 2:
        G = H @ Phi
    else:
        G = np.einsum("tknm,tmi->tkni", H, Phi, optimize=True)
    pw = G.real**2 + G.imag**2
    total = pw.sum(axis=-1, keepdims=True)
    interference = np.maximum(total - pw, 0.0)
    return pw / (interference + 1.0 / P)


def report_arrays(sinrs: np.ndarray):
    """Best beam (lowest index on ties) and its SINR for each antenna."""
    best = np.argmax(sinrs, axis=-1)
    val = np.take_along_axis(sinrs, best[..., None], axis=-1)[..., 0]
    return best, val


def build_sinr_report(channel: ChannelRealization | np.ndarray,
                      beams: BeamSet | np.ndarray, P: float) -> SinrReport:
    """Every antenna's strongest beam and its SINR."""
    H = channel.gains if isinstance(channel, ChannelRealization) else channel
    Phi = beams.beams if isinstance(beams, BeamSet) else beams
    best, val = report_arrays(all_sinrs(H, Phi, P))
    return SinrReport(best, val, Phi.shape[1])


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("SINR distribution is supported on x >= 0")
    return x


def sinr_cdf(x, M: int, P: float):
    """CDF of a single effective SINR: ``1 - exp(-x/P) / (1+x)^(M-1)``."""
    x = _check_x(x)
    return -np.expm1(-x / P - (M - 1) * np.log1p(x))


def sinr_logcdf(x, M: int, P: float):
    """``log F(x)``, accurate where ``F`` is close to 1."""
    x = _check_x(x)
    with np.errstate(divide="ignore"):
        return np.log1p(-np.exp(-x / P - (M - 1) * np.log1p(x)))


def sinr_pdf(x, M: int, P: float):
    """Density matching :func:`sinr_cdf`."""
    x = _check_x(x)
    return np.exp(-x / P - M * np.log1p(x)) * ((1.0 + x) / P + M - 1)


def check_beam_dominance(sinrs: np.ndarray, feedback_set=None):
    """Diagnostic for the single-beam-feedback property.

    Parameters
    ----------
    sinrs : (K, N, M) array
        Every beam's SINR on every antenna (not only the reported ones).
    feedback_set : iterable of int, optional
        Users taking part; all users when omitted.

    Returns
    -------
    premise : bool
        Whether the largest SINR over the feedback set is at least 1 on
        every beam.
    violation : bool
        With the premise holding, whether the antenna attaining some beam's
        maximum has a different strongest beam (so it would be the maximum
        on two beams). False whenever the premise fails.
    """
    users = np.arange(sinrs.shape[0]) if feedback_set is None else np.fromiter(
        sorted(feedback_set), dtype=int)
    if users.size == 0:
        return False, False
    flat = sinrs[users].reshape(-1, sinrs.shape[-1])
    M = flat.shape[1]
    premise = bool(np.all(flat.max(axis=0) >= 1.0))
    if not premise:
        return False, False
    winners = np.argmax(flat, axis=0)
    own_best = np.argmax(flat[winners], axis=1)
    return True, bool(np.any(own_best != np.arange(M)))
