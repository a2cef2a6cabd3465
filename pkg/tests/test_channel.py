import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from qamimo.channel import (BeamSet, ChannelRealization, InvalidConfigError,
                            SinrReport, all_sinrs, build_sinr_report,
                            check_beam_dominance, complex_normal, draw_beam_block,
                            draw_beams, draw_channel, draw_channel_block,
                            effective_sinr, report_arrays, sinr_cdf, sinr_logcdf,
                            sinr_pdf)

seeds = st.integers(0, 2**32 - 1)


def test_complex_normal_unit_power():
    z = complex_normal(np.random.default_rng(0), (200_000,))
    assert abs(np.mean(np.abs(z) ** 2) - 1.0) < 0.01
    assert abs(np.mean(z.real * z.imag)) < 0.01
    assert abs(np.var(z.real) - 0.5) < 0.01


def test_channel_shape_and_index():
    rng = np.random.default_rng(1)
    h0 = draw_channel(5, 2, 4, rng)
    assert h0.shape == (5, 2, 4) and h0.slot_index == 0
    h1 = draw_channel(5, 2, 4, rng, prev=h0, ar_coef=0.5)
    assert h1.slot_index == 1


@pytest.mark.parametrize("a", [-0.1, 1.0, 1.5])
def test_ar_coefficient_range(a):
    with pytest.raises(InvalidConfigError):
        draw_channel_block(4, 2, 1, 2, np.random.default_rng(0), ar_coef=a)


def test_ar1_lag_one_correlation():
    # stationary CN(0,1) marginal and lag-1 correlation equal to a
    H = draw_channel_block(50_000, 2, 1, 2, np.random.default_rng(2), ar_coef=0.9)
    x = H[:, 0, 0, 0]
    rho = np.mean(x[1:] * np.conj(x[:-1])).real / np.mean(np.abs(x) ** 2)
    assert abs(rho - 0.9) < 0.01
    assert abs(np.mean(np.abs(H) ** 2) - 1.0) < 0.03


def test_ar1_block_matches_slot_recursion():
    rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
    a = 0.7
    H = draw_channel_block(6, 2, 2, 3, rng_a, ar_coef=a)
    w = complex_normal(rng_b, (6, 2, 2, 3))
    ref = np.empty_like(w)
    ref[0] = w[0]
    for t in range(1, 6):
        ref[t] = a * ref[t - 1] + np.sqrt(1 - a * a) * w[t]
    np.testing.assert_allclose(H, ref, rtol=1e-12, atol=1e-12)


def test_block_continues_from_previous():
    rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
    a = 0.5
    prev = np.ones((1, 1, 2), complex)
    H = draw_channel_block(1, 1, 1, 2, rng_a, prev=prev, ar_coef=a)
    w = complex_normal(rng_b, (1, 1, 1, 2))
    np.testing.assert_allclose(H[0], a * prev + np.sqrt(1 - a * a) * w[0])


@given(seeds, st.integers(1, 6))
def test_beams_orthonormal(seed, M):
    b = draw_beams(M, np.random.default_rng(seed))
    np.testing.assert_allclose(b.gram(), np.eye(M), atol=1e-12)


def test_beam_phase_convention():
    Phi = draw_beam_block(50, 3, np.random.default_rng(5))
    lead = Phi[:, 0, :]
    assert np.all(np.abs(lead.imag) < 1e-12) and np.all(lead.real > 0)


def test_beams_isotropic():
    # Haar columns: each entry has E|phi|^2 = 1/M and no preferred direction
    Phi = draw_beam_block(40_000, 4, np.random.default_rng(6))
    power = np.abs(Phi) ** 2
    np.testing.assert_allclose(power.mean(axis=0), 0.25, atol=0.005)
    # first entry of a Haar column has |phi|^2 ~ Beta(1, M-1)
    ks = stats.kstest(power[:, 0, 1], stats.beta(1, 3).cdf)
    assert ks.pvalue > 1e-3


def test_invalid_beam_count():
    with pytest.raises(InvalidConfigError):
        draw_beams(0, np.random.default_rng(0))


@given(seeds, st.integers(1, 5), st.integers(1, 3), st.integers(1, 4),
       st.floats(0.1, 100))
def test_effective_sinr_matches_vectorised(seed, K, N, M, P):
    rng = np.random.default_rng(seed)
    H = draw_channel(K, N, M, rng)
    b = draw_beams(M, rng)
    S = all_sinrs(H.gains, b.beams, P)
    k, n, i = K - 1, N - 1, M - 1
    assert S[k, n, i] == pytest.approx(effective_sinr(H, b, P, k, n, i), rel=1e-10)


def test_single_beam_sinr_is_snr():
    h = np.array([[[2.0 + 0j]]])
    assert effective_sinr(h, np.eye(1), 10.0, 0, 0, 0) == pytest.approx(40.0)


def test_batched_sinrs_match_per_slot():
    rng = np.random.default_rng(7)
    H = draw_channel_block(3, 4, 2, 3, rng)
    Phi = draw_beam_block(3, 3, rng)
    S = all_sinrs(H, Phi, 10.0)
    for t in range(3):
        np.testing.assert_allclose(S[t], all_sinrs(H[t], Phi[t], 10.0), rtol=1e-12)


def test_report_lowest_index_on_ties():
    sinrs = np.array([[[1.0, 3.0, 3.0], [2.0, 2.0, 0.5]]])
    best, val = report_arrays(sinrs)
    assert best.tolist() == [[1, 0]]
    assert val.tolist() == [[3.0, 2.0]]


def test_report_gamma_layout():
    rep = SinrReport(best_beam=np.array([[0, 0], [2, 1]]),
                     sinr=np.array([[1.5, 2.5], [0.4, 3.0]]), M=3)
    g = rep.gamma()
    np.testing.assert_array_equal(g, [[2.5, 0, 0], [0, 3.0, 0.4]])
    np.testing.assert_array_equal(rep.gamma(threshold=1.0), [[2.5, 0, 0], [0, 3.0, 0]])
    assert rep.antennas_on(0, 0).tolist() == [0, 1]
    assert rep.K == 2


def test_build_report_roundtrip():
    rng = np.random.default_rng(8)
    H = ChannelRealization(draw_channel(6, 2, 4, rng).gains)
    b = BeamSet(draw_beams(4, rng).beams)
    rep = build_sinr_report(H, b, 10.0)
    S = all_sinrs(H.gains, b.beams, 10.0)
    np.testing.assert_array_equal(rep.sinr, S.max(axis=-1))


def test_sinr_cdf_endpoints_and_single_beam():
    assert sinr_cdf(0.0, 4, 10.0) == 0.0
    assert sinr_cdf(1e6, 4, 10.0) == pytest.approx(1.0)
    x = np.linspace(0, 50, 11)
    # one beam: no interference, exponential with mean P
    np.testing.assert_allclose(sinr_cdf(x, 1, 10.0), 1 - np.exp(-x / 10.0), rtol=1e-14)


def test_sinr_cdf_rejects_negative():
    with pytest.raises(ValueError):
        sinr_cdf(-1.0, 4, 10.0)
    with pytest.raises(ValueError):
        sinr_pdf(np.array([0.5, -0.1]), 4, 10.0)


@given(st.floats(0.0, 200.0), st.integers(1, 8), st.floats(0.5, 100.0))
def test_pdf_is_cdf_derivative(x, M, P):
    h = 1e-6 * max(1.0, x)
    lo = max(x - h, 0.0)
    num = (sinr_cdf(x + h, M, P) - sinr_cdf(lo, M, P)) / (x + h - lo)
    assert float(sinr_pdf(x, M, P)) == pytest.approx(float(num), rel=1e-5, abs=1e-10)


@given(st.floats(1e-6, 1e3), st.integers(1, 8), st.floats(0.5, 100.0))
def test_logcdf_consistent(x, M, P):
    survival = np.exp(-x / P) / (1.0 + x) ** (M - 1)
    assert float(sinr_logcdf(x, M, P)) == pytest.approx(
        float(np.log1p(-survival)), rel=1e-9, abs=1e-300)


def test_sinr_law_small_sample_ks():
    rng = np.random.default_rng(9)
    H = draw_channel_block(2000, 10, 2, 4, rng)
    Phi = draw_beam_block(2000, 4, rng)
    x = all_sinrs(H, Phi, 10.0)[..., 0].ravel()
    d = stats.kstest(x, lambda v: sinr_cdf(v, 4, 10.0)).statistic
    assert d < 0.01


def test_beam_dominance_diagnostic():
    # antenna 0 of user 0 wins beam 0 but its own best is beam 1
    sinrs = np.array([[[2.0, 5.0]], [[1.5, 1.2]]])
    assert check_beam_dominance(sinrs) == (True, True)
    ok = np.array([[[2.0, 0.5]], [[0.3, 1.5]]])
    assert check_beam_dominance(ok) == (True, False)
    weak = np.array([[[0.5, 0.5]]])
    assert check_beam_dominance(weak) == (False, False)
    assert check_beam_dominance(sinrs, feedback_set=[]) == (False, False)


def test_sinr_above_one_on_one_beam_only():
    # with unit-norm orthogonal beams, at most one beam can exceed SINR 1
    rng = np.random.default_rng(10)
    S = all_sinrs(draw_channel_block(500, 8, 2, 4, rng), draw_beam_block(500, 4, rng), 10.0)
    assert np.all((S >= 1.0).sum(axis=-1) <= 1)
