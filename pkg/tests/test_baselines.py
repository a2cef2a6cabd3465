import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qamimo.baselines import (PFS_FLOOR, PfsState, csio_lf_schedule, csio_schedule,
                              mwq_schedule, pfs_schedule)
from qamimo.channel import (SinrReport, _gamma_from_reports, all_sinrs,
                            draw_beam_block, draw_channel_block, report_arrays)
from qamimo.scheduler import stage2_schedule

M, N, P = 4, 2, 10.0
# 1 - (1 - M (1 - F(10^0.1)))^N at M=4, N=2, P=10: probability that a user
# has a qualifying report (mpmath, 30 digits)
LF_USER_PROB = 0.518323371975576972867


def random_gamma(seed, K, Mb=4, density=0.5):
    rng = np.random.default_rng(seed)
    return rng.exponential(1.0, (K, Mb)) * (rng.random((K, Mb)) < density)


def gamma_block(n, K, seed, threshold=0.0):
    rng = np.random.default_rng(seed)
    H = draw_channel_block(n, K, N, M, rng)
    best, val = report_arrays(all_sinrs(H, draw_beam_block(n, M, rng), P))
    return _gamma_from_reports(best, val, M, threshold)


def test_single_user_wins_reported_beams():
    g = np.array([[0.5, 0.0, 2.0, 0.0]])
    assert csio_schedule(g).winners.tolist() == [0, -1, 0, -1]


@given(st.integers(0, 10_000), st.integers(1, 10))
def test_csio_matches_scan(seed, K):
    g = random_gamma(seed, K)
    got = csio_schedule(g).winners
    for i in range(g.shape[1]):
        col = g[:, i]
        expect = int(np.flatnonzero(col == col.max())[0]) if col.max() > 0 else -1
        assert got[i] == expect


def test_csio_accepts_reports():
    rep = SinrReport(np.array([[1, 1], [0, 1]]), np.array([[0.7, 0.9], [0.3, 1.2]]), 2)
    assert csio_schedule(rep).winners.tolist() == [1, 1]


@given(st.integers(0, 10_000))
def test_equal_queue_stage2_is_csio(seed):
    g = random_gamma(seed, 7)
    assert stage2_schedule(g, range(7), np.full(7, 3.0)).winners.tolist() == \
        csio_schedule(g).winners.tolist()


def test_threshold_limits():
    g = random_gamma(3, 6)
    assert csio_lf_schedule(g, 0.0).winners.tolist() == csio_schedule(g).winners.tolist()
    assert csio_lf_schedule(g, math.inf).winners.tolist() == [-1] * 4
    assert csio_lf_schedule(g, math.inf).feedback_count == 0
    with pytest.raises(ValueError):
        csio_lf_schedule(g, -1.0)


def test_threshold_drops_weak_reports():
    g = np.array([[0.9, 0.0], [0.0, 3.0]])
    assert csio_lf_schedule(g, 1.0).winners.tolist() == [-1, 1]
    assert csio_lf_schedule(g, 1.0).feedback_count == 1


def test_lf_feedback_count_oracle():
    # average number of users with a report >= 1 dB over 1e5 slots
    K = 10
    t = 10 ** 0.1
    counts = [(gamma_block(10_000, K, s, t) > 0).any(axis=-1).sum(axis=-1)
              for s in range(10)]
    mean = np.concatenate(counts).mean()
    assert mean == pytest.approx(K * LF_USER_PROB, rel=0.01)


def test_lf_feedback_decreases_with_threshold():
    g = gamma_block(3000, 10, 11)
    means = [(np.where(g >= t, g, 0) > 0).any(axis=-1).sum(axis=-1).mean()
             for t in (0.0, 0.5, 1.0, 10 ** 0.1, 2.0, 4.0, 10.0)]
    assert all(a >= b for a, b in zip(means, means[1:]))
    assert means[0] == 10


def test_csio_wins_are_uniform():
    # i.i.d. users: each one wins beam 0 with probability 1/K
    K, n = 10, 100_000
    wins = np.concatenate([np.argmax(gamma_block(10_000, K, 100 + s)[:, :, 0], axis=1)
                           for s in range(10)])
    counts = np.bincount(wins, minlength=K)
    sigma = math.sqrt(n * (1 / K) * (1 - 1 / K))
    assert np.all(np.abs(counts - n / K) < 3 * sigma)


def test_pfs_equal_averages_is_max_rate():
    g = random_gamma(5, 6)
    st_ = PfsState(np.full(6, 2.5))
    got, _ = pfs_schedule(g, st_)
    assert got.winners.tolist() == csio_schedule(g).winners.tolist()


def test_pfs_state_update():
    g = np.array([[1.0], [0.5]])
    st_ = PfsState(np.array([1.0, 1.0]), t_w=10.0)
    got, new = pfs_schedule(g, st_, bits_per_nat=100.0)
    assert got.winners.tolist() == [0]
    r = 100.0 * math.log1p(1.0)
    np.testing.assert_allclose(new.avg, [0.9 + 0.1 * r, 0.9])


def test_pfs_infinite_window_freezes_average():
    st_ = PfsState(np.array([3.0, 2.0]), t_w=math.inf)
    _, new = pfs_schedule(np.array([[1.0], [0.5]]), st_)
    np.testing.assert_array_equal(new.avg, [3.0, 2.0])


def test_pfs_initial_state():
    s = PfsState.initial(4)
    assert np.all(s.avg == PFS_FLOOR) and s.t_w == 100.0
    with pytest.raises(ValueError):
        PfsState.initial(4, t_w=0.5)


def test_pfs_alternating_channels_share_evenly():
    # user 0 is strong on even slots, user 1 on odd slots
    st_ = PfsState.initial(2, t_w=100.0)
    wins = np.zeros(2)
    for t in range(20_000):
        g = np.array([[3.0], [1.0]]) if t % 2 == 0 else np.array([[1.0], [3.0]])
        got, st_ = pfs_schedule(g, st_)
        wins[got.winners[0]] += 1
    assert wins[0] / wins.sum() == pytest.approx(0.5, abs=0.02)


def test_pfs_shares_between_unequal_users():
    # user 0 always has the better channel; PF still serves both
    st_ = PfsState.initial(2, t_w=50.0)
    rng = np.random.default_rng(0)
    wins = np.zeros(2)
    for _ in range(5000):
        g = np.array([[2.0], [1.0]]) * rng.exponential(1.0, (2, 1))
        got, st_ = pfs_schedule(g, st_)
        wins[got.winners[0]] += 1
    assert 0.3 < wins[1] / wins.sum() < 0.5


@given(st.integers(0, 10_000), st.integers(1, 9))
def test_mwq_is_stage2_on_everyone(seed, K):
    g = random_gamma(seed, K)
    q = np.random.default_rng(seed).integers(0, 9, K).astype(float)
    a = mwq_schedule(g, q)
    b = stage2_schedule(g, range(K), q)
    assert a.winners.tolist() == b.winners.tolist()
    assert a.feedback_count == K


def test_mwq_hand_instance():
    # weights Q ln(1+g): beam 0 -> user0 2 ln2 = 1.386 vs user1 1 ln4 = 1.386 tie -> user0
    # beam 1 -> user0 2 ln1.5 = 0.811 vs user1 ln(3) = 1.099 -> user1
    g = np.array([[1.0, 0.5], [3.0, 2.0]])
    q = np.array([2.0, 1.0])
    w = q[:, None] * np.log1p(g)
    expect = [int(np.argmax(w[:, i])) for i in range(2)]
    assert mwq_schedule(g, q).winners.tolist() == expect == [0, 1]


def test_mwq_zero_queues_idle():
    assert mwq_schedule(random_gamma(1, 5), np.zeros(5)).winners.tolist() == [-1] * 4
