import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qamimo.traffic import ArrivalModel, arrival_lmf, draw_arrivals


def test_validation():
    with pytest.raises(ValueError):
        ArrivalModel("weibull", rate=1.0)
    with pytest.raises(ValueError):
        ArrivalModel("poisson", rate=-1.0)
    with pytest.raises(ValueError):
        ArrivalModel("bernoulli_batch", p=1.5, batch=2)
    with pytest.raises(ValueError):
        ArrivalModel("deterministic", rate=0.5)


def test_batch_rate_derived():
    m = ArrivalModel("bernoulli_batch", p=0.25, batch=4)
    assert m.mean == 1.0
    assert m.with_rate(0.5).p == pytest.approx(0.125)
    assert ArrivalModel("poisson", rate=2.0).with_rate(3.0).rate == 3.0


@pytest.mark.parametrize("model", [
    ArrivalModel("poisson", rate=0.7),
    ArrivalModel("bernoulli_batch", p=0.2, batch=3),
    ArrivalModel("deterministic", rate=2),
])
def test_empirical_mean(model):
    a = draw_arrivals(model, 4, np.random.default_rng(0), n_slots=100_000)
    assert a.shape == (100_000, 4) and a.dtype == np.int64
    assert a.mean() == pytest.approx(model.mean, rel=0.01)


def test_single_slot_shape():
    assert draw_arrivals(ArrivalModel(rate=1.0), 3, np.random.default_rng(0)).shape == (3,)


def test_zero_rate_is_silent():
    a = draw_arrivals(ArrivalModel(rate=0.0), 5, np.random.default_rng(0), 1000)
    assert not a.any()


@given(st.floats(-3, 3))
def test_lmf_vanishes_at_zero_and_is_convex(theta):
    for m in (ArrivalModel(rate=0.8), ArrivalModel("bernoulli_batch", p=0.3, batch=2),
              ArrivalModel("deterministic", rate=1)):
        assert arrival_lmf(m, 0.0) == 0.0
        h = 1e-3
        mid = arrival_lmf(m, theta)
        assert arrival_lmf(m, theta + h) + arrival_lmf(m, theta - h) >= 2 * mid - 1e-9


def test_poisson_lmf_matches_monte_carlo():
    m = ArrivalModel(rate=1.3)
    a = draw_arrivals(m, 1, np.random.default_rng(1), 400_000)[:, 0]
    theta = 0.4
    assert math.log(np.mean(np.exp(theta * a))) == pytest.approx(arrival_lmf(m, theta), rel=0.01)


def test_lmf_slope_is_mean():
    m = ArrivalModel("bernoulli_batch", p=0.3, batch=2)
    h = 1e-6
    assert (arrival_lmf(m, h) - arrival_lmf(m, -h)) / (2 * h) == pytest.approx(0.6, rel=1e-6)
