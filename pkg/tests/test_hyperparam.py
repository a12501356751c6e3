import numpy as np
import pytest
from scipy import stats

from conftest import make_dataset
from bvsurv.exceptions import DataValidationError
from bvsurv.hyperparam import (NullMLESample, null_censoring_rate, overlap, select_tau,
                               simulate_null_mles)
from bvsurv.priors import pimom_pdf


def test_null_censoring_rate_closed_form():
    rng = np.random.default_rng(0)
    rate = null_censoring_rate(0.3)
    t, c = rng.exponential(1.0, 200_000), rng.exponential(1 / rate, 200_000)
    assert np.mean(c < t) == pytest.approx(0.3, abs=0.005)
    assert null_censoring_rate(0.0) == 0.0
    with pytest.raises(DataValidationError):
        null_censoring_rate(1.0)


def test_null_mles_centered_large_n():
    d = make_dataset(n=10_000, p=5, seed=1)
    sample = simulate_null_mles(d, reps=200, seed=3)
    se = sample.sd / np.sqrt(len(sample.values))
    assert abs(sample.mean) < 3 * se
    assert sample.dropped == 0


def test_null_mle_spread_shrinks_with_n():
    small = simulate_null_mles(make_dataset(n=100, p=20, seed=2), reps=200, seed=4)
    large = simulate_null_mles(make_dataset(n=800, p=20, seed=2), reps=200, seed=4)
    assert large.sd < small.sd


def test_null_mles_validation():
    with pytest.raises(DataValidationError):
        simulate_null_mles(make_dataset(), reps=0)


def test_null_mles_reproducible():
    d = make_dataset(n=80, p=10, seed=3)
    a = simulate_null_mles(d, reps=30, seed=9)
    b = simulate_null_mles(d, reps=30, seed=9)
    np.testing.assert_array_equal(a.values, b.values)


def test_overlap_limits():
    assert overlap(1e4, 1, 0.0, 0.1) < 1e-3
    # shrinking tau raises the overlap up to a peak near tau ~ sd^2 / 5; past
    # it the prior becomes a spike narrower than the null and the overlap
    # falls again
    sd = 0.3
    taus = np.logspace(-9, 1, 41)
    vals = np.array([overlap(t, 1, 0.0, sd) for t in taus])
    peak = int(np.argmax(vals))
    assert 0 < peak < len(taus) - 1
    assert 0.5 < vals[peak] <= 1.0
    assert 0.05 < taus[peak] / sd**2 < 0.5
    assert np.all(np.diff(vals[peak:]) < 0)
    assert vals[0] < 0.1
    with pytest.raises(DataValidationError):
        overlap(0.1, 1, 0.0, 0.0)


def test_overlap_monte_carlo():
    tau = 0.04
    sd = np.sqrt(tau)
    rng = np.random.default_rng(0)
    draws = rng.normal(0.0, sd, 1_000_000)
    ratio = pimom_pdf(draws, tau, 1) / stats.norm.pdf(draws, 0.0, sd)
    mc = np.mean(np.minimum(1.0, ratio))
    assert overlap(tau, 1, 0.0, sd) == pytest.approx(mc, rel=0.01)


def test_overlap_decreasing_beyond_match():
    taus = np.logspace(-1, 1, 15)
    vals = [overlap(t, 1, 0.0, 0.1) for t in taus]
    assert np.all(np.diff(vals) < 0)


@pytest.mark.parametrize("alpha,cap", [(0.8, 0.64), (0.1, 0.01)])
def test_select_tau_cap(alpha, cap):
    d = make_dataset(n=150, p=30, seed=4)
    sel = select_tau(d, alpha, reps=100, seed=1)
    assert sel.tau <= alpha**2
    assert sel.tau == pytest.approx(min(sel.tau, cap))
    assert sel.tau == min(sel.tau1, alpha**2)
    assert sel.threshold == pytest.approx(1 / np.sqrt(30))


def test_select_tau_threshold_crossing():
    d = make_dataset(n=150, p=30, seed=4)
    sel = select_tau(d, 10.0, reps=100, seed=1)
    assert overlap(sel.tau1, 1, sel.null_mean, sel.null_sd) < sel.threshold
    assert overlap(sel.tau1 / 1.002, 1, sel.null_mean, sel.null_sd) >= sel.threshold


def test_select_tau_ignores_small_tau_branch():
    # a threshold below the small-tau end of the curve must not be met there
    d = make_dataset(n=150, p=30, seed=4)
    null = NullMLESample(np.random.default_rng(0).normal(0, 1.5, 500), 0)
    sel = select_tau(d, 10.0, null=null, threshold=0.2)
    assert sel.overlaps[0] < 0.2
    assert sel.tau1 > sel.grid[int(np.argmax(sel.overlaps))]


def test_select_tau_exhausted_warns():
    null = NullMLESample(np.array([-30.0, 30.0]), 0)
    d = make_dataset(n=40, p=4, seed=0)
    with pytest.warns(RuntimeWarning):
        sel = select_tau(d, 100.0, null=null, threshold=1e-12)
    assert sel.exhausted and sel.tau1 == pytest.approx(25.0)


def test_select_tau_reproducible():
    d = make_dataset(n=100, p=20, seed=6)
    assert select_tau(d, 0.8, reps=50, seed=2).tau == select_tau(d, 0.8, reps=50, seed=2).tau
