"""Choice of the inverse-moment scale ``tau`` from null-model MLEs.

Survival responses are simulated with no covariate effect, univariate Cox
MLEs are fitted on randomly chosen design columns, and the pooled estimates
are summarized by a normal density. ``tau`` is the smallest value whose
prior has overlap below ``1/sqrt(p)`` with that density, capped at
``alpha**2`` so the prior modes sit no further out than ``alpha``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .cox import cox_mle
from .data import SurvivalDataset
from .exceptions import DataValidationError, NumericalError
from .rng import stream

logger = logging.getLogger(__name__)

TAU_GRID = np.logspace(-4, np.log10(25.0), 40)


@dataclass(frozen=True)
class NullMLESample:
    values: np.ndarray
    dropped: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def sd(self) -> float:
        return float(np.std(self.values, ddof=1))


def null_censoring_rate(censored_fraction: float) -> float:
    """Exponential censoring rate giving ``censored_fraction`` against Exp(1)
    event times: ``P(C < T) = rate / (1 + rate)``."""
    if not 0 <= censored_fraction < 1:
        raise DataValidationError("censored fraction must lie in [0, 1)")
    return censored_fraction / (1.0 - censored_fraction)


def _null_replicate(design, cens_rate, seed, rep, cols_per_rep, candidates):
    rng = stream(seed, "null-mle", rep)
    n = design.shape[0]
    t = rng.exponential(1.0, n)
    c = rng.exponential(1.0 / cens_rate, n) if cens_rate > 0 else np.full(n, np.inf)
    y = np.minimum(t, c)
    delta = (t <= c).astype(float)
    order = np.argsort(y, kind="stable")
    delta = delta[order]
    out, dropped = [], 0
    if delta.sum() == 0:
        return out, cols_per_rep
    cols = rng.choice(candidates, size=min(cols_per_rep, len(candidates)), replace=False)
    for j in cols:
        fit = cox_mle(design[order, j][:, None], delta)
        if fit.converged and np.isfinite(fit.beta[0]):
            out.append(float(fit.beta[0]))
        else:
            dropped += 1
    return out, dropped


def simulate_null_mles(dataset: SurvivalDataset, reps: int = 200, seed: int = 0,
                       cols_per_rep: int = 1) -> NullMLESample:
    """Pooled univariate Cox MLEs under the null model.

    Each replicate draws event times from Exp(1) independently of the
    design, censoring times from an exponential whose rate reproduces the
    dataset's censored fraction, and fits ``cols_per_rep`` randomly chosen
    non-fixed columns. Unconverged fits are dropped and counted.
    """
    if reps < 1:
        raise DataValidationError("reps must be >= 1")
    candidates = dataset.nonfixed_columns
    if candidates.size == 0:
        raise DataValidationError("no non-fixed columns to simulate from")
    rate = null_censoring_rate(min(dataset.censoring_fraction, 0.99))
    values, dropped = [], 0
    for rep in range(reps):
        vals, drop = _null_replicate(dataset.design, rate, seed, rep,
                                     cols_per_rep, candidates)
        values.extend(vals)
        dropped += drop
    if len(values) < 2:
        raise NumericalError("too few converged null fits")
    return NullMLESample(np.array(values), dropped)


def overlap(tau: float, r: float, mean: float, sd: float) -> float:
    """Area under ``min(piMOM(b; tau, r), Normal(b; mean, sd))``.

    Outside ``mean +- 12 sd`` the normal density is below 1e-31, so the
    integral is taken over that window, split at zero and at the prior
    modes so the quadrature sees the kinks of the minimum.
    """
    if not sd > 0:
        raise DataValidationError("null density has zero spread")
    if not tau > 0:
        raise DataValidationError("tau must be positive")
    # scalar closures: quad calls f point by point, where scipy.stats and
    # array allocation dominate the cost
    log_c = 0.5 * r * math.log(tau) - math.lgamma(0.5 * r)
    log_nc = -math.log(sd) - 0.5 * math.log(2.0 * math.pi)

    def f(b):
        if b == 0.0:
            return 0.0
        b2 = b * b
        lp = log_c - 0.5 * (r + 1.0) * math.log(b2) - tau / b2
        z = (b - mean) / sd
        return math.exp(min(lp, log_nc - 0.5 * z * z))

    lo, hi = mean - 12 * sd, mean + 12 * sd
    mode = np.sqrt(2.0 * tau / (r + 1.0))
    cuts = sorted({lo, hi, *[x for x in (0.0, -mode, mode, mean) if lo < x < hi]})
    total = 0.0
    # roundoff warnings only mean the 1e-10 absolute target was missed by a
    # hair; the threshold comparison needs far less
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(cuts, cuts[1:]):
            total += integrate.quad(f, a, b, epsabs=1e-10, epsrel=1e-8, limit=200)[0]
    return float(min(max(total, 0.0), 1.0))


@dataclass(frozen=True)
class TauSelection:
    tau: float
    tau1: float
    grid: np.ndarray
    overlaps: np.ndarray
    null_mean: float
    null_sd: float
    threshold: float
    dropped: int
    exhausted: bool = False


def select_tau(dataset: SurvivalDataset, alpha: float, r: float = 1.0, reps: int = 200,
               seed: int = 0, threshold: float | None = None,
               null: NullMLESample | None = None) -> TauSelection:
    """``tau = min(tau1, alpha**2)`` with ``tau1`` the smallest ``tau`` whose
    overlap with the null-MLE density falls below ``threshold``
    (default ``1/sqrt(p)``, ``p`` counting non-fixed columns).

    ``tau1`` is located on a 40-point log grid over ``[1e-4, 25]``, to the
    right of the grid point of largest overlap, and refined by bisection to
    relative tolerance 1e-3.
    """
    if not alpha > 0:
        raise DataValidationError("alpha must be positive")
    p = max(len(dataset.nonfixed_columns), 1)
    thr = 1.0 / np.sqrt(p) if threshold is None else threshold
    if null is None:
        null = simulate_null_mles(dataset, reps=reps, seed=seed)
    mu, sd = null.mean, null.sd
    grid = TAU_GRID.copy()
    ov = np.array([overlap(t, r, mu, sd) for t in grid])
    # the overlap also vanishes as tau -> 0 (the prior collapses into a spike
    # narrower than the null density), so only the decreasing branch to the
    # right of the peak is searched
    peak = int(np.argmax(ov))
    below = peak + np.flatnonzero(ov[peak:] < thr)
    exhausted = below.size == 0
    if exhausted:
        warnings.warn("overlap never fell below the threshold; using the grid maximum",
                      RuntimeWarning, stacklevel=2)
        tau1 = float(grid[-1])
    elif below[0] == 0:
        tau1 = float(grid[0])
    else:
        lo, hi = float(grid[below[0] - 1]), float(grid[below[0]])
        while (hi - lo) / hi > 1e-3:
            mid = np.sqrt(lo * hi)
            if overlap(mid, r, mu, sd) < thr:
                hi = mid
            else:
                lo = mid
        tau1 = hi
    return TauSelection(min(tau1, alpha**2), tau1, grid, ov, mu, sd, thr,
                        null.dropped, exhausted)
