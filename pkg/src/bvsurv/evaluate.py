"""Time-dependent ROC analysis, Breslow baseline hazard and survival curves.

Sensitivity uses inverse weighting by a Kaplan-Meier curve evaluated at the
nearest training time; specificity is the plain proportion of controls
below the threshold. Model-averaged versions mix per-model curves with
Occam's-window weights.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ModelId, SurvivalDataset, submatrix
from .exceptions import DataValidationError
from .rng import stream
from .search import run_search, summaries

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function.

    ``f(t) = initial`` for ``t < knots[0]`` and ``values[i]`` on
    ``[knots[i], knots[i+1])``.
    """

    knots: np.ndarray
    values: np.ndarray
    initial: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        vals = np.concatenate([[self.initial], self.values])
        out = vals[idx + 1]
        return out if out.ndim else float(out)


def kaplan_meier(times, status) -> StepFunction:
    """Product-limit estimate of the survival function.

    Knots are the distinct event times. With no events the curve is the
    constant 1.
    """
    times = np.asarray(times, dtype=float)
    status = np.asarray(status, dtype=float)
    if times.shape != status.shape:
        raise DataValidationError("times and status differ in length")
    uniq, inv = np.unique(times, return_inverse=True)
    deaths = np.bincount(inv, weights=status, minlength=uniq.size)
    counts = np.bincount(inv, minlength=uniq.size)
    at_risk = counts[::-1].cumsum()[::-1]
    ev = deaths > 0
    factors = 1.0 - deaths[ev] / at_risk[ev]
    return StepFunction(uniq[ev], np.cumprod(factors))


def censoring_km(times, status) -> StepFunction:
    """Kaplan-Meier curve of the censoring distribution."""
    return kaplan_meier(times, 1.0 - np.asarray(status, dtype=float))


def g_interpolate(G: StepFunction, train_times, t):
    """``G`` at the training time nearest to ``t``.

    Ties go to the smaller time; beyond the training range the nearest end
    is used. Vectorized over ``t``.
    """
    train = np.unique(np.asarray(train_times, dtype=float))
    if train.size == 0:
        raise DataValidationError("no training times")
    t = np.asarray(t, dtype=float)
    hi = np.clip(np.searchsorted(train, t, side="left"), 0, train.size - 1)
    lo = np.clip(hi - 1, 0, train.size - 1)
    nearest = np.where(np.abs(t - train[lo]) <= np.abs(train[hi] - t), train[lo], train[hi])
    return G(nearest)


def _case_weights(t, times, status, g_vals):
    cases = (status > 0) & (times <= t)
    with np.errstate(divide="ignore"):
        w = np.where(cases, 1.0 / g_vals, 0.0)
    # Ĝ = 0 only at the last event of an uncensored tail; such cases carry
    # no usable weight
    w[~np.isfinite(w)] = 0.0
    return w


def sensitivity(t, c, marker, test_times, test_status, g_vals):
    """Weighted proportion of cases (event by ``t``) with ``marker > c``.

    ``c`` may be an array; NaN where no case carries weight. ``g_vals`` is
    the interpolated ``G`` at each test time.
    """
    marker = np.asarray(marker, dtype=float)
    w = _case_weights(t, np.asarray(test_times, float), np.asarray(test_status, float),
                      np.asarray(g_vals, float))
    total = w.sum()
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if total <= 0:
        out = np.full(c.shape, np.nan)
    else:
        order = np.argsort(marker, kind="stable")
        sm, sw = marker[order], w[order]
        above = np.concatenate([np.cumsum(sw[::-1])[::-1], [0.0]])
        out = above[np.searchsorted(sm, c, side="right")] / total
    return out if out.size > 1 else float(out[0])


def specificity(t, c, marker, test_times):
    """Proportion of controls (still at risk after ``t``) with ``marker <= c``."""
    marker = np.asarray(marker, dtype=float)
    controls = np.sort(marker[np.asarray(test_times, float) > t])
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if controls.size == 0:
        out = np.full(c.shape, np.nan)
    else:
        out = np.searchsorted(controls, c, side="right") / controls.size
    return out if out.size > 1 else float(out[0])


def _auc(se, sp):
    fpr = 1.0 - sp
    order = np.lexsort((se, fpr))
    x = np.concatenate([[0.0], fpr[order], [1.0]])
    y = np.concatenate([[0.0], se[order], [1.0]])
    return float(np.trapezoid(y, x))


def auc_curve(t_grid, markers: Sequence, weights, test_times, test_status, g_vals):
    """Model-averaged time-dependent AUC at each ``t`` in ``t_grid``.

    ``markers`` holds one risk-score vector per model and ``weights`` their
    Occam's-window weights. Thresholds sweep every distinct marker value plus
    both infinities. Entries are NaN where sensitivity or specificity is
    undefined.
    """
    markers = [np.asarray(m, dtype=float) for m in markers]
    weights = np.asarray(weights, dtype=float)
    if len(markers) != weights.size or not len(markers):
        raise DataValidationError("need one weight per marker")
    if not np.isclose(weights.sum(), 1.0):
        raise DataValidationError("weights must sum to one")
    thresholds = np.unique(np.concatenate([*markers, [-np.inf, np.inf]]))
    out = np.full(len(t_grid), np.nan)
    for i, t in enumerate(t_grid):
        se = sum(w * np.atleast_1d(sensitivity(t, thresholds, m, test_times, test_status, g_vals))
                 for m, w in zip(markers, weights))
        sp = sum(w * np.atleast_1d(specificity(t, thresholds, m, test_times))
                 for m, w in zip(markers, weights))
        if np.all(np.isfinite(se)) and np.all(np.isfinite(sp)):
            out[i] = _auc(se, sp)
    dropped = int(np.isnan(out).sum())
    if dropped:
        logger.info("AUC undefined at %d grid times", dropped)
    return out


def breslow(dataset: SurvivalDataset, model: ModelId, beta) -> StepFunction:
    """Cumulative baseline hazard ``sum_{t_i <= t} d_i / sum_{j >= i} exp(x_j b)``.

    Knots are the distinct observed times; tied events share the risk set of
    the first tied row.
    """
    Xk = submatrix(dataset, model)
    eta = Xk @ np.asarray(beta, dtype=float) if Xk.shape[1] else np.zeros(dataset.n)
    shift = eta.max()
    denom = np.cumsum(np.exp(eta - shift)[::-1])[::-1]
    times = dataset.times
    uniq, first = np.unique(times, return_index=True)
    inv = np.searchsorted(uniq, times)
    incr = dataset.status / (denom[first[inv]] * np.exp(shift))
    return StepFunction(uniq, np.cumsum(np.bincount(inv, weights=incr, minlength=uniq.size)),
                        initial=0.0)


def survival_curves(hazards: Sequence[StepFunction], markers: Sequence, weights,
                    times) -> np.ndarray:
    """Per-subject survival curves ``sum_j w_j exp(-H_j(t) exp(marker_ij))``.

    ``hazards[j]`` and ``markers[j]`` belong to model ``j``; a single model
    with weight 1 gives the plug-in curve. Returns an array of shape
    (subjects, len(times)).
    """
    weights = np.asarray(weights, dtype=float)
    times = np.asarray(times, dtype=float)
    out = 0.0
    for H, m, w in zip(hazards, markers, weights):
        h = np.atleast_1d(H(times))
        out = out + w * np.exp(-np.outer(np.exp(np.asarray(m, dtype=float)), h))
    return np.clip(out, 0.0, 1.0)


def cv_folds(status, k_folds: int, seed: int = 0) -> np.ndarray:
    """Fold labels balancing the censoring rate across folds.

    Events and censored rows are shuffled separately and dealt round-robin;
    the censored deal continues where the event deal stopped so fold sizes
    differ by at most one.
    """
    status = np.asarray(status)
    n = status.size
    if k_folds < 2:
        raise DataValidationError("k_folds must be >= 2")
    if k_folds > n:
        raise DataValidationError(f"k_folds={k_folds} exceeds n={n}")
    events = np.flatnonzero(status > 0)
    cens = np.flatnonzero(status == 0)
    if k_folds > events.size:
        warnings.warn(f"{k_folds} folds but only {events.size} events; some folds have none",
                      RuntimeWarning, stacklevel=2)
    rng = stream(seed, "cv-folds")
    folds = np.empty(n, dtype=int)
    ev = rng.permutation(events)
    folds[ev] = np.arange(ev.size) % k_folds
    ce = rng.permutation(cens)
    folds[ce] = (np.arange(ce.size) + ev.size) % k_folds
    return folds


# -- orchestration -----------------------------------------------------------------

def model_set(summary, mode: str = "bma"):
    """Models and weights for prediction: the HPPM alone or the Occam set."""
    if mode == "hppm":
        return [summary.hppm], np.ones(1)
    if mode == "bma":
        if any(not m.converged for m in summary.occam_models):
            raise DataValidationError("unscored model in Occam's window")
        return list(summary.occam_models), np.asarray(summary.occam_weights)
    raise DataValidationError(f"unknown mode {mode!r}")


def markers_for(models, design: np.ndarray) -> list[np.ndarray]:
    """Risk scores ``x_k' beta_map`` of each model on the rows of ``design``."""
    design = np.asarray(design, dtype=float)
    out = []
    for m in models:
        idx = list(m.model)
        out.append(design[:, idx] @ m.beta_map if idx else np.zeros(design.shape[0]))
    return out


def predict_survival(train: SurvivalDataset, summary, design, times, mode: str = "hppm"):
    """Survival curves for new rows ``design`` at ``times``."""
    models, weights = model_set(summary, mode)
    hazards = [breslow(train, m.model, m.beta_map) for m in models]
    return survival_curves(hazards, markers_for(models, design), weights, times)


@dataclass
class CVResult:
    t_grid: np.ndarray
    auc: np.ndarray            # (folds, len(t_grid))
    folds: np.ndarray
    test_rows: list = None     # sorted-row positions held out in each fold
    curves: list = None        # held-out survival curves at t_grid, per fold

    @property
    def mean(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.auc, axis=0)


def cross_validated_auc(dataset: SurvivalDataset, prior, config, t_grid, k_folds: int = 5,
                        mode: str = "bma", seed: int = 0, weighting: str = "survival",
                        occam_window: float = 0.01, tuner=None) -> CVResult:
    """AUC(t) on each held-out fold after selecting models on the others.

    ``weighting="survival"`` weights cases by the training Kaplan-Meier
    curve of the survival times; ``"censoring"`` uses the Kaplan-Meier curve
    of the censoring times instead. ``tuner``, if given, maps a training
    dataset to the prior used on that fold.
    """
    if weighting not in ("survival", "censoring"):
        raise DataValidationError(f"unknown weighting {weighting!r}")
    t_grid = np.asarray(t_grid, dtype=float)
    folds = cv_folds(dataset.status, k_folds, seed)
    auc = np.full((k_folds, t_grid.size), np.nan)
    held_out, curves = [], []
    for f in range(k_folds):
        train = dataset.subset(np.flatnonzero(folds != f))
        test_rows = np.flatnonzero(folds == f)
        fold_prior = tuner(train) if tuner is not None else prior
        pool = run_search(train, fold_prior, config)
        summ = summaries(pool, train.p, occam_window, train.fixed_columns)
        models, weights = model_set(summ, mode)
        G = (kaplan_meier if weighting == "survival" else censoring_km)(train.times, train.status)
        test_times = dataset.times[test_rows]
        g_vals = g_interpolate(G, train.times, test_times)
        markers = markers_for(models, dataset.design[test_rows])
        auc[f] = auc_curve(t_grid, markers, weights, test_times,
                           dataset.status[test_rows], g_vals)
        hazards = [breslow(train, m.model, m.beta_map) for m in models]
        held_out.append(test_rows)
        curves.append(survival_curves(hazards, markers, weights, t_grid))
    return CVResult(t_grid, auc, folds, held_out, curves)
