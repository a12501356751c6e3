"""Negative log posterior, MAP estimation and Laplace model scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy import linalg, optimize
from scipy.special import logsumexp

from .cox import cox_mle, loglik_and_neg_gradient, neg_hessian
from .data import ModelId, SurvivalDataset, submatrix
from .exceptions import DataValidationError
from .priors import PriorSpec, log_model_prior

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
_BARRIER = 1e-3


@dataclass(frozen=True)
class ScoredModel:
    """One model with its MAP coefficients and Laplace score.

    ``log_score = log_marginal + log_model_prior`` is finite exactly when the
    model converged; otherwise it is ``-inf`` and the model carries zero
    posterior weight.
    """

    model: ModelId
    beta_map: np.ndarray
    log_marginal: float
    log_model_prior: float
    log_score: float
    converged: bool
    hessian_logdet: float
    message: str = ""


def neg_log_posterior(beta, Xk, status, prior: PriorSpec, include_prior: bool = True):
    """Value, gradient and Hessian of ``g = -log lik - log prior``.

    A zero coefficient sits on the prior barrier; the value is then ``inf``.
    """
    beta = np.asarray(beta, dtype=float)
    ll, grad = loglik_and_neg_gradient(Xk, beta, status)
    hess = neg_hessian(Xk, beta, status)
    value = -ll
    if include_prior and beta.size:
        value -= prior.log_density(beta)
        pg, ph = prior.neg_grad_hess_diag(beta)
        grad = grad + pg
        hess = hess + np.diag(ph)
    return value, grad, hess


def _value_grad(beta, Xk, status, prior):
    if np.any(beta == 0):
        return np.inf, np.full(beta.shape, np.nan)
    ll, grad = loglik_and_neg_gradient(Xk, beta, status)
    pg, _ = prior.neg_grad_hess_diag(beta)
    return -ll - prior.log_density(beta), grad + pg


class MapResult(NamedTuple):
    beta: np.ndarray
    value: float
    converged: bool
    iterations: int
    message: str = ""


def _clear_barrier(beta):
    beta = np.array(beta, dtype=float)
    small = np.abs(beta) < _BARRIER
    beta[small] = np.where(beta[small] < 0, -_BARRIER, _BARRIER)
    return beta


def _newton_polish(beta, Xk, status, prior, tol, max_iter=30):
    value, grad, hess = neg_log_posterior(beta, Xk, status, prior)
    for _ in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            return beta, value, True
        try:
            step = linalg.cho_solve(linalg.cho_factor(hess, check_finite=False), grad)
        except (linalg.LinAlgError, ValueError):
            return beta, value, False
        t = 1.0
        for _ in range(30):
            trial = beta - t * step
            if np.all(trial != 0) and np.all(np.sign(trial) == np.sign(beta)):
                trial_value = _value_grad(trial, Xk, status, prior)[0]
                if trial_value <= value:
                    break
            t *= 0.5
        else:
            return beta, value, False
        beta = trial
        value, grad, hess = neg_log_posterior(beta, Xk, status, prior)
    return beta, value, bool(np.max(np.abs(grad)) < tol)


def _lbfgs(init, Xk, status, prior, tol, max_iter):
    # diagonal preconditioning: optimize u = beta / s with s from the Hessian
    # diagonal at the start, so badly scaled columns do not stall the search
    _, _, hess = neg_log_posterior(init, Xk, status, prior)
    diag = np.diag(hess)
    s = np.where(np.isfinite(diag) & (diag > 1e-8), 1.0 / np.sqrt(np.abs(diag)), 1.0)

    def fg(u):
        value, grad = _value_grad(u * s, Xk, status, prior)
        return value, grad * s

    res = optimize.minimize(
        fg, init / s, jac=True, method="L-BFGS-B",
        options={"maxcor": 10, "maxiter": max_iter, "gtol": tol * float(s.min()),
                 "ftol": 1e-15, "maxls": 40},
    )
    beta = np.asarray(res.x, dtype=float) * s
    value, grad = _value_grad(beta, Xk, status, prior)
    ok = bool(np.isfinite(value) and np.max(np.abs(grad)) < tol)
    if not ok and np.isfinite(value) and res.nit < max_iter:
        # line search stalls near the optimum on flat directions; finish with
        # Newton steps on the analytic Hessian
        beta, value, ok = _newton_polish(beta, Xk, status, prior, tol)
    return beta, value, ok, int(res.nit)


def map_estimate(Xk, status, prior: PriorSpec, init=None, tol: float = 1e-5,
                 max_iter: int = 500) -> MapResult:
    """Minimize ``g`` with limited-memory BFGS (memory 10).

    The start is the Cox partial-likelihood MLE unless ``init`` is given;
    components within ``1e-3`` of zero are pushed off the prior barrier. On
    failure one restart is made with small components moved to the prior
    mode.
    """
    k = Xk.shape[1]
    if k == 0:
        raise DataValidationError("map_estimate needs at least one covariate")
    if init is None:
        init = cox_mle(Xk, status).beta
    init = _clear_barrier(init)
    beta, value, ok, nit = _lbfgs(init, Xk, status, prior, tol, max_iter)
    if ok:
        return MapResult(beta, value, True, nit)
    mode = prior.mode()
    restart = np.where(np.abs(init) < mode, np.sign(init) * mode, init)
    beta2, value2, ok2, nit2 = _lbfgs(restart, Xk, status, prior, tol, max_iter)
    if ok2 or (np.isfinite(value2) and not value2 > value):
        beta, value, ok = beta2, value2, ok2
    return MapResult(beta, value, ok, nit + nit2, "" if ok else "MAP search did not converge")


class LaplaceResult(NamedTuple):
    beta_map: np.ndarray
    log_marginal: float
    hessian_logdet: float
    converged: bool
    message: str = ""


def log_marginal_laplace(Xk, status, prior: PriorSpec, init=None) -> LaplaceResult:
    """Laplace approximation of the log marginal likelihood at the MAP.

    ``log m = -g(beta_map) + (k/2) log(2 pi) - (1/2) log det G``. With no
    covariates the marginal is the partial likelihood of the empty model.
    """
    k = Xk.shape[1]
    if k == 0:
        ll, _ = loglik_and_neg_gradient(Xk, np.zeros(0), status)
        return LaplaceResult(np.zeros(0), ll, 0.0, True)
    fit = map_estimate(Xk, status, prior, init=init)
    if not fit.converged:
        return LaplaceResult(fit.beta, -np.inf, np.nan, False, fit.message)
    _, _, hess = neg_log_posterior(fit.beta, Xk, status, prior)
    try:
        chol = linalg.cholesky(hess, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        return LaplaceResult(fit.beta, -np.inf, np.nan, False, "Hessian not positive definite at MAP")
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    log_m = -fit.value + 0.5 * k * LOG_2PI - 0.5 * logdet
    return LaplaceResult(fit.beta, float(log_m), logdet, True)


def score_model(dataset: SurvivalDataset, model: ModelId, prior: PriorSpec) -> ScoredModel:
    """Laplace log marginal plus beta-binomial log prior for ``model``."""
    model = tuple(int(j) for j in model)
    n_fixed = len(dataset.fixed_columns)
    p_nonfixed = dataset.p - n_fixed
    k_nonfixed = len(model) - n_fixed
    if p_nonfixed > 0:
        a, b = prior.model_prior_params(p_nonfixed)
        lprior = log_model_prior(k_nonfixed, p_nonfixed, a, b)
    else:
        lprior = 0.0
    res = log_marginal_laplace(submatrix(dataset, model), dataset.status, prior)
    beta = np.array(res.beta_map, dtype=float)
    beta.setflags(write=False)
    score = res.log_marginal + lprior if res.converged else -np.inf
    return ScoredModel(model, beta, res.log_marginal, lprior, score,
                       res.converged, res.hessian_logdet, res.message)


def normalize_scores(scores: Iterable) -> np.ndarray:
    """Posterior probabilities over a pool of models.

    Accepts :class:`ScoredModel` items or raw log scores. Unscorable models
    (``-inf``) get probability zero.
    """
    values = np.array([s.log_score if isinstance(s, ScoredModel) else s for s in scores],
                      dtype=float)
    if values.size == 0 or not np.any(np.isfinite(values)):
        raise DataValidationError("no scorable model in pool")
    return np.exp(values - logsumexp(values))
