"""Cox partial likelihood kernels.

All functions expect rows sorted by ascending observed time, so the risk
set of row ``i`` is rows ``i..n-1``. Risk-set sums are evaluated in the log
domain with a running maximum, which keeps the kernels finite for linear
predictors far outside the range where ``exp`` is representable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .exceptions import NumericalError

# exp() of a spread larger than this risks underflow in shifted sums
_SHIFT_RANGE = 600.0


def suffix_logsumexp(values: np.ndarray) -> np.ndarray:
    """``out[i] = log(sum_{j >= i} exp(values[j]))``, computed stably."""
    return np.logaddexp.accumulate(values[::-1], axis=0)[::-1]


def _linear_predictor(Xk, beta):
    beta = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise NumericalError("non-finite coefficient vector")
    if beta.size == 0:
        return np.zeros(Xk.shape[0]), beta
    return Xk @ beta, beta


def _event_weights(lp, log_psi, status):
    # c_j = sum_{i <= j, delta_i = 1} exp(lp_j - log psi_i); each term <= 1
    a = np.where(status > 0, -log_psi, -np.inf)
    return np.exp(lp + np.logaddexp.accumulate(a))


def suffix_weighted_means(values: np.ndarray, lp: np.ndarray, log_psi: np.ndarray) -> np.ndarray:
    """Risk-set weighted means ``sum_{j>=i} values_j exp(lp_j) / psi_i``.

    ``values`` is (n, m); the result has the same shape.
    """
    hi = lp.max()
    if hi - lp.min() < _SHIFT_RANGE:
        e = np.exp(lp - hi)
        num = np.cumsum((values * e[:, None])[::-1], axis=0)[::-1]
        den = np.cumsum(e[::-1])[::-1]
        return num / den[:, None]
    with np.errstate(divide="ignore"):
        pos = np.log(np.where(values > 0, values, 0.0)) + lp[:, None]
        neg = np.log(np.where(values < 0, -values, 0.0)) + lp[:, None]
    pos = suffix_logsumexp(pos) - log_psi[:, None]
    neg = suffix_logsumexp(neg) - log_psi[:, None]
    return np.exp(pos) - np.exp(neg)


@dataclass
class CoxWorkspace:
    """Per-evaluation quantities shared by the likelihood, gradient and Hessian.

    ``xstar`` holds the risk-set weighted covariate means as rows (n, k), i.e.
    the transpose of the k-by-n layout used in the derivation.
    """

    lp: np.ndarray
    log_psi: np.ndarray
    xstar: np.ndarray | None = None

    @property
    def eta(self) -> np.ndarray:
        return np.exp(self.lp)

    @property
    def psi(self) -> np.ndarray:
        return np.exp(self.log_psi)


def workspace(Xk, beta, with_xstar: bool = True) -> CoxWorkspace:
    lp, _ = _linear_predictor(Xk, beta)
    log_psi = suffix_logsumexp(lp)
    xstar = suffix_weighted_means(Xk, lp, log_psi) if with_xstar and Xk.shape[1] else None
    return CoxWorkspace(lp=lp, log_psi=log_psi, xstar=xstar)


def partial_loglik(Xk, beta, status) -> float:
    """Log partial likelihood ``delta' (X beta - log psi)``."""
    lp, _ = _linear_predictor(Xk, beta)
    return float(status @ (lp - suffix_logsumexp(lp)))


def loglik_and_neg_gradient(Xk, beta, status) -> tuple[float, np.ndarray]:
    """Log partial likelihood and the gradient of its negative, in one pass."""
    lp, _ = _linear_predictor(Xk, beta)
    log_psi = suffix_logsumexp(lp)
    ll = float(status @ (lp - log_psi))
    if Xk.shape[1] == 0:
        return ll, np.zeros(0)
    c = _event_weights(lp, log_psi, status)
    return ll, Xk.T @ (c - status)


def neg_gradient(Xk, beta, status) -> np.ndarray:
    """Gradient of the negative log partial likelihood, ``(Xstar - X') delta``."""
    return loglik_and_neg_gradient(Xk, beta, status)[1]


def neg_hessian(Xk, beta, status) -> np.ndarray:
    """Hessian of the negative log partial likelihood (positive semidefinite).

    Sum over events of the risk-set covariance of the covariates. The
    second-moment part is collapsed to ``X' diag(c) X`` with ``c`` the
    accumulated event weights, so the cost is O(n k^2).
    """
    lp, _ = _linear_predictor(Xk, beta)
    k = Xk.shape[1]
    if k == 0:
        return np.zeros((0, 0))
    log_psi = suffix_logsumexp(lp)
    c = _event_weights(lp, log_psi, status)
    events = status > 0
    xstar = suffix_weighted_means(Xk, lp, log_psi)[events]
    hess = (Xk * c[:, None]).T @ Xk - xstar.T @ xstar
    return 0.5 * (hess + hess.T)


class CoxFit(NamedTuple):
    beta: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    message: str = ""


def _solve_newton(hess, grad, ridge):
    try:
        cho = linalg.cho_factor(hess + ridge * np.eye(hess.shape[0]), check_finite=False)
        return linalg.cho_solve(cho, grad, check_finite=False)
    except linalg.LinAlgError:
        return None


def cox_mle(Xk, status, init=None, tol: float = 1e-6, max_iter: int = 100,
            max_abs_beta: float = 50.0) -> CoxFit:
    """Maximum partial likelihood estimate by damped Newton iterations.

    When the Hessian is not positive definite, or a full step fails to
    increase the likelihood, a ridge of ``1e-6 I`` is added and the step is
    halved up to 30 times. Coefficients escaping ``max_abs_beta`` are taken
    as a monotone likelihood (e.g. a separating covariate) and reported as
    unconverged.
    """
    k = Xk.shape[1]
    beta = np.zeros(k) if init is None else np.array(init, dtype=float)
    ll, grad = loglik_and_neg_gradient(Xk, beta, status)
    if k == 0:
        return CoxFit(beta, True, 0, ll)
    for it in range(1, max_iter + 1):
        hess = neg_hessian(Xk, beta, status)
        if np.max(np.abs(grad)) < tol:
            flat = np.diag(hess).min() < 1e-10
            return CoxFit(beta, True, it - 1, ll, "no information for some covariates" if flat else "")
        ridge = 0.0
        step = _solve_newton(hess, grad, ridge)
        if step is None:
            ridge = 1e-6
            step = _solve_newton(hess, grad, ridge)
        if step is None:
            return CoxFit(beta, False, it, ll, "singular information matrix")
        t = 1.0
        for _ in range(30):
            trial = beta - t * step
            trial_ll, trial_grad = loglik_and_neg_gradient(Xk, trial, status)
            if trial_ll >= ll - 1e-12 * abs(ll):
                break
            if ridge == 0.0:
                ridge = 1e-6
                step = _solve_newton(hess, grad, ridge)
                if step is None:
                    break
            t *= 0.5
        else:
            return CoxFit(beta, False, it, ll, "step halving failed")
        if step is None:
            return CoxFit(beta, False, it, ll, "singular information matrix")
        beta, ll, grad = trial, trial_ll, trial_grad
        if np.max(np.abs(beta)) > max_abs_beta:
            return CoxFit(beta, False, it, ll, "coefficients diverging (monotone likelihood)")
    converged = bool(np.max(np.abs(grad)) < tol)
    return CoxFit(beta, converged, max_iter, ll, "" if converged else "iteration limit")
