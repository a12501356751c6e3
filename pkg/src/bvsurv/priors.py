"""Nonlocal coefficient priors and the beta-binomial model-space prior.

Every density is handled on the log scale. At ``beta_i == 0`` the nonlocal
densities vanish; their log is reported as ``-inf`` (never NaN).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import betaln, gammaln

from .exceptions import DataValidationError

PIMOM = "piMOM"
PMOM = "pMOM"
FAMILIES = (PIMOM, PMOM)

DEFAULT_TAU = 0.25
DEFAULT_R = 1.0


@dataclass(frozen=True)
class PriorSpec:
    """Coefficient prior family with scale ``tau`` and order ``r``, plus the
    beta-binomial model-space parameters ``a`` and ``b``.

    ``b=None`` means ``p - a`` for the number ``p`` of selectable
    (non-fixed) covariates, resolved by :meth:`model_prior_params`.
    """

    family: str = PIMOM
    r: float = DEFAULT_R
    tau: float = DEFAULT_TAU
    a: float = 1.0
    b: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataValidationError(f"unknown prior family {self.family!r}")
        if not self.tau > 0:
            raise DataValidationError(f"tau must be positive, got {self.tau}")
        if not self.r >= 1:
            raise DataValidationError(f"r must be >= 1, got {self.r}")
        if self.family == PMOM and float(self.r) != int(self.r):
            raise DataValidationError("pMOM order r must be a positive integer")
        if not self.a > 0 or (self.b is not None and not self.b > 0):
            raise DataValidationError("beta-binomial parameters must be positive")

    def with_tau(self, tau: float) -> "PriorSpec":
        return replace(self, tau=float(tau))

    def model_prior_params(self, p_nonfixed: int) -> tuple[float, float]:
        b = self.b if self.b is not None else p_nonfixed - self.a
        if not b > 0:
            raise DataValidationError(
                f"default b = p - a = {b} is not positive; set b explicitly")
        return self.a, b

    def log_density(self, beta) -> float:
        if self.family == PIMOM:
            return log_pimom(beta, self.tau, self.r)
        return log_pmom(beta, self.tau, self.r)

    def neg_grad_hess_diag(self, beta) -> tuple[np.ndarray, np.ndarray]:
        """Gradient and Hessian diagonal of ``-log_density``."""
        if self.family == PIMOM:
            return _pimom_derivs(np.asarray(beta, dtype=float), self.tau, self.r)
        return _pmom_derivs(np.asarray(beta, dtype=float), self.tau, self.r)

    def mode(self) -> float:
        """Positive mode of the univariate density."""
        if self.family == PIMOM:
            return float(np.sqrt(2.0 * self.tau / (self.r + 1.0)))
        return float(np.sqrt(2.0 * self.r * self.tau))


def log_pimom(beta, tau: float, r: float = 1.0) -> float:
    """Log density of independent inverse-moment priors.

    ``sum_i [(r/2) log tau - log Gamma(r/2) - (r+1) log|b_i| - tau/b_i^2]``
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.size == 0:
        return 0.0
    if np.any(beta == 0):
        return -np.inf
    b2 = beta * beta
    with np.errstate(over="ignore"):
        terms = (0.5 * r * np.log(tau) - gammaln(0.5 * r)
                 - 0.5 * (r + 1.0) * np.log(b2) - tau / b2)
    return float(terms.sum())


def log_pmom(beta, tau: float, r: int = 1) -> float:
    """Log density of independent moment priors of order ``r``."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.size == 0:
        return 0.0
    if np.any(beta == 0):
        return -np.inf
    b2 = beta * beta
    # normalizer (2r-1)!! = (2r)! / (2^r r!)
    log_dfact = gammaln(2 * r + 1) - r * np.log(2.0) - gammaln(r + 1)
    terms = (-0.5 * np.log(2.0 * np.pi) - (r + 0.5) * np.log(tau) - log_dfact
             - b2 / (2.0 * tau) + r * np.log(b2))
    return float(terms.sum())


def _pimom_derivs(beta, tau, r):
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        grad = (r + 1.0) / beta - 2.0 * tau / beta**3
        hess = 6.0 * tau / beta**4 - (r + 1.0) / beta**2
    return grad, hess


def _pmom_derivs(beta, tau, r):
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = beta / tau - 2.0 * r / beta
        hess = 1.0 / tau + 2.0 * r / beta**2
    return grad, hess


def log_pimom_grad_hess(beta, tau: float, r: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and (diagonal) Hessian matrix of ``-log_pimom``."""
    grad, hess = _pimom_derivs(np.atleast_1d(np.asarray(beta, dtype=float)), tau, r)
    return grad, np.diag(hess)


def log_pmom_grad_hess(beta, tau: float, r: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and (diagonal) Hessian matrix of ``-log_pmom``."""
    grad, hess = _pmom_derivs(np.atleast_1d(np.asarray(beta, dtype=float)), tau, r)
    return grad, np.diag(hess)


def pimom_pdf(beta, tau: float, r: float = 1.0) -> np.ndarray:
    """Univariate inverse-moment density, vectorized over ``beta``."""
    beta = np.asarray(beta, dtype=float)
    out = np.zeros_like(beta)
    nz = beta != 0
    b2 = beta[nz] ** 2
    out[nz] = np.exp(0.5 * r * np.log(tau) - gammaln(0.5 * r)
                     - 0.5 * (r + 1.0) * np.log(b2) - tau / b2)
    return out


def log_model_prior(k_nonfixed: int, p_nonfixed: int, a: float = 1.0,
                    b: float | None = None) -> float:
    """Log beta-binomial prior ``log B(a+k, b+p-k) - log B(a, b)`` of one model.

    Only non-fixed covariates are counted. ``b`` defaults to ``p - a``.
    """
    if not 0 <= k_nonfixed <= p_nonfixed:
        raise DataValidationError(f"model size {k_nonfixed} outside [0, {p_nonfixed}]")
    if b is None:
        b = p_nonfixed - a
    return float(betaln(a + k_nonfixed, b + p_nonfixed - k_nonfixed) - betaln(a, b))
