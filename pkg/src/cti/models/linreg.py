"""Bayesian linear regression with known noise and a Gaussian prior.

Every power posterior is Gaussian, so the thermodynamic integrand and the
evidence have closed forms.  That makes this the oracle benchmark.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import linalg, stats

from ..model import DifferentiableModel, ModelEvaluation
from .datasets import load_linreg_known

TRUE_BETA = np.array([0.0, 1.0, 2.0])


class LinRegClosedForms(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray
    integrand: float
    log_evidence: float


class LinRegKnown(DifferentiableModel):
    """``y ~ N(X beta, sigma^2 I)`` with ``beta ~ N(0, zeta^2 I)``."""

    tail_class = "exponential"
    name = "linreg-known"

    def __init__(self, X=None, y=None, sigma=1.0, zeta=1.0):
        if X is None and y is None:
            X, y = load_linreg_known()
        elif X is None or y is None:
            raise ValueError("pass both X and y, or neither for the bundled instance")
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError(f"inconsistent shapes X {self.X.shape}, y {self.y.shape}")
        if sigma <= 0 or zeta <= 0:
            raise ValueError("sigma and zeta must be positive")
        self.sigma = float(sigma)
        self.zeta = float(zeta)
        self.n, self.dim = self.X.shape
        # sufficient statistics
        self._xtx = self.X.T @ self.X
        self._xty = self.X.T @ self.y
        self._yty = float(self.y @ self.y)
        self._ll_const = -0.5 * self.n * np.log(2 * np.pi * self.sigma ** 2)
        self._lp_const = -0.5 * self.dim * np.log(2 * np.pi * self.zeta ** 2)

    @classmethod
    def synthetic(cls, rng, n=100, beta=TRUE_BETA, sigma=1.0, zeta=1.0):
        """Fresh instance with standard-normal design entries."""
        beta = np.asarray(beta, dtype=float)
        X = rng.standard_normal((n, beta.size))
        y = X @ beta + sigma * rng.standard_normal(n)
        return cls(X, y, sigma, zeta)

    def _ssr(self, theta):
        # ||y - X b||^2 from sufficient statistics, batched over leading axes
        quad = np.einsum("...i,ij,...j->...", theta, self._xtx, theta)
        return self._yty - 2.0 * theta @ self._xty + quad

    def log_likelihood(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self._ll_const - 0.5 * self._ssr(theta) / self.sigma ** 2

    def grad_log_likelihood(self, theta):
        theta = np.asarray(theta, dtype=float)
        return (self._xty - theta @ self._xtx) / self.sigma ** 2

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self._lp_const - 0.5 * np.sum(theta ** 2, axis=-1) / self.zeta ** 2

    def grad_log_prior(self, theta):
        return -np.asarray(theta, dtype=float) / self.zeta ** 2

    def fisher_information(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.broadcast_to(self._xtx / self.sigma ** 2, theta.shape[:-1] + (self.dim, self.dim)).copy()

    def prior_metric(self, theta):
        theta = np.asarray(theta, dtype=float)
        eye = np.eye(self.dim) / self.zeta ** 2
        return np.broadcast_to(eye, theta.shape[:-1] + (self.dim, self.dim)).copy()

    def sample_prior(self, rng, size):
        return self.zeta * rng.standard_normal((size, self.dim))

    def evaluate(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        return ModelEvaluation(
            theta=theta.copy(),
            log_likelihood=self.log_likelihood(theta),
            grad_log_likelihood=self.grad_log_likelihood(theta),
            log_prior=self.log_prior(theta),
            grad_log_prior=self.grad_log_prior(theta),
            fisher=self.fisher_information(theta),
            prior_metric=self.prior_metric(theta),
        )

    def closed_form_log_evidence(self):
        omega = self.sigma ** 2 * np.eye(self.n) + self.zeta ** 2 * self.X @ self.X.T
        return float(stats.multivariate_normal(np.zeros(self.n), omega).logpdf(self.y))

    def power_posterior_moments(self, t):
        """Mean and covariance of the Gaussian power posterior at ``t``."""
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"temperature must lie in [0, 1], got {t!r}")
        precision = t / self.sigma ** 2 * self._xtx + np.eye(self.dim) / self.zeta ** 2
        cov = linalg.inv(precision)
        cov = 0.5 * (cov + cov.T)
        mean = t / self.sigma ** 2 * cov @ self._xty
        return mean, cov

    def integrand(self, t):
        """Exact ``E_t[log p(y|beta)]``."""
        mean, cov = self.power_posterior_moments(t)
        return float(
            self._ll_const
            - 0.5 * self._ssr(mean) / self.sigma ** 2
            - 0.5 * np.trace(self._xtx @ cov) / self.sigma ** 2
        )


def linreg_known_closed_forms(model, t):
    """Power-posterior moments, exact integrand and exact log-evidence at ``t``."""
    mean, cov = model.power_posterior_moments(t)
    return LinRegClosedForms(mean, cov, model.integrand(t), model.closed_form_log_evidence())
