"""Bayesian logistic regression with an isotropic Gaussian prior (Pima Indians)."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..model import DifferentiableModel, ModelEvaluation
from .datasets import load_pima

PRIOR_PRECISION = 0.01
PIMA_MODEL_COVARIATES = {
    1: ("npreg", "glu", "bmi", "ped"),
    2: ("npreg", "glu", "bmi", "ped", "age"),
}


class LogisticModel(DifferentiableModel):
    """``y_i ~ Bernoulli(expit(x_i . beta))`` with ``beta ~ N(0, I / tau)``.

    ``X`` should already contain the intercept column.
    """

    tail_class = "exponential"
    default_step_size = 0.5

    def __init__(self, X, y, tau=PRIOR_PRECISION, name="logistic"):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValueError(f"inconsistent shapes X {self.X.shape}, y {self.y.shape}")
        if tau <= 0:
            raise ValueError("prior precision must be positive")
        self.tau = float(tau)
        self.n, self.dim = self.X.shape
        self.name = name
        self._lp_const = 0.5 * self.dim * np.log(self.tau / (2 * np.pi))

    def log_likelihood(self, theta):
        eta = np.asarray(theta, dtype=float) @ self.X.T
        # y*eta - log(1 + e^eta), overflow-safe
        return np.sum(self.y * eta - np.logaddexp(0.0, eta), axis=-1)

    def grad_log_likelihood(self, theta):
        p = expit(np.asarray(theta, dtype=float) @ self.X.T)
        return (self.y - p) @ self.X

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self._lp_const - 0.5 * self.tau * np.sum(theta ** 2, axis=-1)

    def grad_log_prior(self, theta):
        return -self.tau * np.asarray(theta, dtype=float)

    def fisher_information(self, theta):
        p = expit(np.asarray(theta, dtype=float) @ self.X.T)
        w = p * (1.0 - p)
        return np.einsum("...i,ij,ik->...jk", w, self.X, self.X)

    def prior_metric(self, theta):
        theta = np.asarray(theta, dtype=float)
        eye = self.tau * np.eye(self.dim)
        return np.broadcast_to(eye, theta.shape[:-1] + (self.dim, self.dim)).copy()

    def sample_prior(self, rng, size):
        return rng.standard_normal((size, self.dim)) / np.sqrt(self.tau)

    def evaluate(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        eta = theta @ self.X.T
        p = expit(eta)
        w = p * (1.0 - p)
        return ModelEvaluation(
            theta=theta.copy(),
            log_likelihood=np.sum(self.y * eta - np.logaddexp(0.0, eta), axis=-1),
            grad_log_likelihood=(self.y - p) @ self.X,
            log_prior=self.log_prior(theta),
            grad_log_prior=self.grad_log_prior(theta),
            fisher=np.einsum("ki,ij,il->kjl", w, self.X, self.X),
            prior_metric=self.prior_metric(theta),
        )


def logistic_score(model, theta, t):
    """``z = -(t/2) X^T (y - p) + tau * beta / 2``."""
    theta = np.asarray(theta, dtype=float)
    p = expit(model.X @ theta)
    return -0.5 * t * model.X.T @ (model.y - p) + 0.5 * model.tau * theta


def standardize(columns):
    """Zero mean and unit (population) variance per column."""
    columns = np.asarray(columns, dtype=float)
    return (columns - columns.mean(axis=0)) / columns.std(axis=0)


def pima_model(which, tau=PRIOR_PRECISION):
    """Pima model 1 (NP, PGC, BMI, DP) or model 2 (adds AGE)."""
    if which not in PIMA_MODEL_COVARIATES:
        raise ValueError(f"Pima model must be 1 or 2, got {which!r}")
    raw, y, names = load_pima()
    cols = [names.index(c) for c in PIMA_MODEL_COVARIATES[which]]
    X = np.column_stack([np.ones(raw.shape[0]), standardize(raw[:, cols])])
    return LogisticModel(X, y, tau=tau, name=f"pima{which}")
