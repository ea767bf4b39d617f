"""Linear regression with unknown precision (the Radiata Pine models).

Model 1 regresses strength on density, model 2 on resin-adjusted density.
Parameters are ``theta = (alpha, beta, eta)`` with ``eta = log tau``; the
regression coefficients have a Gaussian prior with precision ``tau * Q0``
and ``tau`` has a Gamma(a0, b0) prior (rate parametrisation).
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from ..model import DifferentiableModel, ModelEvaluation
from .datasets import load_radiata

PRIOR_MEAN = np.array([3000.0, 185.0])
R0 = 0.06
S0 = 6.0
A0 = 6.0
B0 = 4.0 * 300.0 ** 2


class LinRegUnknown(DifferentiableModel):
    """``y_i ~ N(alpha + beta * xbar_i, 1/tau)`` with a normal-gamma prior.

    ``r0`` and ``s0`` are the diagonal of ``Q0``.  The covariate is centred
    on construction.
    """

    tail_class = "exponential"
    default_step_size = 0.5

    def __init__(self, y, x, name="radiata", prior_mean=PRIOR_MEAN, r0=R0, s0=S0, a0=A0, b0=B0):
        self.y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.y.ndim != 1 or x.shape != self.y.shape:
            raise ValueError("y and x must be 1-d arrays of equal length")
        self.x_raw = x
        self.xbar = x - x.mean()
        self.n = self.y.size
        self.dim = 3
        self.name = name
        self.prior_mean = np.asarray(prior_mean, dtype=float)
        self.r0, self.s0, self.a0, self.b0 = float(r0), float(s0), float(a0), float(b0)
        self._sx = float(self.xbar.sum())
        self._sxx = float(self.xbar @ self.xbar)
        self._lp_const = (
            0.5 * np.log(self.r0 * self.s0) - np.log(2 * np.pi)
            + self.a0 * np.log(self.b0) - gammaln(self.a0)
        )

    def _residuals(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.y - theta[..., 0, None] - theta[..., 1, None] * self.xbar

    def log_likelihood(self, theta):
        theta = np.asarray(theta, dtype=float)
        eta = theta[..., 2]
        ssr = np.sum(self._residuals(theta) ** 2, axis=-1)
        return 0.5 * self.n * (eta - np.log(2 * np.pi)) - 0.5 * np.exp(eta) * ssr

    def grad_log_likelihood(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = self._residuals(theta)
        tau = np.exp(theta[..., 2])
        return np.stack(
            [
                tau * r.sum(axis=-1),
                tau * (r @ self.xbar),
                0.5 * self.n - 0.5 * tau * np.sum(r ** 2, axis=-1),
            ],
            axis=-1,
        )

    def _prior_bracket(self, theta):
        da = theta[..., 0] - self.prior_mean[0]
        db = theta[..., 1] - self.prior_mean[1]
        return da, db, self.b0 + 0.5 * self.r0 * da ** 2 + 0.5 * self.s0 * db ** 2

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        eta = theta[..., 2]
        _, _, bracket = self._prior_bracket(theta)
        return self._lp_const + (1.0 + self.a0) * eta - np.exp(eta) * bracket

    def grad_log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        tau = np.exp(theta[..., 2])
        da, db, bracket = self._prior_bracket(theta)
        return np.stack([-tau * self.r0 * da, -tau * self.s0 * db, 1.0 + self.a0 - tau * bracket], axis=-1)

    def fisher_information(self, theta):
        theta = np.asarray(theta, dtype=float)
        tau = np.exp(theta[..., 2])
        F = np.zeros(theta.shape[:-1] + (3, 3))
        F[..., 0, 0] = self.n * tau
        F[..., 0, 1] = F[..., 1, 0] = self._sx * tau
        F[..., 1, 1] = self._sxx * tau
        F[..., 2, 2] = 0.5 * self.n
        return F

    def prior_metric(self, theta):
        # negative Hessian of the log prior; indefinite far from the prior mode
        theta = np.asarray(theta, dtype=float)
        tau = np.exp(theta[..., 2])
        da, db, bracket = self._prior_bracket(theta)
        G = np.zeros(theta.shape[:-1] + (3, 3))
        G[..., 0, 0] = tau * self.r0
        G[..., 1, 1] = tau * self.s0
        G[..., 0, 2] = G[..., 2, 0] = tau * self.r0 * da
        G[..., 1, 2] = G[..., 2, 1] = tau * self.s0 * db
        G[..., 2, 2] = tau * bracket
        return G

    def sample_prior(self, rng, size):
        tau = rng.gamma(self.a0, 1.0 / self.b0, size=size)
        alpha = self.prior_mean[0] + rng.standard_normal(size) / np.sqrt(self.r0 * tau)
        beta = self.prior_mean[1] + rng.standard_normal(size) / np.sqrt(self.s0 * tau)
        return np.column_stack([alpha, beta, np.log(tau)])

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
        return radiata_log_evidence(self)


def radiata_z(model, theta, t):
    """Score vector ``z`` written out component by component."""
    alpha, beta, eta = np.asarray(theta, dtype=float)
    tau = np.exp(eta)
    r = model.y - alpha - beta * model.xbar
    da = alpha - model.prior_mean[0]
    db = beta - model.prior_mean[1]
    z1 = -0.5 * t * tau * r.sum() + 0.5 * tau * model.r0 * da
    z2 = -0.5 * t * tau * (r @ model.xbar) + 0.5 * tau * model.s0 * db
    z3 = (
        -0.25 * model.n * t
        + 0.25 * t * tau * (r @ r)
        - 0.5 * (1.0 + model.a0)
        + 0.5 * tau * (model.b0 + 0.5 * model.r0 * da ** 2 + 0.5 * model.s0 * db ** 2)
    )
    return np.array([z1, z2, z3])


def radiata_log_evidence(model):
    """Exact log-evidence of the normal-gamma regression."""
    X = np.column_stack([np.ones(model.n), model.xbar])
    Q0 = np.diag([model.r0, model.s0])
    B0 = model.prior_mean
    Qn = Q0 + X.T @ X
    Bn = np.linalg.solve(Qn, X.T @ model.y + Q0 @ B0)
    an = model.a0 + 0.5 * model.n
    bn = model.b0 + 0.5 * (model.y @ model.y - Bn @ Qn @ Bn + B0 @ Q0 @ B0)
    _, logdet0 = np.linalg.slogdet(Q0)
    _, logdetn = np.linalg.slogdet(Qn)
    return float(
        model.a0 * np.log(model.b0)
        - 0.5 * model.n * np.log(2 * np.pi)
        + 0.5 * (logdet0 - logdetn)
        + gammaln(an)
        - gammaln(model.a0)
        - an * np.log(bn)
    )


def radiata_model(which):
    """Model 1 (density) or model 2 (resin-adjusted density)."""
    y, x, z = load_radiata()
    if which == 1:
        return LinRegUnknown(y, x, name="radiata1")
    if which == 2:
        return LinRegUnknown(y, z, name="radiata2")
    raise ValueError(f"Radiata model must be 1 or 2, got {which!r}")
