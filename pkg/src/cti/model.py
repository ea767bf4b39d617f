"""Differentiable model contract and power-posterior evaluation.

Every sampler and estimator in the package talks to a model through
:class:`DifferentiableModel`.  Parameters always live on an unconstrained
scale (``R^d``); models with positive parameters expose their log.

The metric tensor of every bundled model is affine in the inverse
temperature, ``G(theta|t) = prior_metric(theta) + t * fisher_information(theta)``,
which lets the sampler evaluate a model once per state and reuse the result
at any rung.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError

#: central-difference step on the raw parameter scale
DEFAULT_FD_STEP = 1e-5


@dataclass
class ModelEvaluation:
    """Batched model quantities at ``k`` parameter points.

    Rows where the model could not be evaluated (e.g. a failed ODE solve)
    hold NaN in ``log_likelihood``.
    """

    theta: np.ndarray  # (k, d)
    log_likelihood: np.ndarray  # (k,)
    grad_log_likelihood: np.ndarray  # (k, d)
    log_prior: np.ndarray  # (k,)
    grad_log_prior: np.ndarray  # (k, d)
    fisher: np.ndarray  # (k, d, d)
    prior_metric: np.ndarray  # (k, d, d)

    def __len__(self):
        return self.theta.shape[0]

    def log_target(self, t):
        return t * self.log_likelihood + self.log_prior

    def grad_log_target(self, t):
        t = np.asarray(t, dtype=float)
        return t[..., None] * self.grad_log_likelihood + self.grad_log_prior

    def metric(self, t):
        t = np.asarray(t, dtype=float)
        return self.prior_metric + t[..., None, None] * self.fisher

    def finite(self):
        """Boolean mask of rows whose density and gradients are all finite."""
        return (
            np.isfinite(self.log_likelihood)
            & np.isfinite(self.log_prior)
            & np.all(np.isfinite(self.grad_log_likelihood), axis=-1)
            & np.all(np.isfinite(self.grad_log_prior), axis=-1)
        )

    def swap_rows(self, i, j):
        for arr in self._arrays():
            arr[[i, j]] = arr[[j, i]]

    def assign(self, mask, other):
        """Overwrite rows selected by ``mask`` with the rows of ``other``."""
        for mine, theirs in zip(self._arrays(), other._arrays()):
            mine[mask] = theirs[mask]

    def copy(self):
        return ModelEvaluation(*(a.copy() for a in self._arrays()))

    def _arrays(self):
        return (
            self.theta,
            self.log_likelihood,
            self.grad_log_likelihood,
            self.log_prior,
            self.grad_log_prior,
            self.fisher,
            self.prior_metric,
        )


class DifferentiableModel(abc.ABC):
    """A likelihood and prior with analytic gradients and a metric tensor.

    Subclasses implement the four scalar/gradient methods plus
    :meth:`fisher_information`, :meth:`prior_metric` and
    :meth:`sample_prior`.  Vectorisable models may accept ``(k, d)`` inputs
    in those methods and override :meth:`evaluate` for speed.

    ``tail_class`` declares how fast the prior (and hence every power
    posterior) decays: ``"exponential"``, ``("polynomial", q)`` or
    ``"unknown"``.  It feeds :func:`cti.control_variates.tail_condition_report`.
    """

    dim: int
    name: str = "model"
    tail_class = "unknown"
    # mMALA step size used when a run does not set one
    default_step_size = 1.0

    @abc.abstractmethod
    def log_likelihood(self, theta):
        """Log-likelihood ``g(theta) = log p(y|theta)``."""

    @abc.abstractmethod
    def grad_log_likelihood(self, theta):
        """Gradient of the log-likelihood."""

    @abc.abstractmethod
    def log_prior(self, theta):
        """Log prior density on the unconstrained scale (Jacobian included)."""

    @abc.abstractmethod
    def grad_log_prior(self, theta):
        """Gradient of the log prior."""

    @abc.abstractmethod
    def fisher_information(self, theta):
        """Expected Fisher information of the likelihood at ``theta``."""

    @abc.abstractmethod
    def prior_metric(self, theta):
        """Curvature contribution of the prior to the metric tensor."""

    @abc.abstractmethod
    def sample_prior(self, rng, size):
        """Draw ``size`` independent prior samples, shape ``(size, d)``."""

    def test_points(self, rng, size):
        """Points for gradient checks; prior draws unless a model knows better."""
        return self.sample_prior(rng, size)

    def metric_tensor(self, theta, t):
        """Metric tensor ``G(theta|t)`` of the power posterior at temperature ``t``."""
        return self.prior_metric(theta) + t * self.fisher_information(theta)

    def closed_form_log_evidence(self):
        """Exact log-evidence if the model admits one, else ``None``."""
        return None

    def evaluate(self, theta):
        """Evaluate every quantity the sampler needs at a batch of points."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        k, d = theta.shape
        out = _empty_evaluation(theta)
        for r in range(k):
            th = theta[r]
            out.log_likelihood[r] = self.log_likelihood(th)
            out.grad_log_likelihood[r] = self.grad_log_likelihood(th)
            out.log_prior[r] = self.log_prior(th)
            out.grad_log_prior[r] = self.grad_log_prior(th)
            out.fisher[r] = self.fisher_information(th)
            out.prior_metric[r] = self.prior_metric(th)
        return out

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"


def _empty_evaluation(theta):
    k, d = theta.shape
    return ModelEvaluation(
        theta=theta.copy(),
        log_likelihood=np.full(k, np.nan),
        grad_log_likelihood=np.full((k, d), np.nan),
        log_prior=np.full(k, np.nan),
        grad_log_prior=np.full((k, d), np.nan),
        fisher=np.full((k, d, d), np.nan),
        prior_metric=np.full((k, d, d), np.nan),
    )


@dataclass(frozen=True)
class PowerPosterior:
    """Unnormalised density ``p(y|theta)^t p(theta)``."""

    model: DifferentiableModel
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"inverse temperature must lie in [0, 1], got {self.t}")


def _check_theta(model, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dim,):
        raise ValueError(
            f"parameter vector has shape {theta.shape}, model {model.name!r} expects ({model.dim},)"
        )
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("parameter vector is not finite", theta)
    return theta


def power_log_density(pp, theta):
    """Unnormalised log power-posterior ``t * g(theta) + log p(theta)``."""
    theta = _check_theta(pp.model, theta)
    if pp.t == 0.0:
        value = pp.model.log_prior(theta)
    else:
        value = pp.t * pp.model.log_likelihood(theta) + pp.model.log_prior(theta)
    value = float(value)
    if not np.isfinite(value):
        raise NonFiniteError("power-posterior log-density is not finite", theta)
    return value


def score_z(pp, theta):
    """ZV score vector ``z = -(t/2) grad g - (1/2) grad log p``."""
    theta = _check_theta(pp.model, theta)
    z = -0.5 * pp.model.grad_log_prior(theta)
    if pp.t != 0.0:
        z = z - 0.5 * pp.t * pp.model.grad_log_likelihood(theta)
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("score vector is not finite", theta)
    return z


def central_difference(f, theta, step=DEFAULT_FD_STEP):
    """Central-difference gradient of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        grad[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return grad


def relative_error(analytic, numeric):
    """Elementwise error scaled by ``max(|analytic|, |numeric|, 1)``."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return np.abs(analytic - numeric) / scale


@dataclass
class GradientReport:
    """Per-coordinate errors of analytic gradients against central differences."""

    model: str
    theta: np.ndarray
    step: float
    log_likelihood_errors: np.ndarray
    log_prior_errors: np.ndarray

    @property
    def max_error(self):
        return float(max(self.log_likelihood_errors.max(), self.log_prior_errors.max()))

    def passed(self, tol=1e-5):
        return self.max_error <= tol

    def __str__(self):
        fmt = lambda a: " ".join(f"{v:.2e}" for v in a)
        return (
            f"gradcheck {self.model} (step={self.step:g})\n"
            f"  log-likelihood errors: {fmt(self.log_likelihood_errors)}\n"
            f"  log-prior errors:      {fmt(self.log_prior_errors)}\n"
            f"  max error:             {self.max_error:.3e}"
        )


def check_gradients(model, theta, step=DEFAULT_FD_STEP):
    """Compare analytic gradients with central differences at ``theta``.

    Errors use :func:`relative_error`, i.e. they are relative for large
    gradients and absolute once the gradient drops below one.
    """
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    theta = _check_theta(model, theta)
    fd_ll = central_difference(model.log_likelihood, theta, step)
    fd_lp = central_difference(model.log_prior, theta, step)
    return GradientReport(
        model=model.name,
        theta=theta.copy(),
        step=step,
        log_likelihood_errors=relative_error(model.grad_log_likelihood(theta), fd_ll),
        log_prior_errors=relative_error(model.grad_log_prior(theta), fd_lp),
    )
