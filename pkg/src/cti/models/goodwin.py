"""Goodwin oscillator with a Gaussian observation model on mRNA and protein."""

from __future__ import annotations

import numpy as np

from ..errors import IntegrationError
from ..model import DifferentiableModel, ModelEvaluation
from . import ode
from .datasets import load_goodwin

RHO = 10.0
SIGMA = 0.1
OBS_TIMES = np.arange(41.0, 81.0)
N_OBSERVED = 2
RTOL = 1e-8
ATOL = 1e-10


def true_parameters(g):
    """Natural-scale parameters used to simulate the bundled data."""
    return np.array([1.0, 3.0, 2.0] + [1.0] * (g - 2) + [0.5])


def parameter_names(g):
    return ["a1", "a2"] + [f"k{i}" for i in range(1, g)] + ["alpha"]


def goodwin_solve_with_sensitivities(theta, g, times=OBS_TIMES, rtol=RTOL, atol=ATOL):
    """Solve the augmented system from rest.

    Args:
        theta: log-parameters ``log(a1, a2, k_1..k_{g-1}, alpha)``.
        g: number of species.
        times: sorted output times in ``[0, 80]``.

    Returns:
        ``(x, S)`` with ``x`` of shape ``(T, g)`` and ``S`` of shape
        ``(T, d, g)``, ``S[j, i, k] = dx_k(s_j) / dtheta_i``.

    Raises:
        IntegrationError: on step-size underflow or a non-finite state.
    """
    theta = np.asarray(theta, dtype=float)
    d = g + 2
    if theta.shape != (d,):
        raise ValueError(f"Goodwin model with g={g} has {d} parameters, got shape {theta.shape}")
    status, out = _solve(theta, g, np.asarray(times, dtype=float), rtol, atol)
    if status != ode.OK:
        raise IntegrationError(f"Goodwin solve failed: {ode.STATUS_MESSAGES[status]}", theta)
    return out[:, :g], out[:, g:].reshape(-1, d, g)


def _solve(theta, g, times, rtol, atol):
    with np.errstate(over="ignore"):
        natural = np.exp(theta)
    if not np.all(np.isfinite(natural)):
        return ode.NON_FINITE, None
    params = np.concatenate([[RHO], natural])
    d = g + 2
    y0 = np.zeros(g + g * d)
    return ode.dopri5(ode.goodwin_augmented_rhs, y0, params, times, rtol, atol, 1e-2)


class GoodwinModel(DifferentiableModel):
    """Goodwin oscillator with ``g`` species, observed in ``x_1`` and ``x_2``.

    Parameters are the logs of ``(a1, a2, k_1..k_{g-1}, alpha)`` with
    independent Gamma(2, 1) priors on the natural scale.
    """

    tail_class = "exponential"
    default_step_size = 0.5

    def __init__(self, g=3, data=None, sigma=SIGMA, times=OBS_TIMES, rtol=RTOL, atol=ATOL):
        if g < 2:
            raise ValueError("the Goodwin oscillator needs at least two species")
        self.g = int(g)
        self.dim = self.g + 2
        self.name = f"goodwin{self.g}"
        self.sigma = float(sigma)
        self.times = np.asarray(times, dtype=float)
        self.data = load_goodwin(3)[1] if data is None else np.asarray(data, dtype=float)
        if self.data.shape != (self.times.size, N_OBSERVED):
            raise ValueError(f"data must have shape ({self.times.size}, {N_OBSERVED})")
        self.rtol = rtol
        self.atol = atol

    def with_tolerances(self, rtol, atol):
        return GoodwinModel(self.g, self.data, self.sigma, self.times, rtol, atol)

    def solve(self, theta):
        return goodwin_solve_with_sensitivities(theta, self.g, self.times, self.rtol, self.atol)

    def _likelihood_terms(self, theta):
        x, S = self.solve(theta)
        resid = self.data - x[:, :N_OBSERVED]
        S_obs = S[:, :, :N_OBSERVED]
        s2 = self.sigma ** 2
        n = resid.size
        ll = -0.5 * n * np.log(2 * np.pi * s2) - 0.5 * np.sum(resid ** 2) / s2
        grad = np.einsum("jik,jk->i", S_obs, resid) / s2
        fisher = np.einsum("jik,jlk->il", S_obs, S_obs) / s2
        return ll, grad, fisher

    def log_likelihood(self, theta):
        return self._likelihood_terms(theta)[0]

    def grad_log_likelihood(self, theta):
        return self._likelihood_terms(theta)[1]

    def fisher_information(self, theta):
        return self._likelihood_terms(theta)[2]

    # huge log-parameters overflow to -inf densities, which the sampler rejects

    def log_prior(self, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(over="ignore"):
            return np.sum(2.0 * theta - np.exp(theta), axis=-1)

    def grad_log_prior(self, theta):
        with np.errstate(over="ignore"):
            return 2.0 - np.exp(np.asarray(theta, dtype=float))

    def prior_metric(self, theta):
        with np.errstate(over="ignore"):
            e = np.exp(np.asarray(theta, dtype=float))
        G = np.zeros(e.shape + (self.dim,))
        idx = np.arange(self.dim)
        G[..., idx, idx] = e
        return G

    def sample_prior(self, rng, size):
        return np.log(rng.gamma(2.0, 1.0, size=(size, self.dim)))

    def test_points(self, rng, size):
        # prior draws can land on very stiff or flat dynamics; stay near the truth
        centre = np.log(true_parameters(self.g))
        return centre + 0.1 * rng.standard_normal((size, self.dim))

    def evaluate(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        k, d = theta.shape
        out = ModelEvaluation(
            theta=theta.copy(),
            log_likelihood=np.full(k, np.nan),
            grad_log_likelihood=np.full((k, d), np.nan),
            log_prior=self.log_prior(theta),
            grad_log_prior=self.grad_log_prior(theta),
            fisher=np.full((k, d, d), np.nan),
            prior_metric=self.prior_metric(theta),
        )
        for r in range(k):
            try:
                ll, grad, fisher = self._likelihood_terms(theta[r])
            except IntegrationError:
                continue
            out.log_likelihood[r] = ll
            out.grad_log_likelihood[r] = grad
            out.fisher[r] = fisher
        return out


def goodwin_score(model, theta, t):
    """ZV score from the sensitivity form.

    ``z_i = -(t / 2 sigma^2) sum_j S^i_j (y_j - x_a(s_j)) - 1/2 d/dtheta_i log p(theta)``
    with the sensitivities restricted to the observed species.
    """
    x, S = model.solve(theta)
    resid = model.data - x[:, :N_OBSERVED]
    like = np.einsum("jik,jk->i", S[:, :, :N_OBSERVED], resid)
    return -t / (2 * model.sigma ** 2) * like - 0.5 * model.grad_log_prior(theta)


def sensitivity_check(model, theta=None, step=1e-4, rtol=1e-10, atol=1e-12):
    """Largest error of the forward sensitivities against central differences.

    For each parameter ``i`` the error is ``max|S_i - FD_i| / max|FD_i|``
    over times and species, with the solver tolerances tightened to
    ``rtol``/``atol``.  Defaults to the data-generating parameters.
    """
    theta = np.log(true_parameters(model.g)) if theta is None else np.asarray(theta, dtype=float)
    _, S = goodwin_solve_with_sensitivities(theta, model.g, model.times, rtol, atol)
    worst = 0.0
    for i in range(model.dim):
        e = np.zeros(model.dim)
        e[i] = step
        xp, _ = goodwin_solve_with_sensitivities(theta + e, model.g, model.times, rtol, atol)
        xm, _ = goodwin_solve_with_sensitivities(theta - e, model.g, model.times, rtol, atol)
        fd = (xp - xm) / (2 * step)
        worst = max(worst, float(np.max(np.abs(S[:, i, :] - fd)) / max(np.max(np.abs(fd)), 1e-300)))
    return worst


def simulate_data(g, seed=0, sigma=SIGMA, times=OBS_TIMES):
    """Noisy observations of ``x_1, x_2`` at the true parameters."""
    x, _ = goodwin_solve_with_sensitivities(np.log(true_parameters(g)), g, times, 1e-10, 1e-12)
    rng = np.random.default_rng(seed)
    return x[:, :N_OBSERVED] + sigma * rng.standard_normal((times.size, N_OBSERVED))
