"""Independent reference computations shared by unit and acceptance tests."""

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from cti.models.radiata import LinRegUnknown


def small_radiata_instance(seed=0, n=5):
    rng = np.random.default_rng(seed)
    x = rng.uniform(20.0, 40.0, n)
    y = 3000.0 + 185.0 * (x - x.mean()) + 300.0 * rng.standard_normal(n)
    return LinRegUnknown(y, x, name="radiata-small")


def brute_force_log_evidence(model, points=161, width=12.0):
    """Trapezoid rule for ``log int p(y|theta) p(theta) dtheta`` on a 3-D grid.

    The box is centred on the joint mode with half-widths of ``width``
    Laplace standard deviations per axis.
    """
    joint = lambda th: -(model.log_likelihood(th) + model.log_prior(th))
    grad = lambda th: -(model.grad_log_likelihood(th) + model.grad_log_prior(th))
    start = np.array([model.y.mean(), 0.0, -2 * np.log(model.y.std() + 1.0)])
    res = optimize.minimize(joint, start, jac=grad, method="BFGS", options={"gtol": 1e-10})
    mode = res.x
    h = 1e-4 * np.maximum(1.0, np.abs(mode))
    H = np.empty((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h[i]
        H[i] = (grad(mode + e) - grad(mode - e)) / (2 * h[i])
    sd = np.sqrt(np.diag(np.linalg.inv(0.5 * (H + H.T))))
    axes = [np.linspace(m - width * s, m + width * s, points) for m, s in zip(mode, sd)]
    weights = [np.full(points, ax[1] - ax[0]) for ax in axes]
    for w in weights:
        w[[0, -1]] *= 0.5
    a, b = np.meshgrid(axes[0], axes[1], indexing="ij")
    logw_ab = np.log(weights[0])[:, None] + np.log(weights[1])[None, :]
    chunks = []
    for eta, w_eta in zip(axes[2], weights[2]):
        theta = np.stack([a, b, np.full_like(a, eta)], axis=-1)
        lj = model.log_likelihood(theta) + model.log_prior(theta)
        chunks.append(logsumexp(lj + logw_ab) + np.log(w_eta))
    return float(logsumexp(chunks))
