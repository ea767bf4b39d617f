"""Zero-variance control variates built from the power-posterior score.

A degree-``k`` trial polynomial ``P`` gives the control variate

    h(theta) = -1/2 * Laplacian P(theta) + grad P(theta) . z(theta)

which has zero mean under the target whenever its tails decay fast enough.
For degree 1, ``P = phi^T theta`` and ``h = phi^T z``.  For degree 2,
``P = c^T theta + 1/2 theta^T B theta`` with symmetric ``B`` and
``h = -tr(B)/2 + (c + B theta)^T z``, which is linear in the packed
coefficient vector ``phi = [c, diag(B), tril(B)]`` against the feature
vector ``w = [z, theta*z - 1/2, v]`` (see :func:`features`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

DEGREES = (0, 1, 2)

# ridge schedule for the feature covariance, relative to its trace
RIDGE_START = 1e-10
RIDGE_GROWTH = 100.0
RIDGE_MAX = 1e-4


class RungSamples(NamedTuple):
    """Equilibrium samples at one rung: parameters, log-likelihoods, scores."""

    theta: np.ndarray  # (n, d)
    g: np.ndarray  # (n,)
    z: np.ndarray  # (n, d)


def check_degree(degree):
    if degree not in DEGREES:
        raise ValueError(f"ZV polynomial degree must be one of {DEGREES}, got {degree!r}")
    return int(degree)


def n_features(d, degree):
    """Length of the feature vector: 0, ``d`` or ``d(d+3)/2``."""
    return (0, d, d * (d + 3) // 2)[check_degree(degree)]


def tril_pairs(d):
    """Row/column indices (0-based, ``j < i``) of the strict lower triangle.

    Ordered so that 1-based entry ``(i, j)`` lands at 1-based position
    ``(2d - j)(j - 1)/2 + (i - j)``, i.e. column by column.
    """
    rows, cols = [], []
    for j in range(d):
        for i in range(j + 1, d):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def features(theta, z, degree):
    """ZV feature vector ``w`` such that ``h = phi^T w``.

    Works on a single point (``(d,)`` inputs) or a batch (``(n, d)``).
    """
    degree = check_degree(degree)
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    if theta.shape != z.shape:
        raise ValueError(f"theta {theta.shape} and z {z.shape} shapes differ")
    d = theta.shape[-1]
    if degree == 0:
        return np.zeros(theta.shape[:-1] + (0,))
    if degree == 1:
        return z.copy()
    rows, cols = tril_pairs(d)
    u = theta * z - 0.5
    v = theta[..., rows] * z[..., cols] + theta[..., cols] * z[..., rows]
    return np.concatenate([z, u, v], axis=-1)


@dataclass
class ZvCoefficients:
    """Packed polynomial coefficients.

    ``flagged`` marks fits that fell back to zero because the feature
    covariance stayed singular after the maximum ridge.
    """

    degree: int
    phi: np.ndarray
    flagged: bool = False
    ridge: float = 0.0

    def __post_init__(self):
        self.degree = check_degree(self.degree)
        self.phi = np.asarray(self.phi, dtype=float)

    @property
    def dim(self):
        if self.degree != 2:
            return self.phi.size
        # phi has d(d+3)/2 entries
        return int(round((-3 + np.sqrt(9 + 8 * self.phi.size)) / 2))

    @classmethod
    def zeros(cls, d, degree, flagged=False):
        return cls(degree, np.zeros(n_features(d, degree)), flagged=flagged)

    @classmethod
    def pack(cls, c, B):
        """Degree-2 coefficients from ``c`` and a symmetric ``B``."""
        c = np.asarray(c, dtype=float)
        B = np.asarray(B, dtype=float)
        d = c.size
        if B.shape != (d, d):
            raise ValueError("B must be d x d")
        if not np.allclose(B, B.T, rtol=0, atol=1e-12 * max(1.0, np.abs(B).max())):
            raise ValueError("B must be symmetric")
        rows, cols = tril_pairs(d)
        return cls(2, np.concatenate([c, np.diag(B), B[rows, cols]]))

    def unpack(self):
        """Return ``(c, B)`` for degree 2 (``B`` symmetric)."""
        if self.degree != 2:
            raise ValueError("only degree-2 coefficients unpack into (c, B)")
        d = self.dim
        c = self.phi[:d].copy()
        B = np.diag(self.phi[d : 2 * d])
        rows, cols = tril_pairs(d)
        B[rows, cols] = self.phi[2 * d :]
        B[cols, rows] = self.phi[2 * d :]
        return c, B


def cv_value(theta, z, coeffs):
    """Evaluate the control variate ``h(theta)``.

    Degree 2 is evaluated in its polynomial form
    ``-tr(B)/2 + (c + B theta)^T z`` rather than through the features, so
    the two formulations can be checked against each other.
    """
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    if theta.shape != z.shape:
        raise ValueError(f"theta {theta.shape} and z {z.shape} shapes differ")
    if coeffs.degree == 0:
        return np.zeros(theta.shape[:-1]) if theta.ndim > 1 else 0.0
    if coeffs.degree == 1:
        if coeffs.phi.size != theta.shape[-1]:
            raise ValueError("coefficient and parameter dimensions differ")
        return z @ coeffs.phi
    if coeffs.dim != theta.shape[-1]:
        raise ValueError("coefficient and parameter dimensions differ")
    c, B = coeffs.unpack()
    return -0.5 * np.trace(B) + np.sum((c + theta @ B) * z, axis=-1)


def _solve_spd(V, rhs):
    """Solve ``V x = rhs`` with Cholesky, escalating a ridge on failure.

    Returns ``(x, ridge)``; ``x`` is ``None`` if every ridge failed.
    """
    scale = np.trace(V)
    if not np.isfinite(scale) or scale <= 0:
        return None, np.inf
    p = V.shape[0]
    ridge = 0.0
    next_ridge = RIDGE_START * scale / p
    while True:
        try:
            factor = linalg.cho_factor(V + ridge * np.eye(p), lower=True, check_finite=False)
            x = linalg.cho_solve(factor, rhs, check_finite=False)
            if np.all(np.isfinite(x)):
                return x, ridge
        except linalg.LinAlgError:
            pass
        if next_ridge > RIDGE_MAX * scale:
            return None, np.inf
        ridge = next_ridge
        next_ridge *= RIDGE_GROWTH


def fit_coefficients(target, w):
    """Plug-in ``phi = -V[w]^{-1} Cov[w, target]`` from centred sample moments.

    Returns ``(phi, ridge)``, with ``phi=None`` when the covariance cannot
    be factorised.
    """
    target = np.asarray(target, dtype=float)
    w = np.asarray(w, dtype=float)
    n = target.size
    if n < 2:
        raise ValueError("at least two samples are needed to estimate coefficients")
    wc = w - w.mean(axis=0)
    tc = target - target.mean()
    V = wc.T @ wc / (n - 1)
    cross = wc.T @ tc / (n - 1)
    phi, ridge = _solve_spd(V, -cross)
    return phi, ridge


def plugin_coefficients(samples, degree):
    """Plug-in estimate of the variance-minimising coefficients at one rung."""
    degree = check_degree(degree)
    d = samples.theta.shape[-1]
    if samples.g.size < 2:
        raise ValueError("at least two samples are needed to estimate coefficients")
    if degree == 0:
        return ZvCoefficients.zeros(d, 0)
    w = features(samples.theta, samples.z, degree)
    phi, ridge = fit_coefficients(samples.g, w)
    if phi is None:
        logger.warning("feature covariance singular after maximum ridge; using zero coefficients")
        return ZvCoefficients.zeros(d, degree, flagged=True)
    return ZvCoefficients(degree, phi, ridge=ridge)


def controlled_values(samples, coeffs):
    """Per-sample controlled integrand ``g + h``."""
    if coeffs.degree == 0:
        return np.asarray(samples.g, dtype=float).copy()
    w = features(samples.theta, samples.z, coeffs.degree)
    return samples.g + w @ coeffs.phi


def controlled_mean(samples, degree):
    """ZV-controlled estimate of ``E[g]`` and the coefficients used."""
    coeffs = plugin_coefficients(samples, degree)
    return float(np.mean(controlled_values(samples, coeffs))), coeffs


def variance_ratio(samples, coeffs):
    """Sample estimate of ``V[g + h] / V[g]``."""
    g = np.asarray(samples.g, dtype=float)
    if g.size < 2:
        raise ValueError("at least two samples are needed for a variance")
    vg = np.var(g, ddof=1)
    if vg == 0:
        raise ValueError("log-likelihood has zero sample variance; ratio undefined")
    return float(np.var(controlled_values(samples, coeffs), ddof=1) / vg)


def correlation_form(samples, coeffs):
    """``1 - Corr[g, phi^T w]^2``; equals the variance ratio at the plug-in optimum."""
    if coeffs.degree == 0:
        return 1.0
    w = features(samples.theta, samples.z, coeffs.degree)
    h = w @ coeffs.phi
    if np.var(h) == 0:
        return 1.0
    r = np.corrcoef(samples.g, h)[0, 1]
    return float(1.0 - r * r)


@dataclass
class TailReport:
    """Outcome of the sufficient tail condition for unbiased ZV estimates."""

    verdict: str  # "pass", "fail" or "unknown"
    tail_class: object
    d: int
    degree: int
    inequality: str
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return self.verdict == "pass"


def tail_condition_report(model, degree):
    """Check ``[sup_{|theta|_1 >= r} pi(theta)] r^(d+k-2) -> 0`` for the declared tails.

    Exponential tails beat every polynomial factor.  Polynomial tails
    ``pi ~ r^-q`` pass only when ``q > d + k - 2``.
    """
    degree = check_degree(degree)
    d = model.dim
    power = d + degree - 2
    tail = model.tail_class
    lhs = f"sup_(|theta|_1>=r) pi(theta) * r^{power}"
    if degree == 0:
        return TailReport("pass", tail, d, degree, "no control variate", ["h = 0 is trivially unbiased"])
    if tail == "exponential":
        return TailReport(
            "pass", tail, d, degree, f"{lhs} <= C exp(-a r) r^{power} -> 0"
        )
    if isinstance(tail, tuple) and len(tail) == 2 and tail[0] == "polynomial":
        q = float(tail[1])
        verdict = "pass" if q > power else "fail"
        rel = ">" if q > power else "<="
        return TailReport(
            verdict,
            tail,
            d,
            degree,
            f"{lhs} ~ r^({power}-{q:g}); decay order q={q:g} {rel} d+k-2={power}",
        )
    return TailReport("unknown", tail, d, degree, f"{lhs}: tail class not declared")
