"""Evidence estimators over a population MCMC trace.

``ti_estimate`` covers both standard thermodynamic integration (degree 0)
and the controlled variant (degrees 1 and 2).  ``ais_estimate`` and
``cais_estimate`` are the equilibrated annealed importance samplers, which
reuse the same per-rung samples.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .control_variates import (
    ZvCoefficients,
    check_degree,
    controlled_values,
    features,
    fit_coefficients,
    plugin_coefficients,
    variance_ratio,
)
from .errors import NonFiniteError, PositivityError

ESTIMATORS = ("TI", "CTI", "AIS", "CAIS")
QUADRATURE_ORDERS = (1, 2)


@dataclass
class EvidenceEstimate:
    """A log-evidence estimate with the per-rung quantities behind it."""

    log_evidence: float
    estimator: str
    degree: int = 0
    quadrature: int = 1
    rung_means: np.ndarray = None
    rung_variances: np.ndarray = None
    variance_ratios: np.ndarray = None
    correction: float = 0.0
    seed: object = None
    trace_digest: str = ""
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if not np.isfinite(self.log_evidence):
            raise NonFiniteError(f"{self.estimator} log-evidence is not finite")

    @property
    def label(self):
        if self.estimator in ("TI", "CTI"):
            return f"{self.estimator}(deg={self.degree},Q{self.quadrature})"
        if self.estimator == "CAIS":
            return f"CAIS(deg={self.degree})"
        return self.estimator

    def to_dict(self):
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
        out["log_evidence"] = float(self.log_evidence)
        return out


def trapezoid(rungs, values):
    """First-order rule ``sum (t_{i+1}-t_i)/2 (f_i + f_{i+1})``."""
    rungs = np.asarray(rungs, dtype=float)
    values = np.asarray(values, dtype=float)
    return float(np.sum(np.diff(rungs) * 0.5 * (values[1:] + values[:-1])))


def second_order_correction(rungs, variances):
    """``sum (t_{i+1}-t_i)^2/12 (V_{i+1} - V_i)``; subtracted from the trapezoid."""
    rungs = np.asarray(rungs, dtype=float)
    variances = np.asarray(variances, dtype=float)
    return float(np.sum(np.diff(rungs) ** 2 / 12.0 * np.diff(variances)))


def controlled_variance(samples, degree):
    """Estimate ``V[g]`` as a controlled mean of ``(g - m)^2``.

    ``m`` is itself the controlled mean of ``g``; the same plug-in scheme
    is then applied to the squared deviations.  Degree 0 is the ordinary
    unbiased sample variance.
    """
    degree = check_degree(degree)
    g = np.asarray(samples.g, dtype=float)
    if g.size < 2:
        raise ValueError("at least two samples are needed for a variance")
    if degree == 0:
        return float(np.var(g, ddof=1))
    w = features(samples.theta, samples.z, degree)
    coeffs = plugin_coefficients(samples, degree)
    mean = float(np.mean(g + w @ coeffs.phi))
    sq = (g - mean) ** 2
    phi, _ = fit_coefficients(sq, w)
    if phi is None:
        return float(np.mean(sq))
    return float(np.mean(sq + w @ phi))


def _check_trace(trace):
    n_rungs = len(trace.ladder)
    if trace.loglik.shape[0] != n_rungs or trace.theta.shape[0] != n_rungs or trace.z.shape[0] != n_rungs:
        raise ValueError(f"trace covers {trace.loglik.shape[0]} rungs but the ladder has {n_rungs}")


def ti_estimate(trace, degree=0, quadrature=1):
    """Thermodynamic integration, controlled when ``degree > 0``.

    Per rung the integrand ``E[g]`` is estimated by the mean of ``g + h``
    with plug-in ZV coefficients fitted on the same samples.  Rung means are
    combined by the trapezoid rule; ``quadrature=2`` subtracts the
    second-order correction built from :func:`controlled_variance`.
    """
    degree = check_degree(degree)
    if quadrature not in QUADRATURE_ORDERS:
        raise ValueError(f"quadrature order must be 1 or 2, got {quadrature!r}")
    _check_trace(trace)
    n_rungs = len(trace.ladder)
    means = np.empty(n_rungs)
    ratios = np.full(n_rungs, np.nan)
    variances = np.full(n_rungs, np.nan)
    flags = []
    for i in range(n_rungs):
        samples = trace.rung(i)
        coeffs = plugin_coefficients(samples, degree)
        if coeffs.flagged:
            flags.append(f"rung {i}: singular feature covariance, degree {degree} fell back to TI")
        values = controlled_values(samples, coeffs)
        means[i] = np.mean(values)
        if np.var(samples.g) > 0:
            ratios[i] = variance_ratio(samples, coeffs)
        if quadrature == 2:
            variances[i] = controlled_variance(samples, degree)
    if not np.all(np.isfinite(means)):
        bad = np.flatnonzero(~np.isfinite(means)).tolist()
        raise NonFiniteError(f"non-finite integrand estimate at rungs {bad}")
    first = trapezoid(trace.ladder.rungs, means)
    correction = second_order_correction(trace.ladder.rungs, variances) if quadrature == 2 else 0.0
    return EvidenceEstimate(
        log_evidence=first - correction,
        estimator="TI" if degree == 0 else "CTI",
        degree=degree,
        quadrature=quadrature,
        rung_means=means,
        rung_variances=variances,
        variance_ratios=ratios,
        correction=correction,
        seed=trace.seed,
        trace_digest=trace.digest(),
        flags=flags,
    )


def log_mean_exp(values):
    values = np.asarray(values, dtype=float)
    return float(logsumexp(values) - np.log(values.size))


def ais_log_weights(trace, ladder=None):
    """``log w_n = sum_{i<m} (t_{i+1} - t_i) g(theta_n^(i))`` for each sample index."""
    ladder = trace.ladder if ladder is None else ladder
    n_rungs = len(ladder)
    lengths = {trace.loglik[i].size for i in range(trace.loglik.shape[0])}
    if trace.loglik.shape[0] != n_rungs:
        raise ValueError("trace and ladder have different numbers of rungs")
    if len(lengths) != 1:
        raise ValueError("rungs have different numbers of samples")
    return np.diff(ladder.rungs) @ trace.loglik[:-1]


def ais_estimate(trace, ladder=None):
    """Equilibrated AIS: log of the mean importance weight over sample paths."""
    lw = ais_log_weights(trace, ladder)
    return EvidenceEstimate(
        log_evidence=log_mean_exp(lw),
        estimator="AIS",
        seed=trace.seed,
        trace_digest=trace.digest(),
    )


def joint_features(trace, degree):
    """Stacked ZV features over rungs ``0..m-1``; shape ``(N, m * p)``.

    The joint polynomial has no cross-rung terms, so each block is the
    single-rung feature vector of that rung.
    """
    degree = check_degree(degree)
    m = len(trace.ladder) - 1
    blocks = [features(trace.theta[i], trace.z[i], degree) for i in range(m)]
    return np.concatenate(blocks, axis=1)


def cais_estimate(trace, ladder=None, degree=1, coefficients=None):
    """Controlled equilibrated AIS with one joint plug-in fit over all rungs.

    The weights are rescaled by their maximum before fitting, which scales
    the optimal coefficients by the same factor and leaves the estimate
    unchanged.  Passing ``coefficients`` (e.g. zeros) skips the fit.

    Raises:
        PositivityError: if the controlled mean weight is not positive.
    """
    degree = check_degree(degree)
    lw = ais_log_weights(trace, ladder)
    shift = float(np.max(lw))
    weights = np.exp(lw - shift)
    w = joint_features(trace, degree)
    flags = []
    if coefficients is None:
        if degree == 0:
            phi = np.zeros(0)
        else:
            phi, _ = fit_coefficients(weights, w)
            if phi is None:
                flags.append("joint feature covariance singular; zero coefficients used")
                phi = np.zeros(w.shape[1])
    else:
        phi = np.asarray(coefficients.phi if isinstance(coefficients, ZvCoefficients) else coefficients, dtype=float)
        if phi.size != w.shape[1]:
            raise ValueError(f"expected {w.shape[1]} joint coefficients, got {phi.size}")
    if phi.size and np.any(phi != 0):
        mean = float(np.mean(weights + w @ phi))
        if not mean > 0:
            raise PositivityError(f"controlled AIS mean weight {mean:.3e} is not positive")
        log_z = shift + np.log(mean)
    else:
        log_z = log_mean_exp(lw)
    return EvidenceEstimate(
        log_evidence=log_z,
        estimator="CAIS",
        degree=degree,
        seed=trace.seed,
        trace_digest=trace.digest(),
        flags=flags,
    )


def bayes_factor(est_model2, est_model1):
    """Log Bayes factor ``log B_21`` from two estimates made the same way."""
    for attr in ("estimator", "degree", "quadrature"):
        if getattr(est_model2, attr) != getattr(est_model1, attr):
            raise ValueError(f"estimates differ in {attr}; a Bayes factor needs matching settings")
    return float(est_model2.log_evidence - est_model1.log_evidence)


def batch_means_stderr(x, n_batches=20):
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size // n_batches * n_batches
    if n < n_batches * 2:
        return float(np.std(x, ddof=1) / np.sqrt(x.size))
    means = x[:n].reshape(n_batches, -1).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(n_batches))
