"""Population MCMC over a temperature ladder.

Each rung runs a simplified manifold MALA kernel targeting its power
posterior; after every sweep one Metropolis-Hastings swap between a random
adjacent pair of rungs is attempted.  The rung updates within a sweep are
evaluated as one vectorised batch, and every rung draws its randomness from
its own substream of the master seed, so traces do not depend on evaluation
order.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .control_variates import RungSamples
from .errors import SamplerAbort
from .ladder import TemperatureLadder
from .model import ModelEvaluation

logger = logging.getLogger(__name__)

DEFAULT_STEP_SIZE = 1.0
DEFAULT_BURN_FRAC = 0.1
ACCEPTANCE_WINDOW = (0.2, 0.95)

JITTER_START = 1e-8
JITTER_GROWTH = 10.0
JITTER_MAX = 1e-2
MAX_FACTOR_FAILURE_RATE = 0.5


def _base_jitter(G):
    d = G.shape[-1]
    return 1.0 + np.abs(np.trace(G, axis1=-2, axis2=-1)) / d


def regularized_cholesky(G):
    """Cholesky factor of ``G + j I`` with escalating jitter.

    ``j`` starts at ``1e-8 (1 + |tr G|/d)`` and grows tenfold up to
    ``1e-2 (1 + |tr G|/d)``.  Returns ``(L, G_reg)`` or ``(None, None)``.
    """
    G = 0.5 * (G + G.T)
    if not np.all(np.isfinite(G)):
        return None, None
    scale = _base_jitter(G)
    eye = np.eye(G.shape[0])
    c = JITTER_START
    while c <= JITTER_MAX * (1 + 1e-12):
        G_reg = G + c * scale * eye
        try:
            return np.linalg.cholesky(G_reg), G_reg
        except np.linalg.LinAlgError:
            c *= JITTER_GROWTH
    return None, None


def batched_cholesky(G):
    """Row-wise :func:`regularized_cholesky` on a ``(k, d, d)`` stack.

    Returns ``(L, G_reg, ok)``; rows with ``ok=False`` hold identity
    placeholders and must be rejected by the caller.
    """
    k, d, _ = G.shape
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    finite = np.all(np.isfinite(G), axis=(-2, -1))
    G_reg = np.where(finite[:, None, None], G, np.eye(d))
    G_reg = G_reg + (JITTER_START * _base_jitter(G_reg))[:, None, None] * np.eye(d)
    try:
        L = np.linalg.cholesky(G_reg)
        return L, G_reg, finite
    except np.linalg.LinAlgError:
        pass
    L = np.broadcast_to(np.eye(d), (k, d, d)).copy()
    G_out = L.copy()
    ok = np.zeros(k, dtype=bool)
    for r in np.flatnonzero(finite):
        Lr, Gr = regularized_cholesky(G[r])
        if Lr is not None:
            L[r], G_out[r], ok[r] = Lr, Gr, True
    return L, G_out, ok


def _proposal_mean(theta, grad, G_reg, eps):
    drift = np.linalg.solve(G_reg, grad[..., None])[..., 0]
    return theta + 0.5 * (eps * eps)[:, None] * drift


def _log_proposal(x, mean, L, eps):
    """Log density (up to a constant) of ``N(mean, eps^2 (L L^T)^{-1})`` at ``x``."""
    r = x - mean
    LTr = np.einsum("kji,kj->ki", L, r)
    d = x.shape[-1]
    logdet = np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * np.sum(LTr * LTr, axis=-1) / (eps * eps) + logdet - d * np.log(eps)


def _evaluate_rows(model, theta, rows):
    """Evaluate the model at ``theta[rows]`` and scatter into full-size arrays."""
    k, d = theta.shape
    full = ModelEvaluation(
        theta=theta.copy(),
        log_likelihood=np.full(k, np.nan),
        grad_log_likelihood=np.full((k, d), np.nan),
        log_prior=np.full(k, np.nan),
        grad_log_prior=np.full((k, d), np.nan),
        fisher=np.full((k, d, d), np.nan),
        prior_metric=np.full((k, d, d), np.nan),
    )
    if rows.size:
        part = model.evaluate(theta[rows])
        for mine, theirs in zip(full._arrays(), part._arrays()):
            mine[rows] = theirs
    return full


def mmala_batch(model, ts, current, eps, normals, uniforms):
    """One simplified-mMALA transition for each row of ``current``.

    Args:
        model: the :class:`~cti.model.DifferentiableModel`.
        ts: inverse temperature per row, shape ``(k,)``.
        current: :class:`~cti.model.ModelEvaluation` at the current states.
        eps: step size per row, shape ``(k,)``.
        normals: standard normal draws, shape ``(k, d)``.
        uniforms: uniform draws for the accept test, shape ``(k,)``.

    Returns:
        ``(proposed, accepted, factor_failed)``.  ``proposed`` holds the
        evaluations at the proposals; accepted rows should be copied into
        the chain state.
    """
    ts = np.asarray(ts, dtype=float)
    eps = np.asarray(eps, dtype=float)
    theta = current.theta
    L, G_reg, ok = batched_cholesky(current.metric(ts))
    grad = current.grad_log_target(ts)
    mean = _proposal_mean(theta, grad, G_reg, eps)
    step = np.linalg.solve(np.swapaxes(L, -1, -2), normals[..., None])[..., 0]
    prop = mean + eps[:, None] * step
    ok &= np.all(np.isfinite(prop), axis=-1)
    prop = np.where(ok[:, None], prop, theta)

    proposed = _evaluate_rows(model, prop, np.flatnonzero(ok))
    ok_eval = ok & proposed.finite()
    L_p, G_p, ok_p = batched_cholesky(np.where(ok_eval[:, None, None], proposed.metric(ts), G_reg))
    valid = ok_eval & ok_p
    grad_p = np.where(valid[:, None], proposed.grad_log_target(ts), 0.0)
    mean_p = _proposal_mean(prop, grad_p, G_p, eps)

    with np.errstate(invalid="ignore", over="ignore"):
        log_alpha = (
            proposed.log_target(ts)
            - current.log_target(ts)
            + _log_proposal(theta, mean_p, L_p, eps)
            - _log_proposal(prop, mean, L, eps)
        )
        valid &= np.isfinite(log_alpha)
        accepted = valid & (np.log(uniforms) < np.where(valid, log_alpha, -np.inf))
    return proposed, accepted, ~ok


def mmala_step(model, t, theta, eps, rng):
    """Single simplified-mMALA transition at inverse temperature ``t``.

    The proposal is ``N(theta + eps^2/2 G^{-1} grad, eps^2 G^{-1})`` with
    ``G = G(theta|t)``, accepted by Metropolis-Hastings using the proposal
    densities in both directions.
    """
    if eps <= 0:
        raise ValueError("step size must be positive")
    theta = np.asarray(theta, dtype=float)
    current = model.evaluate(theta[None, :])
    normals = rng.standard_normal((1, theta.size))
    u = rng.random(1)
    proposed, accepted, failed = mmala_batch(
        model, np.array([t], dtype=float), current, np.array([eps], dtype=float), normals, u
    )
    if failed[0]:
        logger.debug("metric factorisation failed at theta=%s; move rejected", theta)
    if accepted[0]:
        return proposed.theta[0].copy(), True
    return theta.copy(), False


@dataclass
class ChainState:
    """Current state of every rung plus cached model evaluations."""

    ladder: TemperatureLadder
    evaluation: ModelEvaluation
    swap_attempts: np.ndarray = None
    swap_accepts: np.ndarray = None

    def __post_init__(self):
        m = self.ladder.m
        if self.swap_attempts is None:
            self.swap_attempts = np.zeros(m, dtype=np.int64)
        if self.swap_accepts is None:
            self.swap_accepts = np.zeros(m, dtype=np.int64)

    @property
    def theta(self):
        return self.evaluation.theta

    @property
    def loglik(self):
        return self.evaluation.log_likelihood

    def scores(self):
        """ZV score ``z`` at every rung, shape ``(m+1, d)``."""
        return -0.5 * self.evaluation.grad_log_target(self.ladder.rungs)


def swap_log_ratio(t_i, t_j, g_i, g_j):
    """Log Metropolis-Hastings ratio for exchanging the states of two rungs."""
    return (t_i - t_j) * (g_j - g_i)


def swap_step(state, ladder, rng):
    """Propose exchanging the states of a uniformly chosen adjacent pair.

    Modifies ``state`` in place and returns ``(state, accepted)``.
    """
    m = ladder.m
    if m < 1:
        raise ValueError("swaps need at least two rungs")
    i = int(rng.integers(m))
    j = i + 1
    u = rng.random()
    g = state.evaluation.log_likelihood
    log_r = swap_log_ratio(ladder.rungs[i], ladder.rungs[j], g[i], g[j])
    state.swap_attempts[i] += 1
    accepted = bool(np.log(u) < log_r)
    if accepted:
        state.evaluation.swap_rows(i, j)
        state.swap_accepts[i] += 1
    return state, accepted


@dataclass
class ChainTrace:
    """Recorded population MCMC output.

    Arrays are indexed ``[rung, sample, ...]``.
    """

    ladder: TemperatureLadder
    theta: np.ndarray  # (m+1, N, d)
    loglik: np.ndarray  # (m+1, N)
    z: np.ndarray  # (m+1, N, d)
    seed: object
    burn_in: int
    acceptance: np.ndarray  # (m+1,) within-rung acceptance rate over recorded sweeps
    swap_acceptance: np.ndarray  # (m,) per adjacent pair
    step_size: np.ndarray
    model_name: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.loglik.shape[1]

    @property
    def dim(self):
        return self.theta.shape[-1]

    def rung(self, i):
        return RungSamples(self.theta[i], self.loglik[i], self.z[i])

    def digest(self):
        """SHA-256 of the ladder and sample arrays; identifies a trace across estimators."""
        h = hashlib.sha256()
        for arr in (self.ladder.rungs, self.theta, self.loglik, self.z):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()

    def save_npz(self, path):
        np.savez_compressed(
            path,
            ladder=self.ladder.rungs,
            theta=self.theta,
            loglik=self.loglik,
            z=self.z,
            acceptance=self.acceptance,
            swap_acceptance=self.swap_acceptance,
            step_size=self.step_size,
            burn_in=self.burn_in,
            seed=str(self.seed),
            model_name=self.model_name,
        )

    def export_csv(self, directory):
        """Write one CSV per rung with columns ``theta_*``, ``g``, ``z_*``."""
        os.makedirs(directory, exist_ok=True)
        d = self.dim
        header = ",".join([f"theta_{k}" for k in range(d)] + ["g"] + [f"z_{k}" for k in range(d)])
        paths = []
        for i in range(len(self.ladder)):
            path = os.path.join(directory, f"rung_{i:03d}.csv")
            block = np.column_stack([self.theta[i], self.loglik[i], self.z[i]])
            np.savetxt(path, block, delimiter=",", header=header, comments="", fmt="%.17g")
            paths.append(path)
        return paths


def _step_sizes(step_size, n_rungs):
    eps = np.broadcast_to(np.asarray(step_size, dtype=float), (n_rungs,)).copy()
    if np.any(eps <= 0):
        raise ValueError("step sizes must be positive")
    return eps


INIT_METHODS = ("anneal", "prior")
DEFAULT_INIT_STEPS = 100


def _prior_rows(model, rngs, rows, max_tries):
    theta = np.vstack([model.sample_prior(rngs[r], 1) for r in rows])
    evaluation = model.evaluate(theta)
    for _ in range(max_tries):
        bad = np.flatnonzero(~evaluation.finite())
        if bad.size == 0:
            return evaluation
        for b in bad:
            theta[b] = model.sample_prior(rngs[rows[b]], 1)[0]
        redo = model.evaluate(theta[bad])
        for mine, theirs in zip(evaluation._arrays(), redo._arrays()):
            mine[bad] = theirs
    raise SamplerAbort(f"could not find finite initial states for rungs {[rows[b] for b in bad]}")


def initial_state(model, ladder, rngs, method="anneal", step_size=DEFAULT_STEP_SIZE,
                  steps=DEFAULT_INIT_STEPS, max_tries=100):
    """Starting states for every rung.

    ``"prior"`` draws each rung independently from the prior.  ``"anneal"``
    draws rung 0 from the prior and starts rung ``i`` from the state of rung
    ``i - 1`` after ``steps`` mMALA moves at ``t_i``.  The annealed start
    avoids placing high-temperature rungs in regions where the metric is
    nearly singular and the sampler cannot move.
    """
    if method not in INIT_METHODS:
        raise ValueError(f"unknown initialisation {method!r}; choose from {INIT_METHODS}")
    n_rungs = len(ladder)
    if method == "prior":
        return ChainState(ladder, _prior_rows(model, rngs, list(range(n_rungs)), max_tries))
    eps = _step_sizes(step_size, n_rungs)
    first = _prior_rows(model, rngs, [0], max_tries)
    theta = np.empty((n_rungs, model.dim))
    theta[0] = first.theta[0]
    current = first
    for i in range(1, n_rungs):
        t = np.array([ladder.rungs[i]])
        current = model.evaluate(current.theta)
        for _ in range(steps):
            normals = rngs[i].standard_normal((1, model.dim))
            u = rngs[i].random(1)
            proposed, accepted, _ = mmala_batch(model, t, current, eps[i:i + 1], normals, u)
            current.assign(accepted, proposed)
        theta[i] = current.theta[0]
    return ChainState(ladder, model.evaluate(theta))


def run_population(
    model,
    ladder,
    n,
    burn_frac=DEFAULT_BURN_FRAC,
    step_size=None,
    seed=0,
    init="anneal",
    init_steps=DEFAULT_INIT_STEPS,
):
    """Run population MCMC and record ``n`` post-burn-in sweeps per rung.

    Args:
        model: a :class:`~cti.model.DifferentiableModel`.
        ladder: the :class:`~cti.ladder.TemperatureLadder`.
        n: number of recorded sweeps.
        burn_frac: burn-in length as a fraction of ``n``
            (``round(burn_frac * n)`` sweeps are discarded).
        step_size: scalar or per-rung mMALA step sizes.
            Defaults to the model's ``default_step_size``.
        seed: anything accepted by :class:`numpy.random.SeedSequence`.
        init: ``"anneal"`` or ``"prior"``; see :func:`initial_state`.
        init_steps: mMALA moves per rung during the annealed start.

    Returns:
        ChainTrace
    """
    if n < 1:
        raise ValueError("number of recorded sweeps must be at least 1")
    if not 0.0 <= burn_frac < 1.0:
        raise ValueError("burn-in fraction must lie in [0, 1)")
    n_rungs = len(ladder)
    ts = ladder.rungs
    if step_size is None:
        step_size = getattr(model, "default_step_size", DEFAULT_STEP_SIZE)
    eps = _step_sizes(step_size, n_rungs)
    burn_in = int(round(burn_frac * n))
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = seq.spawn(n_rungs + 1)
    rngs = [np.random.default_rng(c) for c in children[:n_rungs]]
    swap_rng = np.random.default_rng(children[-1])

    state = initial_state(model, ladder, rngs, init, eps, init_steps)
    d = model.dim
    theta_out = np.empty((n_rungs, n, d))
    g_out = np.empty((n_rungs, n))
    z_out = np.empty((n_rungs, n, d))
    accepts = np.zeros(n_rungs, dtype=np.int64)
    failures = np.zeros(n_rungs, dtype=np.int64)
    normals = np.empty((n_rungs, d))
    uniforms = np.empty(n_rungs)

    for sweep in range(burn_in + n):
        for r in range(n_rungs):
            normals[r] = rngs[r].standard_normal(d)
            uniforms[r] = rngs[r].random()
        proposed, accepted, failed = mmala_batch(model, ts, state.evaluation, eps, normals, uniforms)
        state.evaluation.assign(accepted, proposed)
        failures += failed
        swap_step(state, ladder, swap_rng)
        if sweep == burn_in - 1:
            _check_failures(failures, sweep + 1, model)
            state.swap_attempts[:] = 0
            state.swap_accepts[:] = 0
        if sweep >= burn_in:
            k = sweep - burn_in
            accepts += accepted
            theta_out[:, k] = state.theta
            g_out[:, k] = state.loglik
            z_out[:, k] = state.scores()
    _check_failures(failures, burn_in + n, model)

    acceptance = accepts / n
    with np.errstate(invalid="ignore"):
        swap_rate = np.where(state.swap_attempts > 0, state.swap_accepts / np.maximum(state.swap_attempts, 1), np.nan)
    lo, hi = ACCEPTANCE_WINDOW
    outside = np.flatnonzero((acceptance <= lo) | (acceptance >= hi))
    if outside.size:
        logger.warning(
            "%s: within-rung acceptance outside (%g, %g) at rungs %s (rates %s)",
            model.name, lo, hi, outside.tolist(), np.round(acceptance[outside], 3).tolist(),
        )
    return ChainTrace(
        ladder=ladder,
        theta=theta_out,
        loglik=g_out,
        z=z_out,
        seed=seed if not isinstance(seed, np.random.SeedSequence) else seq.entropy,
        burn_in=burn_in,
        acceptance=acceptance,
        swap_acceptance=swap_rate,
        step_size=eps,
        model_name=model.name,
        metadata={"factor_failures": failures.tolist(), "init": init},
    )


def _check_failures(failures, sweeps, model):
    if sweeps == 0:
        return
    rate = failures / sweeps
    bad = np.flatnonzero(rate > MAX_FACTOR_FAILURE_RATE)
    if bad.size:
        raise SamplerAbort(
            f"{model.name}: metric factorisation failed in more than "
            f"{MAX_FACTOR_FAILURE_RATE:.0%} of {sweeps} sweeps at rungs {bad.tolist()}"
        )
