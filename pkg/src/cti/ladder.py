"""Temperature ladders and the optimal-ladder diagnostic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RUNGS = 50


@dataclass(frozen=True)
class TemperatureLadder:
    """Inverse temperatures ``0 = t_0 < t_1 < ... < t_m = 1``."""

    rungs: np.ndarray

    def __post_init__(self):
        rungs = np.asarray(self.rungs, dtype=float)
        if rungs.ndim != 1 or rungs.size < 2:
            raise ValueError("a ladder needs at least two rungs")
        if rungs[0] != 0.0 or rungs[-1] != 1.0:
            raise ValueError("ladder must start at 0 and end at 1")
        if np.any(np.diff(rungs) <= 0):
            raise ValueError("ladder must be strictly increasing")
        rungs.setflags(write=False)
        object.__setattr__(self, "rungs", rungs)

    @property
    def m(self):
        """Number of intervals (one less than the number of rungs)."""
        return self.rungs.size - 1

    @property
    def widths(self):
        return np.diff(self.rungs)

    def __len__(self):
        return self.rungs.size

    def __getitem__(self, i):
        return self.rungs[i]

    def __eq__(self, other):
        return isinstance(other, TemperatureLadder) and np.array_equal(self.rungs, other.rungs)

    def __hash__(self):
        return hash(self.rungs.tobytes())


def quintic_ladder(m=DEFAULT_RUNGS):
    """Ladder with ``t_i = (i/m)^5``, concentrating rungs near the prior."""
    if int(m) != m or m < 1:
        raise ValueError(f"number of intervals must be a positive integer, got {m!r}")
    m = int(m)
    return TemperatureLadder(np.array([(i / m) ** 5 for i in range(m + 1)]))


@dataclass
class OptimalLadder:
    """Unnormalised optimal ladder density at each rung.

    ``fallback[i]`` is set where the score covariance was singular and the
    plain-TI density ``sqrt(E[g^2])`` was reported instead.
    """

    density: np.ndarray
    radicand: np.ndarray
    fallback: np.ndarray


def _as_trace_list(traces):
    if hasattr(traces, "loglik"):
        return [traces]
    return list(traces)


def optimal_ladder_density(traces, ladder=None, rcond=1e-12):
    """Diagnostic ``p*(t_i)`` from per-rung sample moments.

    Computes ``sqrt(E[g^2] - c^T V[z]^{-1} c)`` where ``c`` is the sample
    cross-covariance of ``g`` with ``z``.  Samples from several traces of
    the same ladder are pooled.  The radicand is clamped at zero.
    """
    traces = _as_trace_list(traces)
    if not traces:
        raise ValueError("no traces supplied")
    if ladder is None:
        ladder = traces[0].ladder
    n_rungs = len(ladder)
    density = np.empty(n_rungs)
    radicand = np.empty(n_rungs)
    fallback = np.zeros(n_rungs, dtype=bool)
    for i in range(n_rungs):
        g = np.concatenate([tr.loglik[i] for tr in traces])
        z = np.concatenate([tr.z[i] for tr in traces], axis=0)
        if g.size < 2:
            raise ValueError(f"rung {i}: at least two samples are needed for a covariance")
        second = np.mean(g * g)
        zc = z - z.mean(axis=0)
        cross = zc.T @ (g - g.mean()) / (g.size - 1)
        cov = zc.T @ zc / (g.size - 1)
        scale = np.trace(cov)
        if scale <= 0 or np.linalg.cond(cov) > 1.0 / rcond:
            fallback[i] = True
            quad = 0.0
        else:
            quad = float(cross @ np.linalg.solve(cov, cross))
        radicand[i] = second - quad
        density[i] = np.sqrt(max(radicand[i], 0.0))
    return OptimalLadder(density=density, radicand=radicand, fallback=fallback)
