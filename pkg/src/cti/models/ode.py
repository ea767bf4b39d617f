"""Adaptive Dormand-Prince 5(4) integration with dense output, compiled with numba.

The tableau (including the continuous-extension matrix) is taken from
:class:`scipy.integrate.RK45`; stepping, error control and interpolation
run in compiled code because the sampler solves the Goodwin system tens of
thousands of times per run.
"""

import numpy as np
from numba import njit
from scipy.integrate import RK45

_C = np.ascontiguousarray(RK45.C, dtype=np.float64)
_A = np.ascontiguousarray(RK45.A, dtype=np.float64)
_B = np.ascontiguousarray(RK45.B, dtype=np.float64)
_E = np.ascontiguousarray(RK45.E, dtype=np.float64)
_P = np.ascontiguousarray(RK45.P, dtype=np.float64)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
MAX_STEPS = 200_000

# solver status codes
OK = 0
STEP_UNDERFLOW = 1
NON_FINITE = 2
TOO_MANY_STEPS = 3

STATUS_MESSAGES = {
    OK: "ok",
    STEP_UNDERFLOW: "step size underflow",
    NON_FINITE: "non-finite state",
    TOO_MANY_STEPS: "maximum number of steps exceeded",
}


@njit(cache=True)
def goodwin_augmented_rhs(t, y, params, out):
    """Goodwin oscillator plus forward sensitivities w.r.t. log-parameters.

    ``params = [rho, a1, a2, k_1, ..., k_{g-1}, alpha]`` on the natural
    scale.  ``y = [x (g), S (d x g, row-major)]`` with
    ``S[i, k] = dx_k / dtheta_i`` and ``theta = log(params[1:])``.
    """
    rho = params[0]
    a1 = params[1]
    a2 = params[2]
    d = params.size - 1
    g = d - 2
    alpha = params[d]
    xg = y[g - 1]
    xg_rho = xg ** rho
    denom = 1.0 + a2 * xg_rho
    # states
    out[0] = a1 / denom - alpha * y[0]
    for k in range(1, g):
        out[k] = params[k + 2] * y[k - 1] - alpha * y[k]
    # d f_0 / d x_g
    j0g = -a1 * a2 * rho * xg ** (rho - 1.0) / (denom * denom)
    for i in range(d):
        base = g + i * g
        # J S
        out[base] = -alpha * y[base] + j0g * y[base + g - 1]
        for k in range(1, g):
            out[base + k] = params[k + 2] * y[base + k - 1] - alpha * y[base + k]
        # explicit parameter derivative, chain rule through the log scale
        if i == 0:
            out[base] += a1 / denom
        elif i == 1:
            out[base] += -a1 * xg_rho / (denom * denom) * a2
        elif i == d - 1:
            for k in range(g):
                out[base + k] += -alpha * y[k]
        else:
            # rate constant k_i drives species i (0-based) from species i-1
            kk = i - 1
            out[base + kk] += params[i + 1] * y[kk - 1]


@njit(cache=True)
def _rms_norm(v):
    s = 0.0
    for i in range(v.size):
        s += v[i] * v[i]
    return np.sqrt(s / v.size)


@njit(cache=True)
def dopri5(rhs, y0, params, t_obs, rtol, atol, h0):
    """Integrate from ``t = 0`` and return the solution at ``t_obs``.

    ``t_obs`` must be sorted and non-negative.  Returns ``(status, out)``
    with ``out`` of shape ``(len(t_obs), len(y0))``.
    """
    n = y0.size
    n_obs = t_obs.size
    out = np.full((n_obs, n), np.nan)
    K = np.empty((7, n))
    y = y0.copy()
    y_new = np.empty(n)
    tmp = np.empty(n)
    f = np.empty(n)
    t = 0.0
    t_end = t_obs[n_obs - 1]
    rhs(t, y, params, f)
    j = 0
    while j < n_obs and t_obs[j] <= 0.0:
        out[j] = y
        j += 1
    h = h0
    steps = 0
    while j < n_obs:
        if steps >= MAX_STEPS:
            return TOO_MANY_STEPS, out
        if t + h > t_end:
            h = t_end - t
        if h <= 1e-14 * max(1.0, abs(t)):
            return STEP_UNDERFLOW, out
        K[0] = f
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for q in range(s):
                    acc += _A[s, q] * K[q, i]
                tmp[i] = y[i] + h * acc
            rhs(t + _C[s] * h, tmp, params, K[s])
        for i in range(n):
            acc = 0.0
            for q in range(6):
                acc += _B[q] * K[q, i]
            y_new[i] = y[i] + h * acc
        rhs(t + h, y_new, params, K[6])
        for i in range(n):
            acc = 0.0
            for q in range(7):
                acc += _E[q] * K[q, i]
            scale = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            tmp[i] = h * acc / scale
        err = _rms_norm(tmp)
        steps += 1
        if not np.isfinite(err):
            h *= MIN_FACTOR
            if not np.all(np.isfinite(y_new)) and h <= 1e-14 * max(1.0, abs(t)):
                return NON_FINITE, out
            continue
        if err <= 1.0:
            t_new = t + h
            # dense output for observation times inside (t, t_new]
            while j < n_obs and t_obs[j] <= t_new:
                x = (t_obs[j] - t) / h
                for i in range(n):
                    acc = 0.0
                    for q in range(7):
                        poly = 0.0
                        xp = 1.0
                        for r in range(4):
                            xp *= x
                            poly += _P[q, r] * xp
                        acc += K[q, i] * poly
                    out[j, i] = y[i] + h * acc
                j += 1
            t = t_new
            y[:] = y_new
            f[:] = K[6]
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = min(MAX_FACTOR, SAFETY * err ** -0.2)
            h *= factor
        else:
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2)
    for jj in range(n_obs):
        for i in range(n):
            if not np.isfinite(out[jj, i]):
                return NON_FINITE, out
    return OK, out
