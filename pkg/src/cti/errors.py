"""Exception types raised across the package."""

import numpy as np


class NonFiniteError(ValueError):
    """A density, gradient or estimate evaluated to NaN or infinity."""

    def __init__(self, message, theta=None):
        if theta is not None:
            theta = np.array(theta, dtype=float, copy=True)
            message = f"{message} (theta={np.array2string(theta, precision=6)})"
        super().__init__(message)
        self.theta = theta


class IntegrationError(RuntimeError):
    """The ODE integrator failed (step-size underflow or non-finite state)."""

    def __init__(self, message, theta=None):
        if theta is not None:
            theta = np.array(theta, dtype=float, copy=True)
            message = f"{message} (theta={np.array2string(theta, precision=6)})"
        super().__init__(message)
        self.theta = theta


class PositivityError(ValueError):
    """The controlled AIS mean was not strictly positive, so its log is undefined."""


class SamplerAbort(RuntimeError):
    """Population MCMC gave up, e.g. on persistent metric factorisation failures."""
