import numpy as np
import pytest

from cti.ladder import quintic_ladder
from cti.mcmc import run_population
from cti.model import DifferentiableModel
from cti.models import LinRegKnown

# lines recorded by test_acceptance, echoed at the end of the session
CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERIA:
        terminalreporter.write_line(line)


class FlatModel(DifferentiableModel):
    """Constant likelihood, improper flat prior, identity metric."""

    name = "flat"
    tail_class = "unknown"

    def __init__(self, dim=2, const=0.0):
        self.dim = dim
        self.const = const

    def log_likelihood(self, theta):
        return self.const + 0.0 * np.sum(np.asarray(theta), axis=-1)

    def grad_log_likelihood(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def log_prior(self, theta):
        return 0.0 * np.sum(np.asarray(theta), axis=-1)

    def grad_log_prior(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def fisher_information(self, theta):
        return np.zeros((self.dim, self.dim))

    def prior_metric(self, theta):
        return np.eye(self.dim)

    def sample_prior(self, rng, size):
        return rng.standard_normal((size, self.dim))


@pytest.fixture
def flat_model():
    return FlatModel()


@pytest.fixture(scope="session")
def linreg():
    return LinRegKnown()


@pytest.fixture(scope="session")
def linreg_trace(linreg):
    return run_population(linreg, quintic_ladder(10), 2000, seed=11)
