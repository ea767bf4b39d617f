"""Controlled thermodynamic integration for Bayesian model evidence.

The pieces, in the order a run uses them:

* :mod:`cti.model` is the differentiable-model interface and power posterior.
* :mod:`cti.ladder` holds temperature ladders and the optimal-ladder diagnostic.
* :mod:`cti.mcmc` runs population MCMC with simplified-mMALA moves.
* :mod:`cti.control_variates` provides zero-variance control variates.
* :mod:`cti.estimators` has the TI, CTI, AIS and controlled-AIS estimators.
* :mod:`cti.models` has the benchmark models.
* :mod:`cti.bench` and :mod:`cti.cli` are the replication harness and CLI.
"""

__version__ = "0.1.0"

from .control_variates import (  # noqa: E402
    RungSamples,
    ZvCoefficients,
    controlled_mean,
    features,
    plugin_coefficients,
    tail_condition_report,
    variance_ratio,
)
from .errors import IntegrationError, NonFiniteError, PositivityError, SamplerAbort  # noqa: E402
from .estimators import (  # noqa: E402
    EvidenceEstimate,
    ais_estimate,
    bayes_factor,
    cais_estimate,
    ti_estimate,
)
from .ladder import TemperatureLadder, optimal_ladder_density, quintic_ladder  # noqa: E402
from .mcmc import ChainTrace, mmala_step, run_population, swap_step  # noqa: E402
from .model import DifferentiableModel, PowerPosterior, check_gradients, power_log_density, score_z  # noqa: E402

__all__ = [
    "ChainTrace",
    "DifferentiableModel",
    "EvidenceEstimate",
    "IntegrationError",
    "NonFiniteError",
    "PositivityError",
    "PowerPosterior",
    "RungSamples",
    "SamplerAbort",
    "TemperatureLadder",
    "ZvCoefficients",
    "ais_estimate",
    "bayes_factor",
    "cais_estimate",
    "check_gradients",
    "controlled_mean",
    "features",
    "mmala_step",
    "optimal_ladder_density",
    "plugin_coefficients",
    "power_log_density",
    "quintic_ladder",
    "run_population",
    "score_z",
    "swap_step",
    "tail_condition_report",
    "ti_estimate",
    "variance_ratio",
]
