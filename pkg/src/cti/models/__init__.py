"""Benchmark models and a small registry keyed by model id."""

from __future__ import annotations

from .goodwin import GoodwinModel, goodwin_score, goodwin_solve_with_sensitivities
from .linreg import LinRegKnown, linreg_known_closed_forms
from .logistic import LogisticModel, logistic_score, pima_model
from .radiata import LinRegUnknown, radiata_log_evidence, radiata_model, radiata_z

_FACTORIES = {
    "linreg-known": LinRegKnown,
    "radiata1": lambda: radiata_model(1),
    "radiata2": lambda: radiata_model(2),
    "pima1": lambda: pima_model(1),
    "pima2": lambda: pima_model(2),
    "goodwin3": lambda: GoodwinModel(3),
    "goodwin4": lambda: GoodwinModel(4),
}

# model comparisons: (model 1, model 2); the Bayes factor reported is B_21
PAIRS = {
    "radiata": ("radiata1", "radiata2"),
    "pima": ("pima1", "pima2"),
    "goodwin": ("goodwin3", "goodwin4"),
}

MODEL_IDS = tuple(_FACTORIES)


def get_model(model_id):
    """Instantiate a registered model."""
    try:
        return _FACTORIES[model_id]()
    except KeyError:
        raise KeyError(f"unknown model id {model_id!r}; choose from {', '.join(MODEL_IDS)}") from None


__all__ = [
    "GoodwinModel",
    "LinRegKnown",
    "LinRegUnknown",
    "LogisticModel",
    "MODEL_IDS",
    "PAIRS",
    "get_model",
    "goodwin_score",
    "goodwin_solve_with_sensitivities",
    "linreg_known_closed_forms",
    "logistic_score",
    "pima_model",
    "radiata_log_evidence",
    "radiata_model",
    "radiata_z",
]
