"""Loaders for the bundled benchmark datasets.

Every file is a plain CSV with a header row:

========================  ==================================================
``radiata.csv``           ``y, x, z``: strength, density, resin-adjusted density (42 rows)
``pima.csv``              ``npreg, glu, bp, skin, bmi, ped, age, diabetic`` (532 rows)
``goodwin_3.csv``         ``s, y1, y2``: noisy mRNA and protein at ``s = 41..80``
``goodwin_4.csv``         as above, simulated from the four-species system
``linreg_known.csv``      ``x1, x2, x3, y``: frozen synthetic regression (100 rows)
========================  ==================================================
"""

from __future__ import annotations

import csv
from functools import lru_cache
from importlib import resources

import numpy as np

EXPECTED_ROWS = {
    "radiata.csv": 42,
    "pima.csv": 532,
    "goodwin_3.csv": 40,
    "goodwin_4.csv": 40,
    "linreg_known.csv": 100,
}


class DatasetError(ValueError):
    """A bundled data file is missing columns or has the wrong size."""


@lru_cache(maxsize=None)
def _read(filename):
    text = resources.files(__package__).joinpath("data", filename).read_text()
    rows = list(csv.reader(text.splitlines()))
    header, body = rows[0], [r for r in rows[1:] if r]
    data = np.array(body, dtype=float)
    expected = EXPECTED_ROWS.get(filename)
    if expected is not None and data.shape[0] != expected:
        raise DatasetError(f"{filename}: expected {expected} rows, found {data.shape[0]}")
    data.setflags(write=False)
    return tuple(header), data


def load_table(filename):
    """Return ``(columns, array)`` for a bundled CSV (array is read-only)."""
    return _read(filename)


def _column(header, data, name, filename):
    try:
        return data[:, header.index(name)]
    except ValueError:
        raise DatasetError(f"{filename}: no column {name!r}") from None


def load_radiata():
    """Return ``(y, x, z)``."""
    header, data = _read("radiata.csv")
    return tuple(_column(header, data, c, "radiata.csv").copy() for c in ("y", "x", "z"))


PIMA_COLUMNS = ("npreg", "glu", "bp", "skin", "bmi", "ped", "age")


def load_pima():
    """Return ``(covariates, outcome, names)`` with all seven raw covariates."""
    header, data = _read("pima.csv")
    X = np.column_stack([_column(header, data, c, "pima.csv") for c in PIMA_COLUMNS])
    y = _column(header, data, "diabetic", "pima.csv").copy()
    if not np.all((y == 0) | (y == 1)):
        raise DatasetError("pima.csv: outcome must be 0/1")
    return X, y, PIMA_COLUMNS


def load_goodwin(g):
    """Return ``(times, observations)`` with observations of shape ``(40, 2)``."""
    name = f"goodwin_{g}.csv"
    header, data = _read(name)
    s = _column(header, data, "s", name).copy()
    obs = np.column_stack([_column(header, data, c, name) for c in ("y1", "y2")])
    return s, obs


def load_linreg_known():
    """Return ``(X, y)`` of the frozen synthetic regression instance."""
    header, data = _read("linreg_known.csv")
    cols = [c for c in header if c.startswith("x")]
    X = np.column_stack([_column(header, data, c, "linreg_known.csv") for c in cols])
    return X, _column(header, data, "y", "linreg_known.csv").copy()
