"""Replication harness: run replicate populations, apply every estimator, aggregate.

A config names either a single model (the target is its log-evidence) or a
model pair from :data:`cti.models.PAIRS` (the target is ``log B_21``).
Replicate ``r`` uses seed ``master + r``; within a pair, model ``k`` uses
the spawn key ``[master + r, k]``.  Every estimator of a replicate reads the
same trace, and each record carries that trace's digest.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .control_variates import DEGREES
from .errors import IntegrationError, NonFiniteError, PositivityError, SamplerAbort
from .estimators import ESTIMATORS, QUADRATURE_ORDERS, ais_estimate, cais_estimate, ti_estimate
from .ladder import quintic_ladder
from .mcmc import DEFAULT_BURN_FRAC, INIT_METHODS, run_population
from .models import MODEL_IDS, PAIRS, get_model
from .svg import Figure

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

logger = logging.getLogger(__name__)

OUTPUT_ENV = "CTI_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "cti-output"
RUN_ERRORS = (SamplerAbort, NonFiniteError, IntegrationError, PositivityError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's numbers.

    ``step_size=None`` uses each model's default.  ``output_dir=None``
    falls back to ``$CTI_OUTPUT_DIR`` and then ``./cti-output``.
    """

    model: str
    rungs: int = 50
    n: int = 1000
    burn_frac: float = DEFAULT_BURN_FRAC
    step_size: float | None = None
    degrees: tuple = (0, 1, 2)
    quadratures: tuple = (1, 2)
    estimators: tuple = ESTIMATORS
    replicates: int = 20
    seed: int = 0
    init: str = "anneal"
    workers: int = 1
    output_dir: str | None = None
    export_traces: bool = False

    def __post_init__(self):
        for name in ("degrees", "quadratures", "estimators"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.model not in MODEL_IDS and self.model not in PAIRS:
            raise ValueError(
                f"unknown model id {self.model!r}; choose from {', '.join(MODEL_IDS + tuple(PAIRS))}"
            )
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.rungs < 1 or self.n < 1:
            raise ValueError("rungs and n must be positive")
        if not 0.0 <= self.burn_frac < 1.0:
            raise ValueError("burn_frac must lie in [0, 1)")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not set(self.degrees) <= set(DEGREES):
            raise ValueError(f"degrees must be drawn from {DEGREES}")
        if not set(self.quadratures) <= set(QUADRATURE_ORDERS):
            raise ValueError(f"quadratures must be drawn from {QUADRATURE_ORDERS}")
        if not set(self.estimators) <= set(ESTIMATORS):
            raise ValueError(f"estimators must be drawn from {ESTIMATORS}")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def model_ids(self):
        return PAIRS.get(self.model, (self.model,))

    @property
    def is_pair(self):
        return self.model in PAIRS

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**mapping)

    def to_dict(self):
        return dataclasses.asdict(self)

    def resolved_output_dir(self):
        return self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT_DIR


def load_config(path, overrides=None):
    """Read a ``.toml`` or ``.json`` config; ``overrides`` replace file values.

    TOML files may carry a ``[paper_scale]`` table; it is ignored here and
    read by :func:`bundled_config`.
    """
    data = _read_config_file(path)
    data.pop("paper_scale", None)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(data)


def _read_config_file(path):
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".json"):
        return json.loads(raw.decode("utf-8"))
    if path.endswith(".toml"):
        return tomllib.loads(raw.decode("utf-8"))
    raise ValueError(f"config must be .toml or .json, got {path!r}")


def bundled_config_ids():
    root = resources.files(__package__).joinpath("configs")
    return tuple(sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml")))


def bundled_config(table_id, paper_scale=False, overrides=None):
    """One of the shipped replication configs, optionally at full scale."""
    if table_id not in bundled_config_ids():
        raise KeyError(f"unknown table id {table_id!r}; choose from {', '.join(bundled_config_ids())}")
    text = resources.files(__package__).joinpath("configs", f"{table_id}.toml").read_text()
    data = tomllib.loads(text)
    big = data.pop("paper_scale", {})
    if paper_scale:
        data.update(big)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(data)


# ---------------------------------------------------------------------------
# per-replicate work


def estimate_specs(config):
    """``(estimator, degree, quadrature)`` triples; quadrature 0 means not applicable."""
    specs = []
    if "TI" in config.estimators:
        specs += [("TI", 0, q) for q in config.quadratures]
    if "CTI" in config.estimators:
        specs += [("CTI", k, q) for k in config.degrees if k > 0 for q in config.quadratures]
    if "AIS" in config.estimators:
        specs.append(("AIS", 0, 0))
    if "CAIS" in config.estimators:
        specs += [("CAIS", k, 0) for k in config.degrees if k > 0]
    return specs


def _apply(trace, spec):
    estimator, degree, quadrature = spec
    if estimator in ("TI", "CTI"):
        return ti_estimate(trace, degree, quadrature)
    if estimator == "AIS":
        return ais_estimate(trace)
    return cais_estimate(trace, degree=degree)


def replicate_seed(config, r, k):
    base = config.seed + r
    return [base, k] if config.is_pair else base


def run_replicate(config, r):
    """Run one replicate and return a JSON-friendly record."""
    t0 = time.perf_counter()
    ladder = quintic_ladder(config.rungs)
    specs = estimate_specs(config)
    per_model = []
    for k, model_id in enumerate(config.model_ids):
        model = get_model(model_id)
        seed = replicate_seed(config, r, k)
        info = {"model": model_id, "seed": seed, "error": None}
        try:
            trace = run_population(
                model, ladder, config.n, config.burn_frac, config.step_size, seed, init=config.init
            )
        except RUN_ERRORS as exc:
            logger.error("replicate %d, %s: sampler failed: %s", r, model_id, exc)
            info["error"] = f"{type(exc).__name__}: {exc}"
            per_model.append(info)
            continue
        if config.export_traces:
            trace.export_csv(os.path.join(config.resolved_output_dir(), "traces", model_id, f"rep_{r:03d}"))
        info["digest"] = trace.digest()
        info["acceptance"] = trace.acceptance.tolist()
        info["swap_acceptance"] = trace.swap_acceptance.tolist()
        info["estimates"] = {}
        info["variance_ratios"] = {}
        info["integrands"] = {}
        for spec in specs:
            key = _spec_key(spec)
            try:
                est = _apply(trace, spec)
            except RUN_ERRORS as exc:
                info["estimates"][key] = {"value": None, "error": f"{type(exc).__name__}: {exc}", "flags": []}
                continue
            info["estimates"][key] = {"value": est.log_evidence, "error": None, "flags": est.flags}
            if spec[0] in ("TI", "CTI") and spec[2] == min(config.quadratures):
                info["variance_ratios"][str(spec[1])] = _nan_to_none(est.variance_ratios)
                info["integrands"][str(spec[1])] = est.rung_means.tolist()
        per_model.append(info)

    records = []
    for spec in specs:
        key = _spec_key(spec)
        values, errors = [], []
        for info in per_model:
            if info["error"]:
                errors.append(f"{info['model']}: {info['error']}")
                continue
            rec = info["estimates"][key]
            if rec["error"]:
                errors.append(f"{info['model']}: {rec['error']}")
            values.append(rec["value"])
        value = None
        if not errors:
            value = values[1] - values[0] if config.is_pair else values[0]
        records.append(
            {
                "estimator": spec[0],
                "degree": spec[1],
                "quadrature": spec[2],
                "value": value,
                "error": "; ".join(errors) or None,
                "digest": ":".join(info.get("digest", "-") for info in per_model),
            }
        )
    return {
        "replicate": r,
        "records": records,
        "models": per_model,
        "elapsed": time.perf_counter() - t0,
    }


def _spec_key(spec):
    return f"{spec[0]}/{spec[1]}/{spec[2]}"


def _nan_to_none(arr):
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(arr, dtype=float)]


# ---------------------------------------------------------------------------
# aggregation


RESULT_COLUMNS = (
    "model", "quantity", "estimator", "degree", "quadrature", "n",
    "mean", "sd", "mse", "se_mse", "truth", "n_ok", "n_failed",
)


@dataclass
class ResultRow:
    model: str
    quantity: str
    estimator: str
    degree: int
    quadrature: int
    n: int
    mean: float | None
    sd: float | None
    mse: float | None
    se_mse: float | None
    truth: float | None
    n_ok: int
    n_failed: int

    @property
    def label(self):
        if self.estimator in ("TI", "CTI"):
            return f"{self.estimator}(deg={self.degree},Q{self.quadrature})"
        if self.estimator == "CAIS":
            return f"CAIS(deg={self.degree})"
        return self.estimator


@dataclass
class ResultTable:
    """Replicate summary per ``(estimator, degree, quadrature, N)``.

    ``mse`` and ``se_mse`` are filled only when the target has a closed form.
    """

    rows: list = field(default_factory=list)

    def row(self, estimator, degree=0, quadrature=None):
        for r in self.rows:
            if r.estimator == estimator and r.degree == degree and (quadrature is None or r.quadrature == quadrature):
                return r
        raise KeyError((estimator, degree, quadrature))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULT_COLUMNS)
            for r in self.rows:
                writer.writerow([_cell(getattr(r, c)) for c in RESULT_COLUMNS])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
                raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
            rows = []
            for rec in reader:
                rows.append(
                    ResultRow(
                        model=rec["model"],
                        quantity=rec["quantity"],
                        estimator=rec["estimator"],
                        degree=int(rec["degree"]),
                        quadrature=int(rec["quadrature"]),
                        n=int(rec["n"]),
                        mean=_parse_float(rec["mean"]),
                        sd=_parse_float(rec["sd"]),
                        mse=_parse_float(rec["mse"]),
                        se_mse=_parse_float(rec["se_mse"]),
                        truth=_parse_float(rec["truth"]),
                        n_ok=int(rec["n_ok"]),
                        n_failed=int(rec["n_failed"]),
                    )
                )
        return cls(rows)

    def format(self):
        """Fixed-width text rendering for terminals."""
        lines = [f"{'estimator':<22}{'N':>6}{'mean':>14}{'sd':>12}{'mse':>12}{'se(mse)':>12}{'ok/fail':>10}"]
        for r in self.rows:
            lines.append(
                f"{r.label:<22}{r.n:>6}{_show(r.mean, '.6f'):>14}{_show(r.sd, '.3e'):>12}"
                f"{_show(r.mse, '.3e'):>12}{_show(r.se_mse, '.3e'):>12}{f'{r.n_ok}/{r.n_failed}':>10}"
            )
        return "\n".join(lines)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_float(s):
    return None if s == "" else float(s)


def _show(v, fmt):
    return "-" if v is None else format(v, fmt)


def closed_form_truth(config):
    """Exact target value when every model involved has a closed form."""
    values = [get_model(m).closed_form_log_evidence() for m in config.model_ids]
    if any(v is None for v in values):
        return None
    return values[1] - values[0] if config.is_pair else values[0]


def aggregate(config, replicates, truth):
    quantity = "log_bayes_factor" if config.is_pair else "log_evidence"
    rows = []
    for i, spec in enumerate(estimate_specs(config)):
        values = [rep["records"][i]["value"] for rep in replicates]
        ok = np.array([v for v in values if v is not None], dtype=float)
        mean = float(ok.mean()) if ok.size else None
        sd = float(ok.std(ddof=1)) if ok.size > 1 else None
        mse = se_mse = None
        if truth is not None and ok.size:
            sq = (ok - truth) ** 2
            mse = float(sq.mean())
            se_mse = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else None
        rows.append(
            ResultRow(
                model=config.model,
                quantity=quantity,
                estimator=spec[0],
                degree=spec[1],
                quadrature=spec[2],
                n=config.n,
                mean=mean,
                sd=sd,
                mse=mse,
                se_mse=se_mse,
                truth=truth,
                n_ok=int(ok.size),
                n_failed=len(values) - int(ok.size),
            )
        )
    return ResultTable(rows)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    table: ResultTable
    replicates: list
    truth: float | None
    ladder: np.ndarray
    elapsed: float

    def rt_curve(self, model_id):
        """``{degree: (mean R, stderr R)}`` per rung over successful replicates.

        Degree 0 is the constant baseline ``R = 1``.
        """
        out = {}
        degrees = sorted({0} | {k for k in self.config.degrees})
        for k in degrees:
            if k == 0:
                out[0] = (np.ones(self.ladder.size), np.zeros(self.ladder.size))
                continue
            stack = self._stack(model_id, "variance_ratios", k)
            if stack is None:
                continue
            cnt = np.sum(np.isfinite(stack), axis=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                mean = np.nanmean(stack, axis=0) if stack.size else stack
                se = np.nanstd(stack, axis=0, ddof=1) / np.sqrt(cnt) if stack.shape[0] > 1 else np.full(stack.shape[1], np.nan)
            out[k] = (mean, se)
        return out

    def integrands(self, model_id):
        """``{degree: (mean, sd)}`` of the per-rung integrand estimates."""
        out = {}
        for k in sorted(set(self.config.degrees) | {0}):
            stack = self._stack(model_id, "integrands", k)
            if stack is None:
                continue
            sd = stack.std(axis=0, ddof=1) if stack.shape[0] > 1 else np.full(stack.shape[1], np.nan)
            out[k] = (stack.mean(axis=0), sd)
        return out

    def _stack(self, model_id, key, degree):
        rows = []
        for rep in self.replicates:
            for info in rep["models"]:
                if info["model"] == model_id and not info["error"]:
                    vals = info.get(key, {}).get(str(degree))
                    if vals is not None:
                        rows.append([np.nan if v is None else v for v in vals])
        return np.array(rows, dtype=float) if rows else None

    @property
    def failures(self):
        return [
            (rep["replicate"], rec["estimator"], rec["degree"], rec["quadrature"], rec["error"])
            for rep in self.replicates
            for rec in rep["records"]
            if rec["error"]
        ]


def run_experiment(config):
    """Run every replicate of ``config`` and aggregate the results."""
    t0 = time.perf_counter()
    reps = range(config.replicates)
    if config.workers > 1 and config.replicates > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            replicates = list(pool.map(run_replicate, [config] * config.replicates, reps))
    else:
        replicates = [run_replicate(config, r) for r in reps]
    truth = closed_form_truth(config)
    table = aggregate(config, replicates, truth)
    return ExperimentResult(
        config=config,
        table=table,
        replicates=replicates,
        truth=truth,
        ladder=quintic_ladder(config.rungs).rungs.copy(),
        elapsed=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# outputs


def emit_outputs(result, directory=None):
    """Write results.json, results.csv, rt_curve.csv, integrands.csv and SVG figures.

    Returns the list of written paths.
    """
    directory = directory or result.config.resolved_output_dir()
    os.makedirs(directory, exist_ok=True)
    if not os.access(directory, os.W_OK):
        raise PermissionError(f"output directory {directory!r} is not writable")
    paths = []

    path = os.path.join(directory, "results.csv")
    result.table.to_csv(path)
    paths.append(path)

    path = os.path.join(directory, "results.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "version": __version__,
                "config": result.config.to_dict(),
                "truth": result.truth,
                "ladder": result.ladder.tolist(),
                "table": [dataclasses.asdict(r) for r in result.table.rows],
                "replicates": result.replicates,
                "failures": result.failures,
                "elapsed_seconds": result.elapsed,
            },
            fh,
            indent=1,
        )
    paths.append(path)

    path = os.path.join(directory, "rt_curve.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "degree", "rung", "t", "mean_R", "stderr_R"])
        for model_id in result.config.model_ids:
            for k, (mean, se) in result.rt_curve(model_id).items():
                for i, t in enumerate(result.ladder):
                    writer.writerow([model_id, k, i, repr(float(t)), _cell_f(mean[i]), _cell_f(se[i])])
    paths.append(path)

    path = os.path.join(directory, "integrands.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "degree", "rung", "t", "mean", "sd"])
        for model_id in result.config.model_ids:
            for k, (mean, sd) in result.integrands(model_id).items():
                for i, t in enumerate(result.ladder):
                    writer.writerow([model_id, k, i, repr(float(t)), _cell_f(mean[i]), _cell_f(sd[i])])
    paths.append(path)

    paths += _figures(result, directory)
    return paths


def _cell_f(v):
    v = float(v)
    return repr(v) if np.isfinite(v) else ""


def _figures(result, directory):
    paths = []
    idx = np.arange(result.ladder.size)
    for model_id in result.config.model_ids:
        fig = Figure(f"{model_id}: variance ratio R(t_i)", "rung index i", "R", logy=True)
        for k, (mean, se) in result.rt_curve(model_id).items():
            if k == 0:
                fig.line(idx, mean, label="TI (R=1)", color="#777777")
                continue
            fig.band(idx, np.maximum(mean - se, 1e-300), mean + se)
            fig.line(idx, mean, label=f"degree {k}")
        path = os.path.join(directory, f"rt_curve_{model_id}.svg")
        fig.save(path)
        paths.append(path)

        fig = Figure(f"{model_id}: integrand E_t[log p(y|theta)]", "t", "integrand")
        for k, (mean, sd) in result.integrands(model_id).items():
            fig.band(result.ladder, mean - 2 * np.nan_to_num(sd), mean + 2 * np.nan_to_num(sd))
            fig.line(result.ladder, mean, label="TI" if k == 0 else f"CTI degree {k}")
        path = os.path.join(directory, f"integrands_{model_id}.svg")
        fig.save(path)
        paths.append(path)
    return paths
