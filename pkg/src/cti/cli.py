"""Command-line interface: ``python -m cti`` or the ``cti`` script.

Exit codes: 0 success, 1 a run or check failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings

import numpy as np

from . import __version__
from .bench import (
    OUTPUT_ENV,
    ExperimentConfig,
    bundled_config,
    bundled_config_ids,
    emit_outputs,
    load_config,
    run_experiment,
)
from .errors import IntegrationError, NonFiniteError, PositivityError, SamplerAbort
from .estimators import ESTIMATORS, ais_estimate, cais_estimate, ti_estimate
from .ladder import DEFAULT_RUNGS, quintic_ladder
from .mcmc import run_population
from .model import check_gradients
from .models import MODEL_IDS, GoodwinModel, get_model
from .models.goodwin import sensitivity_check

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def build_parser():
    parser = argparse.ArgumentParser(prog="cti", description="Controlled thermodynamic integration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a .toml or .json config")
    p.add_argument("config")
    _add_experiment_overrides(p)

    p = sub.add_parser("replicate", help="run a bundled replication config")
    p.add_argument("table_id", help=f"one of: {', '.join(bundled_config_ids())}")
    p.add_argument("--paper-scale", action="store_true", help="full replicate count (slow)")
    _add_experiment_overrides(p)

    p = sub.add_parser("evidence", help="estimate one model's log-evidence from a single run")
    p.add_argument("model", help=f"one of: {', '.join(MODEL_IDS)}")
    p.add_argument("--estimator", choices=ESTIMATORS, default=None,
                   help="defaults to CTI for degree > 0, else TI")
    p.add_argument("--degree", type=int, default=2, choices=(0, 1, 2))
    p.add_argument("--quadrature", type=int, default=2, choices=(1, 2))
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--rungs", type=int, default=DEFAULT_RUNGS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--export-traces", metavar="DIR", default=None, help="write per-rung trace CSVs")

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    p.add_argument("model", help=f"one of: {', '.join(MODEL_IDS)}")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=None, help="default 1e-5 (1e-4 for ODE models)")
    return parser


def _add_experiment_overrides(p):
    p.add_argument("--output", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./cti-output)")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--rungs", type=int, default=None)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--export-traces", action="store_true", default=None)


def _overrides(args):
    return {
        "output_dir": args.output,
        "replicates": args.replicates,
        "seed": args.seed,
        "n": args.n,
        "rungs": args.rungs,
        "step_size": args.step_size,
        "workers": args.workers,
        "export_traces": args.export_traces,
    }


def cmd_run(args):
    try:
        config = load_config(args.config, _overrides(args))
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"bad config {args.config!r}: {exc}") from exc
    return _run_and_report(config)


def cmd_replicate(args):
    try:
        config = bundled_config(args.table_id, args.paper_scale, _overrides(args))
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    if args.paper_scale:
        warnings.warn(
            f"full scale: {config.replicates} replicates of N={config.n}; expect a long run",
            RuntimeWarning,
            stacklevel=1,
        )
    return _run_and_report(config)


def _run_and_report(config: ExperimentConfig):
    result = run_experiment(config)
    paths = emit_outputs(result)
    print(f"{config.model}: {config.replicates} replicates, N={config.n}, m={config.rungs}")
    if result.truth is not None:
        print(f"closed-form truth: {result.truth:.6f}")
    print(result.table.format())
    print(f"wrote {len(paths)} files to {config.resolved_output_dir()}")
    if result.failures:
        for rep, est, deg, quad, err in result.failures:
            label = {"TI": f"TI(Q{quad})", "CTI": f"CTI(deg={deg},Q{quad})", "CAIS": f"CAIS(deg={deg})"}.get(est, est)
            print(f"failure: replicate {rep} {label}: {err}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_evidence(args):
    model = _model(args.model)
    estimator = args.estimator or ("CTI" if args.degree > 0 else "TI")
    if estimator == "TI" and args.degree != 0:
        raise UsageError("TI is degree 0; use --estimator CTI for controlled estimates")
    if estimator == "CTI" and args.degree == 0:
        raise UsageError("CTI needs --degree 1 or 2")
    try:
        trace = run_population(model, quintic_ladder(args.rungs), args.n, step_size=args.step_size, seed=args.seed)
        if estimator in ("TI", "CTI"):
            est = ti_estimate(trace, args.degree, args.quadrature)
        elif estimator == "AIS":
            est = ais_estimate(trace)
        else:
            est = cais_estimate(trace, degree=max(args.degree, 1))
    except (SamplerAbort, NonFiniteError, IntegrationError, PositivityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.export_traces:
        trace.export_csv(args.export_traces)
    print(f"model:        {model.name}")
    print(f"estimator:    {est.label}")
    print(f"log-evidence: {est.log_evidence:.8f}")
    truth = model.closed_form_log_evidence()
    if truth is not None:
        print(f"closed form:  {truth:.8f}")
        print(f"error:        {est.log_evidence - truth:+.3e}")
    print(f"trace:        {trace.digest()[:16]}")
    for flag in est.flags:
        print(f"note: {flag}")
    return EXIT_OK


def cmd_gradcheck(args):
    model = _model(args.model)
    is_ode = isinstance(model, GoodwinModel)
    tol = args.tol if args.tol is not None else (1e-4 if is_ode else 1e-5)
    if is_ode:
        # differencing through the solver needs tighter tolerances than sampling does
        model = model.with_tolerances(1e-10, 1e-12)
    rng = np.random.default_rng(args.seed)
    ok = True
    for theta in model.test_points(rng, args.points):
        report = check_gradients(model, theta)
        status = "pass" if report.passed(tol) else "FAIL"
        ok &= report.passed(tol)
        print(f"{status}  max error {report.max_error:.2e}  theta={np.array2string(theta, precision=4)}")
    if is_ode:
        err = sensitivity_check(model)
        ok &= err <= tol
        print(f"{'pass' if err <= tol else 'FAIL'}  sensitivities vs finite differences: max rel error {err:.2e}")
    print(f"gradcheck {model.name}: {'pass' if ok else 'FAIL'} (tol {tol:g})")
    return EXIT_OK if ok else EXIT_FAILURE


def _model(model_id):
    try:
        return get_model(model_id)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc


COMMANDS = {
    "run": cmd_run,
    "replicate": cmd_replicate,
    "evidence": cmd_evidence,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cti {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
