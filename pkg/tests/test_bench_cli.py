import csv
import json

import numpy as np
import pytest

from cti import bench
from cti.bench import (
    ExperimentConfig,
    ResultTable,
    bundled_config,
    bundled_config_ids,
    emit_outputs,
    estimate_specs,
    load_config,
    run_experiment,
)
from cti.cli import main
from cti.errors import SamplerAbort

SMALL = dict(model="linreg-known", rungs=10, n=200, replicates=2, seed=3)


@pytest.fixture(scope="module")
def small_result():
    return run_experiment(ExperimentConfig(**SMALL))


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize(
    "bad",
    [
        {"model": "nope"},
        {"replicates": 0},
        {"degrees": [3]},
        {"quadratures": [0]},
        {"estimators": ["XYZ"]},
        {"burn_frac": 1.0},
        {"step_size": 0.0},
        {"workers": 0},
        {"init": "zero"},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**{"model": "linreg-known", **bad})


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_mapping({"model": "linreg-known", "temperature": 3})


def test_load_toml_and_json(tmp_path):
    toml = tmp_path / "c.toml"
    toml.write_text('model = "radiata"\nrungs = 20\ndegrees = [0, 2]\n[paper_scale]\nreplicates = 100\n')
    cfg = load_config(toml, {"seed": 9, "n": None})
    assert cfg.model == "radiata" and cfg.rungs == 20 and cfg.degrees == (0, 2) and cfg.seed == 9
    assert cfg.is_pair and cfg.model_ids == ("radiata1", "radiata2")
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"model": "pima1", "replicates": 4}))
    assert load_config(js).replicates == 4
    bad = tmp_path / "c.yaml"
    bad.write_text("model: x")
    with pytest.raises(ValueError):
        load_config(bad)


def test_bundled_configs():
    assert set(bundled_config_ids()) == {"goodwin", "linreg-known", "pima", "radiata"}
    desk = bundled_config("pima")
    assert (desk.rungs, desk.n, desk.replicates) == (50, 1000, 20)
    assert bundled_config("pima", paper_scale=True).replicates == 100
    assert bundled_config("radiata", overrides={"replicates": 3}).replicates == 3
    with pytest.raises(KeyError):
        bundled_config("table-9")


def test_estimate_specs():
    cfg = ExperimentConfig("linreg-known", degrees=(0, 1, 2), quadratures=(1, 2))
    specs = estimate_specs(cfg)
    assert ("TI", 0, 1) in specs and ("CTI", 2, 2) in specs and ("AIS", 0, 0) in specs
    assert ("CAIS", 1, 0) in specs and ("CTI", 0, 1) not in specs
    assert len(specs) == 2 + 4 + 1 + 2


def test_single_replicate_ti_only(tmp_path):
    cfg = ExperimentConfig("linreg-known", rungs=10, n=100, replicates=1, estimators=("TI",), quadratures=(2,))
    result = run_experiment(cfg)
    assert len(result.table.rows) == 1
    row = result.table.rows[0]
    assert row.n_ok == 1 and row.sd is None
    assert row.mse == pytest.approx((row.mean - row.truth) ** 2, rel=1e-12)


def test_table_columns_and_truth(small_result):
    table = small_result.table
    assert small_result.truth == pytest.approx(bench.get_model("linreg-known").closed_form_log_evidence())
    for row in table.rows:
        assert row.mse is not None and row.n_ok == 2
    cti = table.row("CTI", 2, 2)
    ti = table.row("TI", 0, 2)
    assert cti.mse < ti.mse


def test_no_mse_without_closed_form():
    cfg = ExperimentConfig("pima1", rungs=5, n=60, replicates=1, degrees=(0,), estimators=("TI",), quadratures=(1,))
    row = run_experiment(cfg).table.rows[0]
    assert row.truth is None and row.mse is None and row.mean is not None


def test_outputs_byte_identical_on_rerun(tmp_path, small_result):
    emit_outputs(small_result, tmp_path / "a")
    emit_outputs(run_experiment(ExperimentConfig(**SMALL)), tmp_path / "b")
    for name in ("results.csv", "rt_curve.csv", "integrands.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_round_trip(tmp_path, small_result):
    path = tmp_path / "results.csv"
    small_result.table.to_csv(path)
    assert ResultTable.from_csv(path) == small_result.table


def test_emitted_files(tmp_path, small_result):
    paths = emit_outputs(small_result, tmp_path)
    names = {p.split("/")[-1] for p in paths}
    assert {"results.csv", "results.json", "rt_curve.csv", "integrands.csv"} <= names
    assert "rt_curve_linreg-known.svg" in names and "integrands_linreg-known.svg" in names
    doc = json.loads((tmp_path / "results.json").read_text())
    assert doc["config"]["model"] == "linreg-known" and len(doc["replicates"]) == 2
    assert (tmp_path / "rt_curve_linreg-known.svg").read_text().startswith("<svg")


def test_degree_two_rt_curve_vanishes(tmp_path, small_result):
    emit_outputs(small_result, tmp_path)
    rows = _read_csv(tmp_path / "rt_curve.csv")
    deg2 = [float(r["mean_R"]) for r in rows if r["degree"] == "2"]
    assert len(deg2) == 11 and max(deg2) <= 1e-8
    deg0 = [float(r["mean_R"]) for r in rows if r["degree"] == "0"]
    assert deg0 == [1.0] * 11


def test_degree_zero_only_baseline(tmp_path):
    cfg = ExperimentConfig("linreg-known", rungs=5, n=50, replicates=1, degrees=(0,))
    emit_outputs(run_experiment(cfg), tmp_path)
    rows = _read_csv(tmp_path / "rt_curve.csv")
    assert {r["degree"] for r in rows} == {"0"}
    assert all(float(r["mean_R"]) == 1.0 for r in rows)


def test_trace_shared_across_estimators(small_result):
    for rep in small_result.replicates:
        digests = {rec["digest"] for rec in rep["records"]}
        assert len(digests) == 1
        assert rep["models"][0]["digest"] in digests


def test_pair_reports_bayes_factor():
    cfg = ExperimentConfig("radiata", rungs=8, n=150, replicates=1, degrees=(2,), estimators=("CTI",), quadratures=(2,))
    result = run_experiment(cfg)
    rep = result.replicates[0]
    m1, m2 = rep["models"]
    key = "CTI/2/2"
    assert rep["records"][0]["value"] == pytest.approx(m2["estimates"][key]["value"] - m1["estimates"][key]["value"])
    assert m1["seed"] == [0, 0] and m2["seed"] == [0, 1]
    assert result.table.rows[0].quantity == "log_bayes_factor"


def test_parallel_workers_match_serial():
    serial = run_experiment(ExperimentConfig(**{**SMALL, "n": 60}))
    parallel = run_experiment(ExperimentConfig(**{**SMALL, "n": 60, "workers": 2}))
    assert serial.table == parallel.table


def test_failed_replicate_is_recorded(monkeypatch):
    real = bench.run_population

    def flaky(model, ladder, n, burn_frac, step_size, seed, init):
        if seed == 1:
            raise SamplerAbort("synthetic failure")
        return real(model, ladder, n, burn_frac, step_size, seed, init=init)

    monkeypatch.setattr(bench, "run_population", flaky)
    result = run_experiment(ExperimentConfig("linreg-known", rungs=5, n=50, replicates=3, degrees=(0,)))
    row = result.table.row("TI", 0, 1)
    assert row.n_ok == 2 and row.n_failed == 1
    assert result.failures and result.failures[0][0] == 1


def test_unwritable_output_dir(tmp_path, small_result):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_outputs(small_result, blocker / "out")


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(bench.OUTPUT_ENV, str(tmp_path / "env-out"))
    assert ExperimentConfig("pima").resolved_output_dir() == str(tmp_path / "env-out")
    assert ExperimentConfig("pima", output_dir="x").resolved_output_dir() == "x"


# ------------------------------------------------------------------------- CLI


def test_cli_evidence(capsys):
    code = main(["evidence", "linreg-known", "--degree", "2", "--quadrature", "2", "--n", "300", "--rungs", "20", "--seed", "1"])
    out = capsys.readouterr().out
    assert code == 0
    assert "log-evidence:" in out and "closed form:" in out
    assert main(["evidence", "linreg-known", "--n", "300", "--rungs", "20", "--seed", "1"]) == 0
    assert capsys.readouterr().out == out


@pytest.mark.parametrize("estimator", ["TI", "AIS", "CAIS"])
def test_cli_evidence_estimators(estimator, capsys):
    degree = "0" if estimator in ("TI", "AIS") else "1"
    assert main(["evidence", "linreg-known", "--estimator", estimator, "--degree", degree, "--n", "100", "--rungs", "5"]) == 0


def test_cli_evidence_exports_traces(tmp_path, capsys):
    assert main(["evidence", "linreg-known", "--n", "50", "--rungs", "3", "--export-traces", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("rung_*.csv"))) == 4


def test_cli_usage_errors(capsys):
    assert main(["evidence", "nope"]) == 2
    assert main(["replicate", "table-9"]) == 2
    assert main(["gradcheck", "nope"]) == 2
    assert main(["evidence", "linreg-known", "--estimator", "TI", "--degree", "2"]) == 2
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
    assert "unknown model id" in capsys.readouterr().err


def test_cli_version(capsys):
    assert main(["--version"]) == 0
    assert "0.1.0" in capsys.readouterr().out


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "linreg-known", "--points", "3"]) == 0
    assert "gradcheck linreg-known: pass" in capsys.readouterr().out
    assert main(["gradcheck", "linreg-known", "--points", "2", "--tol", "0"]) == 1


def test_cli_gradcheck_goodwin(capsys):
    assert main(["gradcheck", "goodwin3", "--points", "2"]) == 0
    out = capsys.readouterr().out
    assert "sensitivities" in out and "gradcheck goodwin3: pass" in out


def test_cli_run_and_replicate(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "linreg-known", "rungs": 5, "n": 80, "replicates": 1,
                               "estimators": ["TI", "CTI", "AIS"]}))
    assert main(["run", str(cfg), "--output", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "results.csv").exists()
    out = capsys.readouterr().out
    assert "closed-form truth" in out
    assert main(["replicate", "linreg-known", "--replicates", "1", "--n", "60", "--rungs", "4",
                 "--output", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "results.json").exists()
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_cli_run_reports_estimator_failure(tmp_path, capsys):
    # 45 joint features from 80 samples: the controlled weight mean goes negative
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "linreg-known", "rungs": 5, "n": 80, "replicates": 1,
                               "degrees": [2], "estimators": ["CAIS"]}))
    assert main(["run", str(cfg), "--output", str(tmp_path)]) == 1
    assert "CAIS(deg=2): linreg-known: PositivityError" in capsys.readouterr().err


def test_cli_paper_scale_warns(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr("cti.cli.run_experiment", lambda config: run_experiment(
        ExperimentConfig(**{**config.to_dict(), "replicates": 1, "n": 40, "rungs": 3, "estimators": ("TI",)})))
    with pytest.warns(RuntimeWarning, match="full scale"):
        assert main(["replicate", "linreg-known", "--paper-scale", "--output", str(tmp_path)]) == 0


def test_python_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "cti", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "0.1.0" in proc.stdout
