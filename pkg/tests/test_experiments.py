import csv
import json

import pytest
from click.testing import CliRunner

from folilab.cli import main
from folilab.errors import ConfigError
from folilab.experiments import (
    CSV_COLUMNS,
    EXPERIMENT_KINDS,
    REPORT_KEYS,
    ExperimentConfig,
    ExperimentReport,
    emit_report,
    run_experiment,
)
from folilab.models import MODEL_NAMES


def config(model, experiment, samples=3, seed=0, tol=1e-6, **options):
    return ExperimentConfig.from_dict({
        "model": model, "experiment": experiment, "samples": samples, "seed": seed,
        "tolerance": tol, "options": options,
    })


@pytest.mark.parametrize(
    "data,fragment",
    [
        ({"model": "hopf_s3", "experiment": "nope", "samples": 1}, "unknown experiment"),
        ({"model": "hopf_s3", "experiment": "gray_oneill", "samples": 0}, "samples"),
        ({"model": "hopf_s3", "experiment": "gray_oneill", "samples": 1, "tolerance": 0.0}, "tolerance"),
        ({"model": "hopf_s3", "experiment": "gray_oneill", "samples": 1, "colour": "red"}, "unknown configuration"),
        ({"model": "hopf_s3", "experiment": "gray_oneill"}, "missing"),
        ({"model": {"name": "hopf_s3", "params": {"epsilon": 3.0}}, "experiment": "gray_oneill", "samples": 1}, "epsilon"),
        ([1, 2], "JSON object"),
    ],
)
def test_config_validation(data, fragment):
    with pytest.raises(ConfigError, match=fragment):
        ExperimentConfig.from_dict(data)


def test_config_round_trip(tmp_path):
    cfg = config({"name": "hopf_warped", "params": {"lambda": 0.4}}, "duality_suite", samples=2, max_step=0.02)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    again = ExperimentConfig.load(path)
    assert again.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_flat_gray_oneill_report(tmp_path):
    report = run_experiment(config("flat_torus", "gray_oneill", samples=50, seed=1))
    assert report.passed and report.max_residual <= 1e-10
    out = tmp_path / "go.json"
    emit_report(report, out)
    doc = json.loads(out.read_text())
    assert tuple(doc) == REPORT_KEYS
    with out.with_suffix(".csv").open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS["gray_oneill"] == ("t", "K_riemann", "K_formula", "residual")
    assert len(rows) == len(doc["details"]) + 1


def test_empty_details(tmp_path):
    cfg = config("flat_torus", "gray_oneill", samples=1)
    report = ExperimentReport(cfg, None, 0, 0.0, None, True, [])
    out = tmp_path / "empty.json"
    emit_report(report, out)
    assert json.loads(out.read_text())["details"] == []
    assert out.with_suffix(".csv").read_text() == "t,K_riemann,K_formula,residual\n"


def test_nonfinite_values_become_null():
    cfg = config("flat_torus", "gray_oneill", samples=1)
    report = ExperimentReport(cfg, None, 1, float("inf"), float("nan"), False, [{"residual": float("inf")}])
    doc = json.loads(report.to_json())
    assert doc["max_residual"] is None and doc["margin"] is None and doc["details"][0]["residual"] is None


@pytest.mark.parametrize(
    "model,kind,samples,seed,tol",
    [
        ({"name": "hopf_s3", "params": {"epsilon": 0.8}}, "warped_curvature", 100, 7, 1e-5),
        ("s3_x_s1", "theorem_a", 20, 3, 1e-6),
        ("hopf_s3", "fatness_scan", 10, 0, 1e-6),
        ("flat_torus", "validate_model", 10, 0, 1e-8),
        ("torus_x_hopf", "dual_leaf", 2, 0, 1e-6),
    ],
)
def test_documented_runs_pass(model, kind, samples, seed, tol):
    report = run_experiment(config(model, kind, samples, seed, tol))
    assert report.passed, report.to_json()[:2000]


def test_fatness_scan_on_product_has_zero_margin():
    # s3_x_s1 is nowhere fat
    report = run_experiment(config("s3_x_s1", "fatness_scan", 5))
    assert report.margin <= 1e-8


def test_every_kind_runs_on_a_small_budget():
    small = {
        "validate_model": ("hopf_warped", 2),
        "gray_oneill": ("hopf_warped", 1),
        "warped_curvature": ("hopf_warped", 1),
        "fatness_scan": ("hopf_s3", 2),
        "theorem_a": ("s3_x_s1", 1),
        "thm_max": ("flat_torus", 20),
        "holonomy_bound": ("flat_torus", 2),
        "dual_leaf": ("flat_torus", 1),
        "closed_loop": ("flat_torus", 2),
        "duality_suite": ("torus_x_hopf", 1),
    }
    assert set(small) == set(EXPERIMENT_KINDS)
    for kind, (name, n) in small.items():
        doc = run_experiment(config(name, kind, n), timing=False).to_dict()
        assert tuple(doc) == REPORT_KEYS
        assert doc["timing_s"] is None
        assert isinstance(doc["pass"], bool)


def test_report_is_deterministic():
    cfg = config("hopf_warped", "duality_suite", samples=2, seed=5)
    assert run_experiment(cfg, timing=False).to_json() == run_experiment(cfg, timing=False).to_json()


def test_model_without_hopf_factor_rejected():
    with pytest.raises(ConfigError):
        run_experiment(config("flat_torus", "warped_curvature", 1))


# command line ------------------------------------------------------------------------


def test_list_models():
    runner = CliRunner()
    res = runner.invoke(main, ["list-models"])
    assert res.exit_code == 0
    for name in MODEL_NAMES:
        assert name in res.output
    catalog = json.loads(runner.invoke(main, ["list-models", "--json"]).output)
    assert catalog["hopf_warped"]["lambda"] == 0.3


def test_check_pass_writes_files(tmp_path):
    out = tmp_path / "r.json"
    res = CliRunner().invoke(main, ["check", "gray_oneill", "--model", "flat_torus", "--samples", "3",
                                    "--out", str(out), "--no-timing"])
    assert res.exit_code == 0, res.output
    assert json.loads(out.read_text())["pass"] is True
    assert out.with_suffix(".csv").exists()


def test_check_fail_exit_code():
    # a tolerance far below the integration error must fail
    res = CliRunner().invoke(main, ["check", "duality_suite", "--model", "hopf_warped", "--samples", "1",
                                    "--tol", "1e-16", "--option", "max_step=0.1"])
    assert res.exit_code == 2
    assert json.loads(res.stdout)["pass"] is False


def test_check_bad_parameter_exit_code():
    res = CliRunner().invoke(main, ["check", "gray_oneill", "--model", "hopf_s3", "--param", "epsilon=5"])
    assert res.exit_code == 1
    assert "epsilon" in res.output


def test_run_command_is_byte_identical(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"name": "hopf_s3", "params": {"epsilon": 0.8}},
                               "experiment": "gray_oneill", "samples": 2, "seed": 3, "tolerance": 1e-5}))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    runner = CliRunner()
    assert runner.invoke(main, ["run", str(cfg), "--out", str(a), "--no-timing"]).exit_code == 0
    assert runner.invoke(main, ["run", str(cfg), "--out", str(b), "--no-timing"]).exit_code == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".csv").read_bytes() == b.with_suffix(".csv").read_bytes()


def test_run_missing_config_and_unwritable_output(tmp_path):
    runner = CliRunner()
    assert runner.invoke(main, ["run", str(tmp_path / "none.json")]).exit_code == 1
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "flat_torus", "experiment": "gray_oneill", "samples": 1}))
    res = runner.invoke(main, ["run", str(cfg), "--out", str(tmp_path / "no" / "dir" / "r.json")])
    assert res.exit_code == 1
