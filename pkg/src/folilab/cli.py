"""Command line entry point: ``folilab list-models | run | check``."""

import json
import sys

import click

from .errors import FolilabError
from .experiments import EXPERIMENT_KINDS, ExperimentConfig, emit_report, run_experiment
from .models import MODEL_NAMES, ModelSpec

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _parse_param(text):
    if "=" not in text:
        raise click.BadParameter(f"expected key=value, got {text!r}", param_hint="--param")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _execute(cfg: ExperimentConfig, out, no_timing: bool):
    path = out or cfg.output_path
    try:
        report = run_experiment(cfg, timing=not no_timing)
        if path:
            emit_report(report, path)
        else:
            click.echo(report.to_json(), nl=False)
    except (FolilabError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    status = "PASS" if report.passed else "FAIL"
    click.echo(
        f"{status} {cfg.experiment} on {cfg.model.name}: samples={report.num_samples} "
        f"max_residual={report.max_residual} margin={report.margin}",
        err=True,
    )
    sys.exit(EXIT_PASS if report.passed else EXIT_FAIL)


@click.group()
def main():
    """Numerical checks for Riemannian foliations on built-in model geometries."""


@main.command("list-models")
@click.option("--json", "as_json", is_flag=True, help="Print the catalog as JSON.")
def list_models(as_json):
    """List the built-in models with their default parameters."""
    catalog = {name: ModelSpec(name).resolved() for name in MODEL_NAMES}
    if as_json:
        click.echo(json.dumps(catalog, indent=2))
        return
    for name, params in catalog.items():
        args = ", ".join(f"{k}={v}" for k, v in params.items())
        click.echo(f"{name:14s} {args}")


@main.command("run")
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report path (overrides output_path).")
@click.option("--no-timing", is_flag=True, help="Write timing_s as null so reports can be diffed.")
def run_cmd(config_path, out, no_timing):
    """Run the experiment described by a JSON configuration file."""
    try:
        cfg = ExperimentConfig.load(config_path)
    except FolilabError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    _execute(cfg, out, no_timing)


@main.command("check")
@click.argument("kind", type=click.Choice(EXPERIMENT_KINDS))
@click.option("--model", "model_name", required=True, type=click.Choice(MODEL_NAMES))
@click.option("--param", "params", multiple=True, help="Model parameter as key=value (repeatable).")
@click.option("--option", "options", multiple=True, help="Experiment option as key=value (repeatable).")
@click.option("--samples", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tol", type=float, default=1e-6, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--no-timing", is_flag=True)
def check_cmd(kind, model_name, params, options, samples, seed, tol, out, no_timing):
    """Synthesize a configuration from flags and run it."""
    data = {
        "model": {"name": model_name, "params": dict(_parse_param(p) for p in params)},
        "experiment": kind,
        "samples": samples,
        "seed": seed,
        "tolerance": tol,
        "output_path": out,
        "options": dict(_parse_param(o) for o in options),
    }
    try:
        cfg = ExperimentConfig.from_dict(data)
    except FolilabError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    _execute(cfg, out, no_timing)


if __name__ == "__main__":
    main()
