"""Main CLI entry point for eviction-triage."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any

import click

from eviction_triage import __version__
from eviction_triage.logging import setup_logging

_DEFAULT_CONFIG = "~/.config/eviction-triage/config.yaml"


def _parse_sets(values: tuple[str, ...]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in values:
        path, sep, value = item.partition("=")
        if not sep or not path:
            raise click.BadParameter(f"expected PATH=VALUE, got '{item}'", param_hint="--set")
        overrides[path.strip()] = value
    return overrides


def _load_config(obj: dict[str, Any], **flags: Any) -> Any:
    """Config file (or defaults when the default path is absent) plus --set and command flags.

    Flags map onto config paths: ``seed``, ``out -> output_dir``, ``k``,
    ``model_family -> models.families``, ``split_id -> splits.only``.
    """
    from eviction_triage.config import ExperimentConfig, apply_overrides, parse_config

    path = Path(obj["config"]).expanduser()
    if path.exists() or obj["config"] != _DEFAULT_CONFIG:
        config = parse_config(path)
    else:
        config = ExperimentConfig()

    overrides: dict[str, Any] = dict(obj["overrides"])
    if flags.get("seed") is not None:
        overrides["seed"] = flags["seed"]
    if flags.get("out") is not None:
        overrides["output_dir"] = str(flags["out"])
    if flags.get("k") is not None:
        overrides["k"] = flags["k"]
    if flags.get("model_family"):
        overrides["models.families"] = list(flags["model_family"])
    if flags.get("split_id"):
        overrides["splits.only"] = list(flags["split_id"])
    return apply_overrides(config, overrides) if overrides else config


def _fail(exc: Exception) -> None:
    click.echo(f"Error: {exc}", err=True)
    sys.exit(1)


def _run_stage(
    obj: dict[str, Any], stage: str, stage_kwargs: dict[str, Any] | None = None, **flags: Any
) -> None:
    from eviction_triage.config import ConfigError
    from eviction_triage.experiment import ExperimentError, run_stage

    try:
        config = _load_config(obj, **flags)
        run_dir = run_stage(config, stage, **(stage_kwargs or {}))
    except (ConfigError, ExperimentError) as exc:
        _fail(exc)
    else:
        click.echo(f"{stage}: done ({run_dir})")


seed_option = click.option("--seed", type=int, default=None, help="Override the global seed.")
out_option = click.option(
    "--out", type=click.Path(path_type=Path), default=None, help="Run directory (output_dir)."
)
k_option = click.option("--k", "k", type=int, default=None, help="List size.")
split_option = click.option(
    "--split-id", "split_id", multiple=True, help="Restrict to these split ids (repeatable)."
)
family_option = click.option(
    "--model-family",
    "model_family",
    multiple=True,
    type=click.Choice(["LR", "DT", "RF", "LGBM", "XGB", "ADABOOST"]),
    help="Restrict to these learner families (repeatable).",
)


@click.group()
@click.version_option(version=__version__, prog_name="eviction-triage")
@click.option(
    "--config",
    default=_DEFAULT_CONFIG,
    show_default=True,
    type=click.Path(),
    help="Path to experiment config YAML file.",
)
@click.option("--verbose", is_flag=True, default=False, help="Enable verbose output.")
@click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="PATH=VALUE",
    help="Override a config value by dotted path (repeatable).",
)
@click.pass_context
def main(ctx: click.Context, config: str, verbose: bool, overrides: tuple[str, ...]) -> None:
    """Rental-assistance prioritization pipeline and simulator."""
    ctx.ensure_object(dict)
    setup_logging(verbose=verbose)
    ctx.obj["config"] = config
    ctx.obj["verbose"] = verbose
    ctx.obj["overrides"] = _parse_sets(overrides)


@main.command()
def template() -> None:
    """Print a YAML config file template to stdout."""
    from eviction_triage.config import config_template

    click.echo(config_template(), nl=False)


@main.command()
@seed_option
@out_option
@k_option
@split_option
@family_option
@click.pass_obj
def run(
    obj: dict[str, Any],
    seed: int | None,
    out: Path | None,
    k: int | None,
    split_id: tuple[str, ...],
    model_family: tuple[str, ...],
) -> None:
    """Run every stage: generate through report, then shadow and rct if configured."""
    from eviction_triage.config import ConfigError
    from eviction_triage.experiment import ExperimentError, run_experiment

    try:
        config = _load_config(
            obj, seed=seed, out=out, k=k, split_id=split_id, model_family=model_family
        )
        run_dir = run_experiment(config)
    except (ConfigError, ExperimentError) as exc:
        _fail(exc)
    else:
        click.echo(f"Run complete: {run_dir}")


@main.command()
@seed_option
@out_option
@click.pass_obj
def generate(obj: dict[str, Any], seed: int | None, out: Path | None) -> None:
    """Generate a synthetic population, replay the current process, write event files."""
    _run_stage(obj, "generate", seed=seed, out=out)


@main.command()
@out_option
@click.option(
    "--input",
    "input_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    default=None,
    help="Directory of event files to ingest (default: the run's raw/).",
)
@click.pass_obj
def ingest(obj: dict[str, Any], out: Path | None, input_dir: Path | None) -> None:
    """Validate event files into the run's store."""
    _run_stage(obj, "ingest", {"source_dir": input_dir} if input_dir else None, out=out)


@main.command("plan-splits")
@out_option
@click.pass_obj
def plan_splits(obj: dict[str, Any], out: Path | None) -> None:
    """Plan temporal validation splits."""
    _run_stage(obj, "plan-splits", out=out)


@main.command()
@seed_option
@out_option
@k_option
@split_option
@family_option
@click.pass_obj
def train(
    obj: dict[str, Any],
    seed: int | None,
    out: Path | None,
    k: int | None,
    split_id: tuple[str, ...],
    model_family: tuple[str, ...],
) -> None:
    """Build matrices, fit the model grid and score baselines per split."""
    _run_stage(obj, "train", seed=seed, out=out, k=k, split_id=split_id, model_family=model_family)


@main.command()
@seed_option
@out_option
@k_option
@split_option
@family_option
@click.pass_obj
def evaluate(
    obj: dict[str, Any],
    seed: int | None,
    out: Path | None,
    k: int | None,
    split_id: tuple[str, ...],
    model_family: tuple[str, ...],
) -> None:
    """Compute metrics for every prediction file."""
    _run_stage(
        obj, "evaluate", seed=seed, out=out, k=k, split_id=split_id, model_family=model_family
    )


@main.command()
@out_option
@click.option(
    "--output",
    "output_format",
    default="table",
    show_default=True,
    type=click.Choice(["table", "json", "yaml"]),
    help="Output format.",
)
@click.pass_obj
def report(obj: dict[str, Any], out: Path | None, output_format: str) -> None:
    """Summarize precision@k and recall@k across splits."""
    from eviction_triage.config import ConfigError
    from eviction_triage.report_command import ReportError, run_report

    try:
        run_report(_load_config(obj, out=out), output_format=output_format)
    except (ConfigError, ReportError) as exc:
        _fail(exc)


@main.command()
@seed_option
@out_option
@k_option
@click.pass_obj
def shadow(obj: dict[str, Any], seed: int | None, out: Path | None, k: int | None) -> None:
    """Replay a shadow-mode deployment at the configured freeze date."""
    _run_stage(obj, "shadow", seed=seed, out=out, k=k)


@main.command()
@seed_option
@out_option
@k_option
@click.pass_obj
def rct(obj: dict[str, Any], seed: int | None, out: Path | None, k: int | None) -> None:
    """Simulate randomized trials comparing current and model candidate sets."""
    _run_stage(obj, "rct", seed=seed, out=out, k=k)
