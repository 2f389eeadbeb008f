"""Implementation of the `eviction-triage report` command.

Builds the cross-split summary of a run directory (average, minimum and
maximum precision@k and recall@k per model over non-moratorium splits) and
renders it as a Rich table, JSON, or YAML.

All failures are surfaced as :class:`ReportError`.
"""

from __future__ import annotations

import json
import logging
from typing import Any

import yaml
from rich.console import Console
from rich.table import Table

from eviction_triage.config import ExperimentConfig
from eviction_triage.experiment import ExperimentError, RunContext, run_stage

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Exception
# ---------------------------------------------------------------------------


class ReportError(Exception):
    """Raised for failures within the report command."""


# ---------------------------------------------------------------------------
# Internal helpers
# ---------------------------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "N/A" if value is None else f"{value:.3f}"


def _render_table(summary: dict[str, Any]) -> None:
    """Render the summary as a Rich table to stdout."""
    k = summary["k"]
    console = Console()
    table = Table(show_header=True, header_style="bold", title=f"precision@{k} / recall@{k}")
    table.add_column("Model")
    table.add_column("Splits", justify="right")
    for metric in ("P", "R"):
        for stat in ("Avg", "Min", "Max"):
            table.add_column(f"{metric}@{k} {stat}", justify="right")

    for row in summary["models"]:
        table.add_row(
            row["model_id"],
            str(row["n_splits"]),
            _fmt(row["precision_avg"]),
            _fmt(row["precision_min"]),
            _fmt(row["precision_max"]),
            _fmt(row["recall_avg"]),
            _fmt(row["recall_min"]),
            _fmt(row["recall_max"]),
        )
    console.print(table)
    if summary["excluded_splits"]:
        console.print(f"Excluded (moratorium): {', '.join(summary['excluded_splits'])}")


def _render_json(summary: dict[str, Any]) -> None:
    print(json.dumps(summary, indent=2))


def _render_yaml(summary: dict[str, Any]) -> None:
    print(yaml.dump(summary, default_flow_style=False, sort_keys=False), end="")


# ---------------------------------------------------------------------------
# Public entry point
# ---------------------------------------------------------------------------


def run_report(config: ExperimentConfig, output_format: str = "table") -> dict[str, Any]:
    """Summarize ``config.output_dir`` and print it in *output_format*.

    Parameters
    ----------
    config:
        Experiment configuration; only ``output_dir`` and ``k`` are read here.
    output_format:
        One of ``"table"``, ``"json"``, or ``"yaml"``.

    Returns
    -------
    dict
        The summary that was rendered.

    Raises
    ------
    ReportError
        If the evaluation reports are missing or no split survives the
        moratorium exclusion.
    """
    try:
        ctx = RunContext(config=config, run_dir=config.output_dir)
        run_dir = run_stage(config, "report", ctx=ctx)
    except ExperimentError as exc:
        raise ReportError(str(exc)) from exc

    summary_path = run_dir / "reports" / "summary.yaml"
    summary: dict[str, Any] = yaml.safe_load(summary_path.read_text(encoding="utf-8"))
    logger.debug("Rendering %s model row(s) as %s", len(summary["models"]), output_format)

    if output_format == "json":
        _render_json(summary)
    elif output_format == "yaml":
        _render_yaml(summary)
    else:
        _render_table(summary)
    return summary
