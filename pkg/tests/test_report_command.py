"""Tests for eviction_triage.report_command and the `report` CLI command."""

from __future__ import annotations

import json
from datetime import date
from pathlib import Path
from unittest.mock import patch

import pytest
import yaml
from click.testing import CliRunner

from eviction_triage.cli import main
from eviction_triage.config import validate_config
from eviction_triage.evaluate import EvalReport, Metric, write_reports_csv
from eviction_triage.report_command import ReportError, run_report

# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


@pytest.fixture()
def runner() -> CliRunner:
    return CliRunner()


def _report(
    model_id: str, split_id: str, precision: float, recall: float | None, moratorium: bool = False
) -> EvalReport:
    return EvalReport(
        split_id=split_id,
        model_id=model_id,
        as_of=date(2019, 1, 1),
        k=50,
        cohort_size=400,
        positives=30,
        baserate=Metric(0.075),
        precision=Metric(precision),
        recall=Metric(recall) if recall is not None else Metric.undefined("no positives in cohort"),
        missed_group_recall=Metric(0.2),
        recall_prior=Metric(0.3),
        recall_first_time=Metric(0.1),
        moratorium=moratorium,
    )


@pytest.fixture()
def run_dir(tmp_path: Path) -> Path:
    """A run directory whose evaluate stage has finished."""
    out = tmp_path / "run"
    write_reports_csv(
        [
            _report("RF-max_depth=10", "split_00", 0.30, 0.20),
            _report("RF-max_depth=10", "split_01", 0.50, 0.40),
            _report("B1_PrevHomelessness", "split_00", 0.20, 0.10),
            _report("B1_PrevHomelessness", "split_01", 0.20, None),
            _report("RF-max_depth=10", "split_02", 0.10, 0.05, moratorium=True),
            _report("B1_PrevHomelessness", "split_02", 0.90, 0.90, moratorium=True),
        ],
        out / "reports" / "eval_reports.csv",
    )
    return out


def _write_config(tmp_path: Path, run_dir: Path) -> Path:
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.dump({"k": 50, "output_dir": str(run_dir)}))
    return config_path


# ---------------------------------------------------------------------------
# run_report
# ---------------------------------------------------------------------------


class TestRunReport:
    def test_summary_rows(self, run_dir: Path, capsys: pytest.CaptureFixture[str]) -> None:
        config = validate_config({"k": 50, "output_dir": str(run_dir)})
        summary = run_report(config, output_format="json")

        models = [m["model_id"] for m in summary["models"]]
        assert models == ["RF-max_depth=10", "B1_PrevHomelessness"]
        rf = summary["models"][0]
        assert rf["n_splits"] == 2
        assert rf["precision_avg"] == pytest.approx(0.4)
        assert (rf["recall_min"], rf["recall_max"]) == pytest.approx((0.2, 0.4))
        assert summary["models"][1]["recall_avg"] == pytest.approx(0.1)
        assert summary["excluded_splits"] == ["split_02"]
        assert json.loads(capsys.readouterr().out) == summary

    def test_missing_reports_raise(self, tmp_path: Path) -> None:
        with pytest.raises(ReportError, match="missing reports"):
            run_report(validate_config({"output_dir": str(tmp_path / "empty")}))

    def test_all_moratorium_raises(self, tmp_path: Path) -> None:
        out = tmp_path / "run"
        reports = [_report("A", "split_00", 0.3, 0.3, moratorium=True)]
        write_reports_csv(reports, out / "reports" / "eval_reports.csv")
        with pytest.raises(ReportError, match="all splits excluded"):
            run_report(validate_config({"output_dir": str(out)}))


# ---------------------------------------------------------------------------
# CLI rendering
# ---------------------------------------------------------------------------


class TestReportCommandJson:
    def test_json_output_parseable(self, runner: CliRunner, tmp_path: Path, run_dir: Path) -> None:
        config_path = _write_config(tmp_path, run_dir)
        with patch("eviction_triage.cli.setup_logging"):
            result = runner.invoke(
                main, ["--config", str(config_path), "report", "--output", "json"]
            )

        assert result.exit_code == 0, result.output
        data = json.loads(result.output)
        assert data["k"] == 50
        assert {"model_id", "precision_avg", "recall_avg"} <= set(data["models"][0])


class TestReportCommandYaml:
    def test_yaml_output_parseable(self, runner: CliRunner, tmp_path: Path, run_dir: Path) -> None:
        config_path = _write_config(tmp_path, run_dir)
        with patch("eviction_triage.cli.setup_logging"):
            result = runner.invoke(
                main, ["--config", str(config_path), "report", "--output", "yaml"]
            )

        assert result.exit_code == 0
        data = yaml.safe_load(result.output)
        assert len(data["models"]) == 2


class TestReportCommandTable:
    def test_table_output_contains_headers(
        self, runner: CliRunner, tmp_path: Path, run_dir: Path
    ) -> None:
        config_path = _write_config(tmp_path, run_dir)
        with patch("eviction_triage.cli.setup_logging"):
            result = runner.invoke(main, ["--config", str(config_path), "report"])

        assert result.exit_code == 0
        assert "precision@50 / recall@50" in result.output
        assert "split_02" in result.output

    def test_undefined_values_render_as_na(self, runner: CliRunner, tmp_path: Path) -> None:
        out = tmp_path / "run"
        reports = [_report("A", "split_00", 0.3, None)]
        write_reports_csv(reports, out / "reports" / "eval_reports.csv")
        with patch("eviction_triage.cli.setup_logging"):
            result = runner.invoke(main, ["--config", str(_write_config(tmp_path, out)), "report"])

        assert result.exit_code == 0
        assert "N/A" in result.output

    def test_missing_reports_exit_nonzero(self, runner: CliRunner, tmp_path: Path) -> None:
        config_path = _write_config(tmp_path, tmp_path / "nothing")
        with patch("eviction_triage.cli.setup_logging"):
            result = runner.invoke(main, ["--config", str(config_path), "report"])

        assert result.exit_code == 1
        assert "Error" in result.output
