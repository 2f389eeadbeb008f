"""Stage runner behind ``eviction-triage run`` and the per-stage subcommands.

A run directory holds every artifact of one experiment::

    <output_dir>/
      manifest.yaml           stage statuses, config hash, seed, versions
      config.yaml             the effective configuration
      raw/                    generated event files (generate)
      truth/                  counterfactual ground truth (generate)
      store/                  validated event files (ingest)
      splits.yaml             split plans (plan-splits)
      splits/<split_id>/      train/eval matrices, eval cohort, models, predictions (train)
      reports/                per-(split, model) reports, plot data, summary (evaluate, report)
      shadow/ rct/            field-validation outputs

Stages hand off through files only, so each can be re-run on its own.  A
failing stage is recorded in the manifest with its message; artifacts of
earlier stages are kept.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from dateutil.relativedelta import relativedelta

from eviction_triage import __version__
from eviction_triage.baselines import BaselineSpec, baseline_score
from eviction_triage.cohort import CohortError, read_cohort_csv, write_cohort_csv
from eviction_triage.config import ExperimentConfig, config_hash, dump_config
from eviction_triage.evaluate import (
    EvalReport,
    EvaluationError,
    evaluate_ranking,
    false_positive_followup,
    rank_and_cut,
    read_predictions,
    read_reports_csv,
    select_model,
    skipped_report,
    write_plot_data,
    write_predictions,
    write_reports_csv,
    write_summary_csv,
)
from eviction_triage.features import FeatureError, FeatureMatrix, write_matrix
from eviction_triage.learners import (
    DegenerateLabelsError,
    LearnerError,
    ModelSpec,
    expand_grid,
    fit,
    make_spec,
    save_model,
    score,
)
from eviction_triage.splits import (
    MatrixCache,
    SplitError,
    SplitPlan,
    materialize,
    plan_splits,
    read_plans,
    write_plans,
)
from eviction_triage.store import EventLog, StoreError, read_event_files, write_event_files
from eviction_triage.synthgen import (
    GeneratorError,
    GroundTruth,
    generate,
    read_ground_truth,
    replay_current_process,
    write_ground_truth,
)
from eviction_triage.trial import (
    RctDesign,
    TrialError,
    freeze_list,
    run_rct_replications,
    run_shadow,
    write_rct_csv,
)

logger = logging.getLogger(__name__)

STAGES: tuple[str, ...] = (
    "generate",
    "ingest",
    "plan-splits",
    "train",
    "evaluate",
    "report",
    "shadow",
    "rct",
)
_FOLLOWUP_HORIZONS = (24, 36)
_SKIPPED_MARKER = "skipped.yaml"
_LIBRARIES = ("numpy", "pandas", "scipy", "pydantic", "click", "pyyaml", "rich", "python-dateutil")
# Module errors a stage may raise; anything else is a bug and propagates unchanged.
_STAGE_ERRORS: tuple[type[Exception], ...] = (
    StoreError,
    GeneratorError,
    CohortError,
    FeatureError,
    SplitError,
    LearnerError,
    EvaluationError,
    TrialError,
)

# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------


class ExperimentError(Exception):
    """Raised when a stage fails; carries the stage name."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


class MissingArtifactError(ExperimentError):
    """Raised when a stage's upstream file is absent."""

    def __init__(self, stage: str, path: Path, what: str = "artifact") -> None:
        super().__init__(stage, f"missing {what}: {path}")
        self.path = path


# ---------------------------------------------------------------------------
# Run directory
# ---------------------------------------------------------------------------


@dataclass
class RunContext:
    """One run directory plus artifacts already loaded in this process."""

    config: ExperimentConfig
    run_dir: Path
    _log: EventLog | None = field(default=None, repr=False)
    _truth: GroundTruth | None = field(default=None, repr=False)

    @classmethod
    def open(cls, config: ExperimentConfig) -> RunContext:
        run_dir = Path(config.output_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.yaml").write_text(dump_config(config), encoding="utf-8")
        return cls(config=config, run_dir=run_dir)

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / "manifest.yaml"

    @property
    def reports_dir(self) -> Path:
        return self.run_dir / "reports"

    def split_dir(self, split_id: str) -> Path:
        return self.run_dir / "splits" / split_id

    def require(self, stage: str, path: Path, what: str = "artifact") -> Path:
        if not path.exists():
            raise MissingArtifactError(stage, path, what)
        return path

    def log(self, stage: str) -> EventLog:
        """The ingested store, read once."""
        if self._log is None:
            store = self.require(stage, self.run_dir / "store" / "manifest.yaml", "store").parent
            self._log = read_event_files(store).log
        return self._log

    def truth(self, stage: str) -> GroundTruth:
        if self._truth is None:
            directory = self.require(stage, self.run_dir / "truth", "ground truth")
            self._truth = read_ground_truth(directory)
        return self._truth

    def plans(self, stage: str) -> list[SplitPlan]:
        plans = read_plans(self.require(stage, self.run_dir / "splits.yaml", "split plans"))
        only = self.config.splits.only
        if only is not None:
            plans = [p for p in plans if p.split_id in only]
            if not plans:
                raise ExperimentError(stage, f"no planned split matches {', '.join(only)}")
        return plans


def _versions() -> dict[str, str]:
    versions = {"eviction-triage": __version__}
    for name in _LIBRARIES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def _read_manifest(ctx: RunContext) -> dict[str, Any]:
    if ctx.manifest_path.exists():
        data = yaml.safe_load(ctx.manifest_path.read_text(encoding="utf-8"))
        if isinstance(data, dict):
            return data
    return {}


def _write_manifest(ctx: RunContext, stage: str, status: str, message: str | None = None) -> None:
    ctx.run_dir.mkdir(parents=True, exist_ok=True)
    manifest = _read_manifest(ctx)
    manifest.update(
        {
            "config_hash": config_hash(ctx.config),
            "seed": ctx.config.seed,
            "versions": _versions(),
        }
    )
    stages = manifest.setdefault("stages", {})
    entry: dict[str, str] = {"status": status}
    if message is not None:
        entry["message"] = message
    stages[stage] = entry
    if status == "failed":
        manifest["failed_stage"] = stage
        manifest["error"] = message
    elif manifest.get("failed_stage") == stage:
        manifest.pop("failed_stage", None)
        manifest.pop("error", None)
    ctx.manifest_path.write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")


def _record_skipped_splits(ctx: RunContext, skipped: dict[str, str]) -> None:
    manifest = _read_manifest(ctx)
    if skipped:
        manifest["skipped_splits"] = dict(sorted(skipped.items()))
    else:
        manifest.pop("skipped_splits", None)
    ctx.manifest_path.write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")


def _dump_yaml(data: Any, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_generate(ctx: RunContext) -> str:
    population = ctx.config.effective_population
    log, truth = generate(population, workers=ctx.config.workers)
    log = replay_current_process(
        log, population, truth, span_months=ctx.config.cohort.label_span_months
    )
    write_event_files(log, ctx.run_dir / "raw")
    write_ground_truth(truth, ctx.run_dir / "truth")
    ctx._truth = truth
    return f"{len(log)} record(s) for {population.n_persons} person(s)"


def stage_ingest(ctx: RunContext, source_dir: Path | None = None) -> str:
    """Validate event files (default: this run's ``raw/``) into ``store/``."""
    source = source_dir or ctx.run_dir / "raw"
    ctx.require("ingest", source / "manifest.yaml", "event files")
    result = read_event_files(source)
    reasons = Counter(r.reason.split(":")[0] for r in result.rejected)
    for reason, count in sorted(reasons.items()):
        logger.warning("Rejected %s row(s): %s", count, reason, extra={"stage": "ingest"})
    write_event_files(result.log, ctx.run_dir / "store")
    _dump_yaml(
        {
            "source": str(source),
            "accepted": result.accepted,
            "rejected": len(result.rejected),
            "duplicates": result.duplicates,
            "reasons": dict(sorted(reasons.items())),
        },
        ctx.run_dir / "store" / "ingest_report.yaml",
    )
    ctx._log = result.log
    return f"{result.accepted} accepted, {len(result.rejected)} rejected"


def stage_plan_splits(ctx: RunContext) -> str:
    cfg = ctx.config
    start, end = cfg.population.date_range
    plans = plan_splits(
        data_start=cfg.splits.data_start or start,
        data_end=cfg.splits.data_end or end,
        label_span_months=cfg.cohort.label_span_months,
        cadence_months=cfg.splits.cadence_months,
        n_splits=cfg.splits.n_splits,
        split_cadence_months=cfg.splits.split_cadence_months,
        moratorium=cfg.moratorium_window,
        filing_lookback_months=cfg.cohort.filing_lookback_months,
        train_lookback_months=cfg.splits.train_lookback_months,
    )
    write_plans(plans, ctx.run_dir / "splits.yaml")
    return f"{len(plans)} split(s)"


def model_specs(config: ExperimentConfig) -> list[ModelSpec]:
    """Every learner spec of the configured grids, family order then grid order."""
    specs: list[ModelSpec] = []
    for family in config.models.families:
        specs.extend(expand_grid(family, config.models.grids[family], seed=config.seed))
    return specs


def _fit_and_rank(
    spec: ModelSpec,
    train: FeatureMatrix,
    evaluation: FeatureMatrix,
    plan: SplitPlan,
    ctx: RunContext,
) -> str | None:
    out = ctx.split_dir(plan.split_id)
    try:
        model = fit(spec, train)
    except DegenerateLabelsError as exc:
        logger.warning("Skipping %s on %s: %s", spec.model_id, plan.split_id, exc,
                       extra={"split": plan.split_id, "model": spec.model_id})
        return None
    save_model(model, out / "models" / f"{spec.model_id}.json")
    ranked = rank_and_cut(
        evaluation.persons, score(model, evaluation), k=ctx.config.k, tie_seed=ctx.config.seed,
        split_id=plan.split_id, model_id=spec.model_id, as_of=plan.eval_as_of,
    )
    write_predictions(ranked, out / "predictions" / f"{spec.model_id}.csv")
    return spec.model_id


def stage_train(ctx: RunContext) -> str:
    """Materialize matrices, fit every learner and score every baseline, split by split."""
    cfg = ctx.config
    log = ctx.log("train")
    specs = model_specs(cfg)
    cache = MatrixCache()
    written = 0
    skipped: dict[str, str] = {}
    for plan in ctx.plans("train"):
        out = ctx.split_dir(plan.split_id)
        train, evaluation = materialize(
            plan, log, cfg.cohort, cfg.features, cache=cache, workers=cfg.workers
        )
        write_matrix(train, out / "train.csv")
        write_matrix(evaluation, out / "eval.csv")
        write_cohort_csv(evaluation.rows, out / "eval_cohort.csv")
        marker = out / _SKIPPED_MARKER
        if len(evaluation) < cfg.k:
            reason = f"evaluation cohort has {len(evaluation)} member(s), fewer than k={cfg.k}"
            logger.warning(
                "Skipping %s: %s",
                plan.split_id,
                reason,
                extra={"stage": "train", "split": plan.split_id},
            )
            _dump_yaml({"split_id": plan.split_id, "reason": reason}, marker)
            skipped[plan.split_id] = reason
            continue
        marker.unlink(missing_ok=True)

        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [
                pool.submit(_fit_and_rank, spec, train, evaluation, plan, ctx) for spec in specs
            ]
            written += sum(f.result() is not None for f in futures)

        for kind in cfg.baselines:
            baseline = BaselineSpec(kind=kind, seed=cfg.seed, cohort=cfg.cohort)
            ranked = rank_and_cut(
                evaluation.persons, baseline_score(baseline, evaluation.rows, log.view),
                k=cfg.k, tie_seed=cfg.seed, split_id=plan.split_id, model_id=baseline.model_id,
                as_of=plan.eval_as_of,
            )
            write_predictions(ranked, out / "predictions" / f"{baseline.model_id}.csv")
            written += 1
        logger.info(
            "Trained and scored %s", plan.split_id, extra={"stage": "train", "split": plan.split_id}
        )
    _record_skipped_splits(ctx, skipped)
    if skipped:
        return f"{written} prediction file(s), {len(skipped)} split(s) skipped"
    return f"{written} prediction file(s)"


def _model_ids(ctx: RunContext) -> list[str]:
    cfg = ctx.config
    baselines = [BaselineSpec(kind=k).model_id for k in cfg.baselines]
    return [s.model_id for s in model_specs(cfg)] + baselines


def stage_evaluate(ctx: RunContext) -> str:
    """Score every prediction file against its split's labeled evaluation cohort."""
    cfg = ctx.config
    reports: list[EvalReport] = []
    followups: list[dict[str, Any]] = []
    log: EventLog | None = None
    for plan in ctx.plans("evaluate"):
        out = ctx.split_dir(plan.split_id)
        rows = read_cohort_csv(
            ctx.require("evaluate", out / "eval_cohort.csv", "evaluation cohort")
        )
        labels = {r.person: bool(r.label) for r in rows}
        marker = out / _SKIPPED_MARKER
        if marker.exists():
            reason = str(yaml.safe_load(marker.read_text(encoding="utf-8"))["reason"])
            reports.extend(
                skipped_report(
                    plan.split_id,
                    model_id,
                    plan.eval_as_of,
                    cfg.k,
                    rows,
                    reason,
                    moratorium=plan.moratorium_overlap,
                )
                for model_id in _model_ids(ctx)
            )
            continue
        paths = [out / "predictions" / f"{model_id}.csv" for model_id in _model_ids(ctx)]
        present = [p for p in paths if p.exists()]
        if not present:
            raise MissingArtifactError("evaluate", paths[0], "predictions")

        rankings = [
            rank_and_cut(
                *read_predictions(path), k=cfg.k, tie_seed=cfg.seed,
                split_id=plan.split_id, model_id=path.stem, as_of=plan.eval_as_of,
            )
            for path in present
        ]
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [
                pool.submit(evaluate_ranking, ranked, rows, plan.moratorium_overlap)
                for ranked in rankings
            ]
            reports.extend(f.result() for f in futures)

        log = log or ctx.log("evaluate")
        horizons = [
            h for h in _FOLLOWUP_HORIZONS
            if log.horizon is not None and plan.eval_as_of + relativedelta(months=h) <= log.horizon
        ]
        if not horizons:
            logger.debug("No follow-up for %s: outcomes not yet observed", plan.split_id)
            continue
        for ranked in rankings:
            followup = false_positive_followup(
                ranked, labels, log, plan.eval_as_of, horizons,
                cfg.cohort.label_span_months, cfg.cohort.homelessness_sources,
            )
            followups.append(
                {"split_id": plan.split_id, "model_id": ranked.model_id, **followup.to_dict()}
            )

    write_reports_csv(reports, ctx.reports_dir / "eval_reports.csv")
    write_plot_data(reports, ctx.reports_dir / "plot_data.csv")
    _dump_yaml({"followup": followups}, ctx.reports_dir / "false_positive_followup.yaml")
    return f"{len(reports)} report(s)"


def stage_report(ctx: RunContext) -> str:
    """Cross-split summary over non-moratorium splits."""
    reports = read_reports_csv(
        ctx.require("report", ctx.reports_dir / "eval_reports.csv", "reports")
    )
    summaries = select_model(reports)
    write_summary_csv(summaries, ctx.reports_dir / "summary.csv")
    excluded = sorted({r.split_id for r in reports if r.moratorium or not r.precision.defined})
    _dump_yaml(
        {
            "k": ctx.config.k,
            "excluded_splits": excluded,
            "models": [s.to_dict() for s in summaries],
        },
        ctx.reports_dir / "summary.yaml",
    )
    return f"{len(summaries)} model row(s), {len(excluded)} split(s) excluded"


def stage_shadow(ctx: RunContext) -> str:
    cfg = ctx.config
    if cfg.shadow is None:
        return "skipped: no shadow section"
    spec = make_spec(cfg.shadow.family, cfg.shadow.hyperparams, seed=cfg.seed)
    run = run_shadow(
        ctx.log("shadow"), cfg.shadow.freeze_date, spec, cfg.cohort, cfg.features,
        horizon_months=cfg.shadow.horizon_months, k=cfg.k, cadence_months=cfg.splits.cadence_months,
        tie_seed=cfg.seed, workers=cfg.workers,
    )
    _dump_yaml(run.to_dict(), ctx.run_dir / "shadow" / "shadow.yaml")
    return f"precision@{cfg.k}={run.precision.value}"


def stage_rct(ctx: RunContext) -> str:
    cfg = ctx.config
    if cfg.rct is None:
        return "skipped: no rct section"
    log = ctx.log("rct")
    spec = make_spec(cfg.rct.family, cfg.rct.hyperparams, seed=cfg.seed)
    ranked, _ = freeze_list(
        log, cfg.rct.as_of, spec, cfg.cohort, cfg.features, k=cfg.k,
        cadence_months=cfg.splits.cadence_months, tie_seed=cfg.seed, workers=cfg.workers,
    )
    design = RctDesign(
        as_of=cfg.rct.as_of,
        k=cfg.k,
        treatment_fraction=cfg.rct.treatment_fraction,
        assignment=cfg.rct.assignment,
        seed=cfg.seed,
        span_months=cfg.cohort.label_span_months,
    )
    reports = run_rct_replications(
        log, ctx.truth("rct"), design, ranked, cfg.cohort,
        n_replications=cfg.rct.n_replications, workers=cfg.workers,
    )
    write_rct_csv(reports, ctx.run_dir / "rct" / "replications.csv")
    covered = [r.effectiveness_model.covers(r.true_effect_model) for r in reports]
    _dump_yaml(
        {
            "as_of": cfg.rct.as_of.isoformat(),
            "assignment": cfg.rct.assignment.value,
            "n_replications": len(reports),
            "coverage_model_effectiveness": float(np.mean(covered)),
            "mean_efficiency": float(np.mean([r.efficiency.estimate for r in reports])),
            "true_efficiency": reports[0].true_efficiency,
            "mean_effectiveness_model": float(
                np.mean([r.effectiveness_model.estimate for r in reports])
            ),
            "true_effect_model": reports[0].true_effect_model,
            "mean_effectiveness_current": float(
                np.mean([r.effectiveness_current.estimate for r in reports])
            ),
            "true_effect_current": reports[0].true_effect_current,
        },
        ctx.run_dir / "rct" / "summary.yaml",
    )
    return f"{len(reports)} replication(s)"


_STAGE_FUNCS: dict[str, Callable[[RunContext], str]] = {
    "generate": stage_generate,
    "ingest": stage_ingest,
    "plan-splits": stage_plan_splits,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "report": stage_report,
    "shadow": stage_shadow,
    "rct": stage_rct,
}


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------


def _run(ctx: RunContext, stage: str, func: Callable[[RunContext], str]) -> None:
    logger.info("Stage %s started", stage, extra={"stage": stage})
    try:
        summary = func(ctx)
    except ExperimentError as exc:
        _write_manifest(ctx, stage, "failed", str(exc))
        raise
    except _STAGE_ERRORS as exc:
        _write_manifest(ctx, stage, "failed", str(exc))
        raise ExperimentError(stage, str(exc)) from exc
    _write_manifest(ctx, stage, "skipped" if summary.startswith("skipped") else "done")
    logger.info("Stage %s finished: %s", stage, summary, extra={"stage": stage})


def run_stage(
    config: ExperimentConfig, stage: str, ctx: RunContext | None = None, **kwargs: Any
) -> Path:
    """Run one stage against ``config.output_dir`` and record it in the manifest.

    Raises
    ------
    ExperimentError
        If *stage* is unknown or fails; the manifest names the stage.
    """
    if stage not in _STAGE_FUNCS:
        raise ExperimentError(stage, f"unknown stage; expected one of {', '.join(STAGES)}")
    ctx = ctx or RunContext.open(config)
    func = _STAGE_FUNCS[stage]
    _run(ctx, stage, (lambda c: func(c, **kwargs)) if kwargs else func)  # type: ignore[call-arg]
    return ctx.run_dir


def run_experiment(config: ExperimentConfig) -> Path:
    """Run every stage in order and return the run directory.

    Raises
    ------
    ExperimentError
        From the first failing stage; earlier artifacts and the manifest
        are preserved.
    """
    ctx = RunContext.open(config)
    for stage in STAGES:
        run_stage(config, stage, ctx=ctx)
    logger.info("Run complete: %s", ctx.run_dir)
    return ctx.run_dir
