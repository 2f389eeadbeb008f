"""Temporal validation planning and split materialization.

Evaluation as-of dates step back from ``data_end - label_span`` by the split
cadence.  Each split trains on labeled cohorts stacked over as-of dates
``eval_as_of - label_span - i * cadence`` reaching back to the data start, so
no training label window overlaps the evaluation label window.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from dateutil.relativedelta import relativedelta

from eviction_triage.cohort import build_cohort, label_cohort
from eviction_triage.config import CohortSpec, FeatureSpec
from eviction_triage.features import FeatureMatrix, build_matrix, feature_columns
from eviction_triage.store import EventLog

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Exception
# ---------------------------------------------------------------------------


class SplitError(Exception):
    """Raised for infeasible split plans and unreadable plan files."""


# ---------------------------------------------------------------------------
# Plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    """One temporal validation split."""

    split_id: str
    eval_as_of: date
    train_as_ofs: tuple[date, ...]
    label_span_months: int = 12
    cadence_months: int = 3
    moratorium_overlap: bool = False

    @property
    def latest_train_window(self) -> tuple[date, date]:
        """Label timespan ``[as_of, as_of + span)`` of the latest training as-of date."""
        latest = self.train_as_ofs[0]
        return latest, latest + relativedelta(months=self.label_span_months)

    def to_dict(self) -> dict[str, Any]:
        start, end = self.latest_train_window
        return {
            "split_id": self.split_id,
            "eval_as_of": self.eval_as_of.isoformat(),
            "train_as_ofs": [d.isoformat() for d in self.train_as_ofs],
            "label_span_months": self.label_span_months,
            "cadence_months": self.cadence_months,
            "moratorium_overlap": self.moratorium_overlap,
            "latest_train_label_window": [start.isoformat(), end.isoformat()],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SplitPlan:
        return cls(
            split_id=str(data["split_id"]),
            eval_as_of=date.fromisoformat(str(data["eval_as_of"])),
            train_as_ofs=tuple(date.fromisoformat(str(d)) for d in data["train_as_ofs"]),
            label_span_months=int(data["label_span_months"]),
            cadence_months=int(data["cadence_months"]),
            moratorium_overlap=bool(data["moratorium_overlap"]),
        )


def training_as_ofs(
    eval_as_of: date, floor: date, label_span_months: int = 12, cadence_months: int = 3
) -> tuple[date, ...]:
    """Training as-of dates for *eval_as_of*, latest first, none before *floor*.

    The latest is one label span before *eval_as_of*, so its label window
    closes no later than the evaluation date.
    """
    trains: list[date] = []
    j = 0
    while True:
        candidate = eval_as_of - relativedelta(months=label_span_months + j * cadence_months)
        if candidate < floor:
            return tuple(trains)
        trains.append(candidate)
        j += 1


def plan_splits(
    data_start: date,
    data_end: date,
    label_span_months: int = 12,
    cadence_months: int = 3,
    n_splits: int | None = None,
    split_cadence_months: int = 3,
    moratorium: tuple[date, date] | None = None,
    filing_lookback_months: int = 4,
    train_lookback_months: int | None = None,
) -> list[SplitPlan]:
    """Plan temporal splits over ``[data_start, data_end]``.

    Parameters
    ----------
    n_splits:
        Number of evaluation dates, latest first; ``None`` plans every split
        that still has one training as-of date on or after *data_start*.
    moratorium:
        Window ``(start, end)``; a split whose evaluation date falls in
        ``[start, end + filing_lookback]`` is flagged ``moratorium_overlap``.
    train_lookback_months:
        Optional cap on how far back training as-of dates reach.

    Returns
    -------
    list[SplitPlan]
        Ascending by evaluation date, ids ``split_00``, ``split_01``, ...

    Raises
    ------
    SplitError
        If the range is shorter than two label spans or no split fits.
    """
    if label_span_months <= 0 or cadence_months <= 0 or split_cadence_months <= 0:
        raise SplitError("label span and cadences must be positive")
    if data_start + relativedelta(months=2 * label_span_months) > data_end:
        raise SplitError(
            f"insufficient range: {data_start.isoformat()}..{data_end.isoformat()} is shorter "
            f"than two {label_span_months}-month label spans"
        )

    last_eval = data_end - relativedelta(months=label_span_months)
    evals: list[tuple[date, tuple[date, ...]]] = []
    i = 0
    while n_splits is None or len(evals) < n_splits:
        eval_as_of = last_eval - relativedelta(months=i * split_cadence_months)
        floor = data_start
        if train_lookback_months is not None:
            floor = max(floor, eval_as_of - relativedelta(months=train_lookback_months))
        trains = training_as_ofs(eval_as_of, floor, label_span_months, cadence_months)
        if not trains:
            break
        evals.append((eval_as_of, tuple(trains)))
        i += 1

    if not evals:
        raise SplitError("no split fits the data range")

    plans: list[SplitPlan] = []
    for index, (eval_as_of, trains) in enumerate(sorted(evals)):
        overlap = False
        if moratorium is not None:
            mor_start, mor_end = moratorium
            reach = mor_end + relativedelta(months=filing_lookback_months)
            overlap = mor_start <= eval_as_of <= reach
        plans.append(
            SplitPlan(
                split_id=f"split_{index:02d}",
                eval_as_of=eval_as_of,
                train_as_ofs=trains,
                label_span_months=label_span_months,
                cadence_months=cadence_months,
                moratorium_overlap=overlap,
            )
        )
    logger.info(
        "Planned %s split(s): %s .. %s",
        len(plans),
        plans[0].eval_as_of.isoformat(),
        plans[-1].eval_as_of.isoformat(),
    )
    return plans


# ---------------------------------------------------------------------------
# Materialization
# ---------------------------------------------------------------------------


class MatrixCache:
    """Labeled cohort matrices keyed by as-of date, shared across splits of one log."""

    def __init__(self) -> None:
        self._items: dict[date, FeatureMatrix] = {}
        self._lock = threading.Lock()

    def get(self, as_of: date) -> FeatureMatrix | None:
        with self._lock:
            return self._items.get(as_of)

    def put(self, as_of: date, matrix: FeatureMatrix) -> None:
        with self._lock:
            self._items.setdefault(as_of, matrix)


def cohort_matrix(
    log: EventLog,
    as_of: date,
    cohort_spec: CohortSpec,
    feature_spec: FeatureSpec,
    labeled: bool = True,
    cache: MatrixCache | None = None,
    workers: int = 1,
) -> FeatureMatrix:
    """Feature matrix of the cohort at *as_of*, labeled from *log* unless told otherwise."""
    if labeled and cache is not None:
        hit = cache.get(as_of)
        if hit is not None:
            return hit
    rows = build_cohort(log.view(as_of), cohort_spec)
    if labeled:
        rows = label_cohort(rows, log, cohort_spec)
    matrix = build_matrix(rows, log.view, feature_spec, workers=workers)
    if labeled and cache is not None:
        cache.put(as_of, matrix)
    return matrix


def _empty_matrix(feature_spec: FeatureSpec) -> FeatureMatrix:
    columns = feature_columns(feature_spec)
    return FeatureMatrix(
        rows=(),
        columns=columns,
        values=np.zeros((0, len(columns))),
        labels=np.zeros(0, dtype=np.int64),
        sentinel_days=feature_spec.sentinel_days,
    )


def materialize(
    plan: SplitPlan,
    log: EventLog,
    cohort_spec: CohortSpec,
    feature_spec: FeatureSpec,
    cache: MatrixCache | None = None,
    workers: int = 1,
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Build ``(train, eval)`` matrices for *plan*.

    Training rows are the labeled cohorts of every training as-of date,
    stacked in plan order; a person in several cohorts appears once per date.

    Raises
    ------
    LabelHorizonError
        Propagated when a label window reaches past the log's horizon.
    """
    train_parts = [
        cohort_matrix(log, as_of, cohort_spec, feature_spec, cache=cache, workers=workers)
        for as_of in plan.train_as_ofs
    ]
    train_parts = [m for m in train_parts if len(m)]
    train = FeatureMatrix.stack(train_parts) if train_parts else _empty_matrix(feature_spec)
    evaluation = cohort_matrix(
        log, plan.eval_as_of, cohort_spec, feature_spec, cache=cache, workers=workers
    )
    logger.info(
        "Materialized %s: %s training row(s) over %s as-of date(s), %s evaluation row(s)",
        plan.split_id,
        len(train),
        len(plan.train_as_ofs),
        len(evaluation),
        extra={"split": plan.split_id},
    )
    return train, evaluation


# ---------------------------------------------------------------------------
# Interchange
# ---------------------------------------------------------------------------


def write_plans(plans: Sequence[SplitPlan], path: Path) -> None:
    """Write the audit export listing every date of every split."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        yaml.safe_dump({"splits": [p.to_dict() for p in plans]}, sort_keys=False),
        encoding="utf-8",
    )


def read_plans(path: Path) -> list[SplitPlan]:
    """Read a file written by :func:`write_plans`.

    Raises
    ------
    SplitError
        If the file is missing or malformed.
    """
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
        return [SplitPlan.from_dict(item) for item in data["splits"]]
    except FileNotFoundError as exc:
        raise SplitError(f"Split plan file not found: {path}") from exc
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as exc:
        raise SplitError(f"Malformed split plan file {path}: {exc}") from exc
