"""Top-k selection and the metric suite run over every (model, split) pair.

Every metric that can be undefined (no positives, empty group, zero
reference rate) is returned as a :class:`Metric` with ``value=None`` and a
reason, never as zero, so cross-split averages are not silently skewed.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from dateutil.relativedelta import relativedelta

from eviction_triage.cohort import CohortRow
from eviction_triage.store import EventLog, EventSource

logger = logging.getLogger(__name__)

DEFAULT_K = 100
DEFAULT_PAIRS: tuple[tuple[str, str, str], ...] = (
    ("race", "black", "white"),
    ("gender", "female", "male"),
)
# Attributes whose ratio must be at least 1 (vulnerable group selected no less often).
_DESIDERATUM_ATTRS = frozenset({"race"})

# ---------------------------------------------------------------------------
# Exception
# ---------------------------------------------------------------------------


class EvaluationError(Exception):
    """Raised for invalid rankings, missing labels and infeasible summaries."""


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Metric:
    """A rate, or its absence with the reason it is undefined."""

    value: float | None
    reason: str | None = None

    @classmethod
    def undefined(cls, reason: str) -> Metric:
        return cls(None, reason)

    @property
    def defined(self) -> bool:
        return self.value is not None


def _ratio(numerator: int, denominator: int, reason: str) -> Metric:
    return Metric(numerator / denominator) if denominator else Metric.undefined(reason)


@dataclass(frozen=True)
class RankedList:
    """Every cohort member in rank order, with the top-k cut recorded.

    ``persons[i]`` holds rank ``i + 1``.  Order is descending score, ties
    broken by a hash of ``(tie_seed, person)``.
    """

    persons: tuple[int, ...]
    scores: tuple[float, ...]
    k: int
    tie_count: int
    tie_seed: int = 0
    split_id: str = ""
    model_id: str = ""
    as_of: date | None = None

    def __len__(self) -> int:
        return len(self.persons)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.persons) + 1))

    @property
    def selected(self) -> tuple[int, ...]:
        return self.persons[: self.k]

    def top(self, k: int | None = None) -> tuple[int, ...]:
        k = self.k if k is None else k
        if not 0 < k <= len(self.persons):
            raise EvaluationError(f"k={k} outside 1..{len(self.persons)}")
        return self.persons[:k]


def _tie_hash(tie_seed: int, person: int) -> int:
    digest = hashlib.blake2b(f"{tie_seed}:{person}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def rank_and_cut(
    persons: Sequence[int] | np.ndarray,
    scores: Sequence[float] | np.ndarray,
    k: int = DEFAULT_K,
    tie_seed: int = 0,
    split_id: str = "",
    model_id: str = "",
    as_of: date | None = None,
) -> RankedList:
    """Order *persons* by descending score and cut at *k*.

    Raises
    ------
    EvaluationError
        If lengths differ, a score is not finite, persons repeat, or *k* is
        not in ``1..n``.
    """
    person_arr = np.asarray(persons, dtype=np.int64)
    score_arr = np.asarray(scores, dtype=np.float64)
    n = len(person_arr)
    if len(score_arr) != n:
        raise EvaluationError(f"{n} person(s) but {len(score_arr)} score(s)")
    if not np.all(np.isfinite(score_arr)):
        raise EvaluationError("scores must be finite")
    if len(np.unique(person_arr)) != n:
        raise EvaluationError("a person appears more than once in one ranking")
    if k < 1 or k > n:
        raise EvaluationError(
            f"k={k} exceeds cohort size {n}" if k > n else f"k must be positive, got {k}"
        )

    hashes = np.array([_tie_hash(tie_seed, int(p)) for p in person_arr], dtype=np.uint64)
    order = np.lexsort((hashes, -score_arr))
    ordered_scores = score_arr[order]
    boundary = ordered_scores[k - 1]
    tie_count = int(np.sum(score_arr == boundary))
    return RankedList(
        persons=tuple(int(p) for p in person_arr[order]),
        scores=tuple(float(s) for s in ordered_scores),
        k=k,
        tie_count=tie_count,
        tie_seed=tie_seed,
        split_id=split_id,
        model_id=model_id,
        as_of=as_of,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _labels_for(ranked: RankedList, labels: Mapping[int, bool]) -> np.ndarray:
    try:
        return np.array([bool(labels[p]) for p in ranked.persons], dtype=bool)
    except KeyError as exc:
        raise EvaluationError(f"no label for ranked person {exc.args[0]}") from exc


def precision_recall_at_k(
    ranked: RankedList, labels: Mapping[int, bool], k: int | None = None
) -> tuple[Metric, Metric]:
    """``(TP_topk / k, TP_topk / positives)``; recall is undefined without positives."""
    k = ranked.k if k is None else k
    ranked.top(k)
    y = _labels_for(ranked, labels)
    hits = int(y[:k].sum())
    return Metric(hits / k), _ratio(hits, int(y.sum()), "no positives in cohort")


def recall_curve(
    ranked: RankedList, labels: Mapping[int, bool], ks: Iterable[int]
) -> list[tuple[int, Metric, Metric]]:
    """Precision and recall at each k in *ks* (ascending)."""
    return [(k, *precision_recall_at_k(ranked, labels, k)) for k in sorted(set(ks))]


@dataclass(frozen=True)
class GroupRatio:
    """True-positive rates of two groups and their ratio."""

    attribute: str
    numerator: str
    denominator: str
    numerator_tpr: Metric
    denominator_tpr: Metric
    ratio: Metric
    meets_desideratum: bool | None = None

    @property
    def name(self) -> str:
        return f"{self.attribute}:{self.numerator}/{self.denominator}"


def _group_tpr(
    selected: set[int],
    positives: Sequence[int],
    group_attrs: Mapping[int, Mapping[str, object]],
    attribute: str,
    group: str,
) -> Metric:
    members = [p for p in positives if group_attrs.get(p, {}).get(attribute) == group]
    hits = sum(p in selected for p in members)
    return _ratio(hits, len(members), f"no positives in group {attribute}={group}")


def fairness_ratios(
    ranked: RankedList,
    labels: Mapping[int, bool],
    group_attrs: Mapping[int, Mapping[str, object]],
    pairs: Sequence[tuple[str, str, str]] = DEFAULT_PAIRS,
) -> dict[str, GroupRatio]:
    """Ratio of top-k TPRs for each ``(attribute, vulnerable, reference)`` pair.

    A ratio is undefined when either group has no positives or the
    reference group's TPR is zero.  Race ratios carry ``meets_desideratum``
    (ratio at least 1); the annotation never fails a run.
    """
    y = _labels_for(ranked, labels)
    positives = [p for p, flag in zip(ranked.persons, y) if flag]
    selected = set(ranked.selected)
    out: dict[str, GroupRatio] = {}
    for attribute, numerator, denominator in pairs:
        num = _group_tpr(selected, positives, group_attrs, attribute, numerator)
        den = _group_tpr(selected, positives, group_attrs, attribute, denominator)
        if not num.defined:
            ratio = Metric.undefined(num.reason or "")
        elif not den.defined:
            ratio = Metric.undefined(den.reason or "")
        elif den.value == 0:
            ratio = Metric.undefined(f"zero TPR in reference group {attribute}={denominator}")
        else:
            ratio = Metric(num.value / den.value)  # type: ignore[operator]
        meets = None
        if attribute in _DESIDERATUM_ATTRS and ratio.defined:
            meets = ratio.value >= 1.0  # type: ignore[operator]
        result = GroupRatio(attribute, numerator, denominator, num, den, ratio, meets)
        out[result.name] = result
    return out


def missed_group_recall(ranked: RankedList, rows: Sequence[CohortRow]) -> Metric:
    """Share of the missed group (positive, never applied, never paid) found in the top-k."""
    if any(r.label is None for r in rows):
        raise EvaluationError("missed-group recall needs labeled rows")
    missed = {r.person for r in rows if r.missed}
    found = len(missed.intersection(ranked.selected))
    return _ratio(found, len(missed), "empty missed group")


def subgroup_recall(
    ranked: RankedList, labels: Mapping[int, bool], prior_homelessness: Mapping[int, bool]
) -> tuple[Metric, Metric]:
    """Recall among positives with and without prior homelessness."""
    y = _labels_for(ranked, labels)
    selected = set(ranked.selected)
    positives = [p for p, flag in zip(ranked.persons, y) if flag]
    prior = [p for p in positives if prior_homelessness.get(p, False)]
    first = [p for p in positives if not prior_homelessness.get(p, False)]
    return (
        _ratio(
            sum(p in selected for p in prior), len(prior), "no positives with prior homelessness"
        ),
        _ratio(sum(p in selected for p in first), len(first), "no first-time positives"),
    )


@dataclass(frozen=True)
class FollowupRow:
    """Outcome frequencies of top-k false positives up to one horizon."""

    horizon_months: int
    homelessness: Metric
    mh_crisis: Metric
    further_filing: Metric


@dataclass(frozen=True)
class FollowupReport:
    as_of: date
    n_false_positives: int
    rows: tuple[FollowupRow, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "as_of": self.as_of.isoformat(),
            "n_false_positives": self.n_false_positives,
            "horizons": [
                {
                    "horizon_months": r.horizon_months,
                    "homelessness": r.homelessness.value,
                    "mh_crisis": r.mh_crisis.value,
                    "further_filing": r.further_filing.value,
                }
                for r in self.rows
            ],
        }


def false_positive_followup(
    ranked: RankedList,
    labels: Mapping[int, bool],
    full_log: EventLog,
    as_of: date,
    horizons_months: Sequence[int] = (24, 36),
    label_span_months: int = 12,
    homelessness_sources: Sequence[EventSource] = (EventSource.homelessness_service,),
) -> FollowupReport:
    """What became of the top-k persons whose label was negative.

    For each horizon ``h``: the share with homelessness service use in
    ``(as_of + label_span, as_of + h]``, the share with a mental-health
    crisis in ``(as_of, as_of + h]`` and the share with a further eviction
    filing in ``(as_of, as_of + h]``.  Zero false positives give an empty
    report.

    Raises
    ------
    EvaluationError
        If ``as_of`` plus the longest horizon lies past the log horizon.
    """
    horizon = full_log.horizon
    longest = as_of + relativedelta(months=max(horizons_months, default=0))
    if horizon is None or longest > horizon:
        raise EvaluationError(
            f"follow-up horizon {longest.isoformat()} lies beyond the log horizon "
            f"{horizon.isoformat() if horizon else '(empty log)'}"
        )
    y = _labels_for(ranked, labels)
    false_positives = [p for p, flag in zip(ranked.selected, y[: ranked.k]) if not flag]
    if not false_positives:
        return FollowupReport(as_of, 0)

    after = as_of + relativedelta(days=1)
    label_end = as_of + relativedelta(months=label_span_months)
    rows: list[FollowupRow] = []
    n = len(false_positives)
    for months in sorted(horizons_months):
        end = as_of + relativedelta(months=months)
        homeless = crisis = filing = 0
        for person in false_positives:
            if label_end < end and any(
                full_log.person_range(person, s, label_end + relativedelta(days=1), end)
                for s in homelessness_sources
            ):
                homeless += 1
            if any(
                r.attr("interaction_type") == "crisis"
                for r in full_log.person_range(
                    person, EventSource.mental_behavioral_health, after, end
                )
            ):
                crisis += 1
            if any(
                r.attr("stage", "filing") == "filing"
                for r in full_log.person_range(person, EventSource.eviction, after, end)
            ):
                filing += 1
        rows.append(
            FollowupRow(months, Metric(homeless / n), Metric(crisis / n), Metric(filing / n))
        )
    return FollowupReport(as_of, n, tuple(rows))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """All metrics of one model on one split."""

    split_id: str
    model_id: str
    as_of: date | None
    k: int
    cohort_size: int
    positives: int
    baserate: Metric
    precision: Metric
    recall: Metric
    missed_group_recall: Metric
    recall_prior: Metric
    recall_first_time: Metric
    fairness: dict[str, GroupRatio] = field(default_factory=dict)
    tie_count: int = 1
    moratorium: bool = False

    def to_dict(self) -> dict[str, Any]:
        """Flat mapping; undefined metrics become ``None`` with a ``*_reason`` entry."""
        out: dict[str, Any] = {
            "split_id": self.split_id,
            "model_id": self.model_id,
            "as_of": self.as_of.isoformat() if self.as_of else None,
            "k": self.k,
            "cohort_size": self.cohort_size,
            "positives": self.positives,
            "tie_count": self.tie_count,
            "moratorium": self.moratorium,
        }
        metrics = {
            "baserate": self.baserate,
            "precision_at_k": self.precision,
            "recall_at_k": self.recall,
            "missed_group_recall": self.missed_group_recall,
            "recall_prior": self.recall_prior,
            "recall_first_time": self.recall_first_time,
        }
        for ratio in self.fairness.values():
            metrics[f"tpr.{ratio.attribute}={ratio.numerator}"] = ratio.numerator_tpr
            metrics[f"tpr.{ratio.attribute}={ratio.denominator}"] = ratio.denominator_tpr
            metrics[f"tpr_ratio.{ratio.name}"] = ratio.ratio
        for name, metric in metrics.items():
            out[name] = metric.value
            out[f"{name}_reason"] = metric.reason
        for ratio in self.fairness.values():
            if ratio.meets_desideratum is not None:
                out[f"meets_desideratum.{ratio.attribute}"] = ratio.meets_desideratum
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvalReport:
        """Inverse of :meth:`to_dict`; blank cells read as absent."""

        def blank(value: Any) -> bool:
            return value is None or (isinstance(value, float) and math.isnan(value))

        def metric(name: str) -> Metric:
            value, reason = data.get(name), data.get(f"{name}_reason")
            if blank(value):
                return Metric.undefined("" if blank(reason) else str(reason))
            return Metric(float(value))  # type: ignore[arg-type]

        fairness: dict[str, GroupRatio] = {}
        for key in data:
            if not key.startswith("tpr_ratio.") or key.endswith("_reason"):
                continue
            attribute, groups = key.removeprefix("tpr_ratio.").split(":", 1)
            numerator, denominator = groups.split("/", 1)
            meets = data.get(f"meets_desideratum.{attribute}")
            ratio = GroupRatio(
                attribute,
                numerator,
                denominator,
                metric(f"tpr.{attribute}={numerator}"),
                metric(f"tpr.{attribute}={denominator}"),
                metric(key),
                None if blank(meets) else bool(meets),
            )
            fairness[ratio.name] = ratio
        as_of = data.get("as_of")
        return cls(
            split_id=str(data["split_id"]),
            model_id=str(data["model_id"]),
            as_of=None if blank(as_of) else date.fromisoformat(str(as_of)),
            k=int(data["k"]),
            cohort_size=int(data["cohort_size"]),
            positives=int(data["positives"]),
            baserate=metric("baserate"),
            precision=metric("precision_at_k"),
            recall=metric("recall_at_k"),
            missed_group_recall=metric("missed_group_recall"),
            recall_prior=metric("recall_prior"),
            recall_first_time=metric("recall_first_time"),
            fairness=fairness,
            tie_count=int(data["tie_count"]),
            moratorium=bool(data["moratorium"]),
        )


def evaluate_ranking(
    ranked: RankedList, rows: Sequence[CohortRow], moratorium: bool = False
) -> EvalReport:
    """Compute every metric of *ranked* against the labeled cohort *rows*."""
    labels = {r.person: bool(r.label) for r in rows if r.label is not None}
    if len(labels) != len(rows):
        raise EvaluationError("every cohort row needs a label")
    precision, recall = precision_recall_at_k(ranked, labels)
    prior = {r.person: r.prior_homelessness for r in rows}
    recall_prior, recall_first = subgroup_recall(ranked, labels, prior)
    positives = sum(labels.values())
    report = EvalReport(
        split_id=ranked.split_id,
        model_id=ranked.model_id,
        as_of=ranked.as_of,
        k=ranked.k,
        cohort_size=len(rows),
        positives=positives,
        baserate=_ratio(positives, len(rows), "empty cohort"),
        precision=precision,
        recall=recall,
        missed_group_recall=missed_group_recall(ranked, rows),
        recall_prior=recall_prior,
        recall_first_time=recall_first,
        fairness=fairness_ratios(ranked, labels, {r.person: r.group_attrs for r in rows}),
        tie_count=ranked.tie_count,
        moratorium=moratorium,
    )
    for name, metric in (("recall", recall), ("missed-group recall", report.missed_group_recall)):
        if not metric.defined:
            logger.warning(
                "%s undefined for %s on %s: %s",
                name,
                ranked.model_id,
                ranked.split_id,
                metric.reason,
                extra={"split": ranked.split_id, "model": ranked.model_id},
            )
    return report


def skipped_report(
    split_id: str,
    model_id: str,
    as_of: date | None,
    k: int,
    rows: Sequence[CohortRow],
    reason: str,
    moratorium: bool = False,
) -> EvalReport:
    """Report for a split that was never ranked: every rate undefined with *reason*."""
    positives = sum(bool(r.label) for r in rows)
    undefined = Metric.undefined(reason)
    return EvalReport(
        split_id=split_id,
        model_id=model_id,
        as_of=as_of,
        k=k,
        cohort_size=len(rows),
        positives=positives,
        baserate=_ratio(positives, len(rows), "empty cohort"),
        precision=undefined,
        recall=undefined,
        missed_group_recall=undefined,
        recall_prior=undefined,
        recall_first_time=undefined,
        tie_count=0,
        moratorium=moratorium,
    )


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSummary:
    """One row of the cross-split summary table."""

    model_id: str
    n_splits: int
    precision_avg: float | None
    precision_min: float | None
    precision_max: float | None
    recall_avg: float | None
    recall_min: float | None
    recall_max: float | None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _stats(values: list[float]) -> tuple[float | None, float | None, float | None]:
    if not values:
        return None, None, None
    return float(np.mean(values)), float(min(values)), float(max(values))


def select_model(
    reports: Iterable[EvalReport], exclude_moratorium: bool = True
) -> list[ModelSummary]:
    """Aggregate reports per model over the non-excluded splits and rank them.

    Reports without a defined precision (splits skipped for a cohort smaller
    than k) never count; other undefined metrics are left out of a model's
    averages.  Rows are ordered by average precision@k, then average
    recall@k (both descending), then model id.

    Raises
    ------
    EvaluationError
        If no report survives the exclusion.
    """
    kept = [
        r for r in reports if r.precision.defined and not (exclude_moratorium and r.moratorium)
    ]
    if not kept:
        raise EvaluationError("all splits excluded: no ranked non-moratorium split to select on")

    by_model: dict[str, list[EvalReport]] = {}
    for report in kept:
        by_model.setdefault(report.model_id, []).append(report)

    summaries: list[ModelSummary] = []
    for model_id, items in by_model.items():
        p = _stats([r.precision.value for r in items if r.precision.value is not None])
        rc = _stats([r.recall.value for r in items if r.recall.value is not None])
        summaries.append(ModelSummary(model_id, len(items), *p, *rc))

    def order(s: ModelSummary) -> tuple[float, float, str]:
        return (
            -(s.precision_avg if s.precision_avg is not None else -1.0),
            -(s.recall_avg if s.recall_avg is not None else -1.0),
            s.model_id,
        )

    summaries.sort(key=order)
    return summaries


# ---------------------------------------------------------------------------
# Interchange
# ---------------------------------------------------------------------------


def write_predictions(ranked: RankedList, path: Path) -> None:
    """Prediction CSV: ``person_id, as_of, score, rank``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        {
            "person_id": ranked.persons,
            "as_of": [ranked.as_of.isoformat() if ranked.as_of else ""] * len(ranked),
            "score": ranked.scores,
            "rank": ranked.ranks,
        }
    ).to_csv(path, index=False)


def read_predictions(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(persons, scores)`` from a prediction CSV.

    Raises
    ------
    EvaluationError
        If the file is missing or lacks the expected columns.
    """
    try:
        frame = pd.read_csv(path, dtype={"person_id": "int64", "score": "float64"})
        return frame["person_id"].to_numpy(), frame["score"].to_numpy()
    except FileNotFoundError as exc:
        raise EvaluationError(f"missing predictions: {path}") from exc
    except (KeyError, ValueError) as exc:
        raise EvaluationError(f"Malformed prediction file {path}: {exc}") from exc


def write_reports_csv(reports: Iterable[EvalReport], path: Path) -> None:
    """One row per (split, model), sorted by split then model."""
    rows = sorted((r.to_dict() for r in reports), key=lambda d: (d["split_id"], d["model_id"]))
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False)


def read_reports_csv(path: Path) -> list[EvalReport]:
    """Read reports written by :func:`write_reports_csv`.

    Raises
    ------
    EvaluationError
        If the file is missing or a row cannot be parsed.
    """
    try:
        frame = pd.read_csv(path, dtype={"split_id": str, "model_id": str, "as_of": str})
    except FileNotFoundError as exc:
        raise EvaluationError(f"missing reports: {path}") from exc
    try:
        return [EvalReport.from_dict(rec) for rec in frame.to_dict(orient="records")]
    except (KeyError, ValueError) as exc:
        raise EvaluationError(f"Malformed report file {path}: {exc}") from exc


def write_plot_data(reports: Iterable[EvalReport], path: Path) -> None:
    """Precision@k over evaluation dates, one series per model."""
    rows = sorted(
        (
            {
                "as_of": r.as_of.isoformat() if r.as_of else "",
                "split_id": r.split_id,
                "model_id": r.model_id,
                "precision_at_k": r.precision.value,
                "moratorium": r.moratorium,
            }
            for r in reports
        ),
        key=lambda d: (d["as_of"], d["model_id"]),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["as_of", "split_id", "model_id", "precision_at_k", "moratorium"]
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)


def write_summary_csv(summaries: Sequence[ModelSummary], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(ModelSummary.__dataclass_fields__)
    pd.DataFrame([s.to_dict() for s in summaries], columns=columns).to_csv(path, index=False)


def read_summary_csv(path: Path) -> list[ModelSummary]:
    """Read a summary written by :func:`write_summary_csv`."""
    try:
        frame = pd.read_csv(path, dtype={"model_id": str})
    except FileNotFoundError as exc:
        raise EvaluationError(f"missing summary: {path}") from exc
    out: list[ModelSummary] = []
    for rec in frame.to_dict(orient="records"):
        values = {
            name: (None if isinstance(v, float) and np.isnan(v) else v) for name, v in rec.items()
        }
        out.append(
            ModelSummary(
                model_id=str(values["model_id"]),
                n_splits=int(values["n_splits"]),
                **{
                    name: (float(values[name]) if values[name] is not None else None)
                    for name in (
                        "precision_avg", "precision_min", "precision_max",
                        "recall_avg", "recall_min", "recall_max",
                    )
                },
            )
        )
    return out
