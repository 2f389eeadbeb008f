"""Unit tests for eviction_triage.evaluate module."""

from __future__ import annotations

import hashlib
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from eviction_triage.cohort import CohortRow
from eviction_triage.evaluate import (
    EvalReport,
    EvaluationError,
    Metric,
    RankedList,
    evaluate_ranking,
    fairness_ratios,
    false_positive_followup,
    missed_group_recall,
    precision_recall_at_k,
    rank_and_cut,
    read_predictions,
    read_reports_csv,
    recall_curve,
    select_model,
    skipped_report,
    subgroup_recall,
    write_plot_data,
    write_predictions,
    write_reports_csv,
)
from eviction_triage.store import EventLog, EventRecord, EventSource

AS_OF = date(2019, 1, 1)

# ---------------------------------------------------------------------------
# Helpers / fixtures
# ---------------------------------------------------------------------------


def _ranked(n: int, k: int) -> RankedList:
    """Persons 1..n ranked in id order (score n+1-id)."""
    persons = list(range(1, n + 1))
    scores = [float(n + 1 - p) for p in persons]
    return rank_and_cut(persons, scores, k=k, split_id="split_00", model_id="M", as_of=AS_OF)


def _report(
    model_id: str,
    split_id: str,
    precision: float | None,
    recall: float | None,
    moratorium: bool = False,
) -> EvalReport:
    def metric(value: float | None) -> Metric:
        return Metric(value) if value is not None else Metric.undefined("no positives in cohort")

    return EvalReport(
        split_id=split_id,
        model_id=model_id,
        as_of=AS_OF,
        k=10,
        cohort_size=100,
        positives=20,
        baserate=Metric(0.2),
        precision=metric(precision),
        recall=metric(recall),
        missed_group_recall=Metric.undefined("empty missed group"),
        recall_prior=Metric(0.5),
        recall_first_time=Metric(0.25),
        moratorium=moratorium,
    )


# ---------------------------------------------------------------------------
# rank_and_cut
# ---------------------------------------------------------------------------


class TestRankAndCut:
    """Ordering, tie-breaking and validation."""

    def test_distinct_scores_sort_descending(self) -> None:
        ranked = rank_and_cut([10, 11, 12, 13], [0.2, 0.9, 0.5, 0.1], k=2)
        assert ranked.persons == (11, 12, 10, 13)
        assert ranked.selected == (11, 12)
        assert ranked.ranks == (1, 2, 3, 4)
        assert ranked.tie_count == 1

    def test_ties_resolve_independently_of_input_order(self) -> None:
        persons = list(range(1, 31))
        scores = [0.5] * 10 + [0.9] * 10 + [0.1] * 10
        forward = rank_and_cut(persons, scores, k=15, tie_seed=3)
        backward = rank_and_cut(persons[::-1], scores[::-1], k=15, tie_seed=3)
        assert forward.persons == backward.persons
        assert list(forward.scores) == sorted(scores, reverse=True)
        assert set(forward.persons[:10]) == set(range(11, 21))
        assert forward.tie_count == 10

    def test_tie_seed_reorders_only_within_ties(self) -> None:
        persons = list(range(1, 41))
        scores = [float(p // 10) for p in persons]
        orders = {rank_and_cut(persons, scores, k=5, tie_seed=s).persons for s in range(5)}
        assert len(orders) > 1
        for order in orders:
            assert [p // 10 for p in order] == sorted((p // 10 for p in persons), reverse=True)

    @pytest.mark.parametrize(
        "persons, scores, k, fragment",
        [
            ([1, 2, 3], [0.1, 0.2, 0.3], 4, "exceeds cohort size 3"),
            ([1, 2, 3], [0.1, 0.2, 0.3], 0, "positive"),
            ([1, 1, 3], [0.1, 0.2, 0.3], 1, "more than once"),
            ([1, 2, 3], [0.1, float("nan"), 0.3], 1, "finite"),
            ([1, 2, 3], [0.1, 0.2], 1, "score"),
        ],
    )
    def test_invalid_input_raises(
        self, persons: list[int], scores: list[float], k: int, fragment: str
    ) -> None:
        with pytest.raises(EvaluationError, match=fragment):
            rank_and_cut(persons, scores, k=k)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


class TestPrecisionRecall:
    """Top-k hit rates."""

    def test_hand_computed(self) -> None:
        labels = {p: p in {1, 3, 8} for p in range(1, 11)}
        precision, recall = precision_recall_at_k(_ranked(10, 4), labels)
        assert precision.value == pytest.approx(0.5)
        assert recall.value == pytest.approx(2 / 3)

    def test_no_positives_leaves_recall_undefined(self) -> None:
        precision, recall = precision_recall_at_k(_ranked(5, 2), {p: False for p in range(1, 6)})
        assert precision.value == 0.0
        assert recall.value is None
        assert recall.reason == "no positives in cohort"

    def test_curve_is_ascending_and_deduplicated(self) -> None:
        labels = {p: p in {1, 3, 8} for p in range(1, 11)}
        curve = recall_curve(_ranked(10, 4), labels, [10, 1, 4, 4])
        assert [k for k, _, _ in curve] == [1, 4, 10]
        assert [r.value for _, _, r in curve] == pytest.approx([1 / 3, 2 / 3, 1.0])

    def test_missing_label_raises(self) -> None:
        with pytest.raises(EvaluationError, match="no label"):
            precision_recall_at_k(_ranked(3, 1), {1: True, 2: False})


class TestFairness:
    """TPR ratios between groups."""

    @pytest.fixture()
    def attrs(self) -> dict[int, dict[str, object]]:
        race = ["black", "white", "black", "white", "black", "white", "white", "black"]
        gender = ["female", "female", "male", "male", "male", "male", "female", "female"]
        return {p: {"race": race[p - 1], "gender": gender[p - 1]} for p in range(1, 9)}

    @pytest.fixture()
    def labels(self) -> dict[int, bool]:
        return {p: p in {1, 2, 5, 6, 7} for p in range(1, 9)}

    def test_hand_computed_ratios(
        self, attrs: dict[int, dict[str, object]], labels: dict[int, bool]
    ) -> None:
        ratios = fairness_ratios(_ranked(8, 4), labels, attrs)

        race = ratios["race:black/white"]
        assert race.numerator_tpr.value == pytest.approx(1 / 2)
        assert race.denominator_tpr.value == pytest.approx(1 / 3)
        assert race.ratio.value == pytest.approx(1.5)
        assert race.meets_desideratum is True

        gender = ratios["gender:female/male"]
        assert gender.numerator_tpr.value == pytest.approx(2 / 3)
        assert gender.denominator_tpr.value == 0.0
        assert gender.ratio.value is None
        assert gender.ratio.reason == "zero TPR in reference group gender=male"
        assert gender.meets_desideratum is None

    def test_empty_group_is_undefined(self, attrs: dict[int, dict[str, object]]) -> None:
        labels = {p: p in {2, 6} for p in range(1, 9)}
        ratio = fairness_ratios(_ranked(8, 4), labels, attrs)["race:black/white"]
        assert ratio.numerator_tpr.reason == "no positives in group race=black"
        assert ratio.ratio.value is None
        assert ratio.meets_desideratum is None

    def test_ratio_below_one_fails_desideratum(self, attrs: dict[int, dict[str, object]]) -> None:
        labels = {p: p in {2, 5} for p in range(1, 9)}
        ratio = fairness_ratios(_ranked(8, 4), labels, attrs)["race:black/white"]
        assert ratio.ratio.value == 0.0
        assert ratio.meets_desideratum is False


class TestGroupRecall:
    """Missed-group and prior-homelessness recall."""

    def test_missed_group_recall(self) -> None:
        rows = [
            CohortRow(1, AS_OF, label=True),
            CohortRow(2, AS_OF, label=True, applied=True),
            CohortRow(3, AS_OF, label=True),
            CohortRow(4, AS_OF, label=False),
            CohortRow(5, AS_OF, label=True, received_assistance=True),
            CohortRow(6, AS_OF, label=True),
        ]
        # Missed group {1, 3, 6}; top-3 is {1, 2, 3}.
        assert missed_group_recall(_ranked(6, 3), rows).value == pytest.approx(2 / 3)

    def test_empty_missed_group_is_undefined(self) -> None:
        rows = [CohortRow(1, AS_OF, label=True, applied=True), CohortRow(2, AS_OF, label=False)]
        metric = missed_group_recall(_ranked(2, 1), rows)
        assert metric == Metric(None, "empty missed group")

    def test_unlabeled_rows_raise(self) -> None:
        with pytest.raises(EvaluationError, match="labeled"):
            missed_group_recall(_ranked(1, 1), [CohortRow(1, AS_OF)])

    def test_subgroup_recall(self) -> None:
        labels = {p: p in {1, 2, 5, 6} for p in range(1, 7)}
        prior = {1: True, 5: True, 2: False, 6: False}
        with_prior, first_time = subgroup_recall(_ranked(6, 2), labels, prior)
        assert with_prior.value == pytest.approx(0.5)
        assert first_time.value == pytest.approx(0.5)
        none_prior, _ = subgroup_recall(_ranked(6, 2), labels, {})
        assert none_prior.reason == "no positives with prior homelessness"


class TestFollowup:
    """Later outcomes of top-k false positives."""

    @pytest.fixture()
    def log(self) -> EventLog:
        records = [
            EventRecord.create(
                2, EventSource.homelessness_service, date(2020, 6, 1), date(2020, 6, 1)
            ),
            EventRecord.create(
                3, EventSource.mental_behavioral_health, date(2019, 5, 1), date(2019, 5, 1),
                interaction_type="crisis",
            ),
            EventRecord.create(
                3, EventSource.mental_behavioral_health, date(2019, 7, 1), date(2019, 7, 1),
                interaction_type="outpatient",
            ),
            EventRecord.create(
                3, EventSource.eviction, date(2021, 6, 1), date(2021, 6, 1), stage="filing"
            ),
        ]
        return EventLog(records, horizon=date(2022, 1, 1))

    def test_hand_computed_shares(self, log: EventLog) -> None:
        labels = {1: True, 2: False, 3: False, 4: False}
        report = false_positive_followup(_ranked(4, 3), labels, log, AS_OF)
        assert report.n_false_positives == 2
        by_horizon = {r.horizon_months: r for r in report.rows}
        assert by_horizon[24].homelessness.value == pytest.approx(0.5)
        assert by_horizon[24].mh_crisis.value == pytest.approx(0.5)
        assert by_horizon[24].further_filing.value == 0.0
        assert by_horizon[36].further_filing.value == pytest.approx(0.5)
        assert report.to_dict()["horizons"][0]["horizon_months"] == 24

    def test_no_false_positives_gives_empty_report(self, log: EventLog) -> None:
        labels = {1: True, 2: False, 3: False, 4: False}
        report = false_positive_followup(_ranked(4, 1), labels, log, AS_OF)
        assert report.n_false_positives == 0
        assert report.rows == ()

    def test_horizon_past_log_raises(self, log: EventLog) -> None:
        with pytest.raises(EvaluationError, match="beyond the log horizon"):
            false_positive_followup(
                _ranked(4, 3), {p: False for p in range(1, 5)}, log, AS_OF, horizons_months=(48,)
            )


def test_evaluate_ranking_collects_every_metric() -> None:
    rows = [
        CohortRow(1, AS_OF, label=True, race="black", gender="female", prior_homelessness=True),
        CohortRow(2, AS_OF, label=False, race="white", gender="male"),
        CohortRow(3, AS_OF, label=True, race="white", gender="male", applied=True),
        CohortRow(4, AS_OF, label=False, race="black", gender="female"),
    ]
    report = evaluate_ranking(_ranked(4, 2), rows, moratorium=True)

    assert (report.cohort_size, report.positives, report.k) == (4, 2, 2)
    assert report.baserate.value == pytest.approx(0.5)
    assert report.precision.value == pytest.approx(0.5)
    assert report.recall.value == pytest.approx(0.5)
    assert report.missed_group_recall.value == pytest.approx(1.0)
    assert report.recall_prior.value == pytest.approx(1.0)
    assert report.recall_first_time.value == 0.0
    race = report.fairness["race:black/white"]
    assert race.ratio.reason == "zero TPR in reference group race=white"
    assert report.moratorium

    flat = report.to_dict()
    assert flat["tpr.race=black"] == pytest.approx(1.0)
    assert flat["tpr_ratio.race:black/white"] is None
    assert flat["tpr_ratio.race:black/white_reason"].startswith("zero TPR")
    assert flat["precision_at_k_reason"] is None


def test_evaluate_ranking_needs_labels() -> None:
    with pytest.raises(EvaluationError, match="needs a label"):
        evaluate_ranking(_ranked(2, 1), [CohortRow(1, AS_OF, label=True), CohortRow(2, AS_OF)])


# ---------------------------------------------------------------------------
# select_model
# ---------------------------------------------------------------------------


class TestSelectModel:
    """Cross-split aggregation and ordering."""

    @pytest.fixture()
    def reports(self) -> list[EvalReport]:
        return [
            _report("A", "split_00", 0.40, 0.20),
            _report("A", "split_01", 0.60, 0.30),
            _report("A", "split_02", 0.90, 0.90, moratorium=True),
            _report("B", "split_00", 0.50, 0.10),
            _report("B", "split_01", 0.50, None),
            _report("B", "split_02", 0.10, 0.10, moratorium=True),
            _report("C", "split_00", 0.50, 0.40),
            _report("C", "split_01", 0.50, 0.20),
        ]

    def test_averages_skip_moratorium_and_undefined(self, reports: list[EvalReport]) -> None:
        summaries = {s.model_id: s for s in select_model(reports)}
        a, b = summaries["A"], summaries["B"]
        assert a.n_splits == 2
        assert (a.precision_avg, a.precision_min, a.precision_max) == pytest.approx((0.5, 0.4, 0.6))
        assert a.recall_avg == pytest.approx(0.25)
        assert b.recall_avg == pytest.approx(0.10)
        assert (b.recall_min, b.recall_max) == pytest.approx((0.10, 0.10))

    def test_order_by_precision_then_recall_then_id(self, reports: list[EvalReport]) -> None:
        assert [s.model_id for s in select_model(reports)] == ["C", "A", "B"]

    def test_including_moratorium_changes_winner(self, reports: list[EvalReport]) -> None:
        summaries = select_model(reports, exclude_moratorium=False)
        assert summaries[0].model_id == "A"
        assert summaries[0].precision_avg == pytest.approx(19 / 30)

    def test_everything_excluded_raises(self) -> None:
        with pytest.raises(EvaluationError, match="all splits excluded"):
            select_model([_report("A", "split_00", 0.5, 0.5, moratorium=True)])

    def test_unranked_split_is_left_out(self, reports: list[EvalReport]) -> None:
        reason = "evaluation cohort has 3 member(s), fewer than k=10"
        rows = [CohortRow(p, AS_OF, label=p == 1) for p in range(1, 4)]
        skipped = skipped_report("split_03", "A", AS_OF, 10, rows, reason)
        summaries = {s.model_id: s for s in select_model([*reports, skipped])}
        assert summaries["A"].n_splits == 2
        assert summaries["A"].precision_avg == pytest.approx(0.5)
        assert skipped.baserate.value == pytest.approx(1 / 3)
        assert skipped.precision.reason == skipped.recall.reason == reason

    def test_only_unranked_splits_raises(self) -> None:
        skipped = skipped_report("split_00", "A", AS_OF, 10, [], "evaluation cohort is empty")
        assert skipped.baserate.reason == "empty cohort"
        with pytest.raises(EvaluationError, match="all splits excluded"):
            select_model([skipped])


# ---------------------------------------------------------------------------
# Interchange files
# ---------------------------------------------------------------------------


def test_predictions_file_reloads(tmp_path: Path) -> None:
    ranked = rank_and_cut([5, 6, 7], [0.25, 0.75, 0.5], k=1, as_of=AS_OF)
    path = tmp_path / "predictions" / "M.csv"
    write_predictions(ranked, path)

    persons, scores = read_predictions(path)
    assert persons.tolist() == [6, 7, 5]
    np.testing.assert_allclose(scores, [0.75, 0.5, 0.25])
    assert pd.read_csv(path)["rank"].tolist() == [1, 2, 3]


def test_missing_predictions_raise(tmp_path: Path) -> None:
    with pytest.raises(EvaluationError, match="missing predictions"):
        read_predictions(tmp_path / "none.csv")


def test_reports_file_preserves_undefined_reasons(tmp_path: Path) -> None:
    reports = [
        _report("B", "split_01", 0.5, None),
        _report("A", "split_00", 0.4, 0.2, moratorium=True),
    ]
    path = tmp_path / "reports.csv"
    write_reports_csv(reports, path)
    reloaded = {(r.split_id, r.model_id): r for r in read_reports_csv(path)}

    b = reloaded[("split_01", "B")]
    assert b.recall == Metric(None, "no positives in cohort")
    assert b.precision.value == pytest.approx(0.5)
    assert b.missed_group_recall.reason == "empty missed group"
    assert reloaded[("split_00", "A")].moratorium is True
    assert list(pd.read_csv(path)["split_id"]) == ["split_00", "split_01"]


def test_plot_data_sorted_by_date_then_model(tmp_path: Path) -> None:
    reports = [_report("B", "split_00", 0.5, 0.1), _report("A", "split_00", 0.4, 0.2)]
    path = tmp_path / "plot.csv"
    write_plot_data(reports, path)
    frame = pd.read_csv(path)
    assert frame["model_id"].tolist() == ["A", "B"]
    assert frame["precision_at_k"].tolist() == pytest.approx([0.4, 0.5])


# ---------------------------------------------------------------------------
# Random instances against direct recomputation
# ---------------------------------------------------------------------------

_RACES = ("black", "white", "other", "unknown")
_GENDERS = ("female", "male", "unknown")


def _instance(seed: int) -> tuple[list[CohortRow], np.ndarray, int]:
    """A small random cohort, scores with frequent ties, and a cut in 1..n."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 201))
    persons = rng.choice(np.arange(1, 10_001), size=n, replace=False)
    base = float(rng.uniform(0.0, 0.5))
    rows = [
        CohortRow(
            int(p),
            AS_OF,
            label=bool(rng.random() < base),
            race=str(rng.choice(_RACES)),
            gender=str(rng.choice(_GENDERS)),
            prior_homelessness=bool(rng.random() < 0.3),
            applied=bool(rng.random() < 0.4),
            received_assistance=bool(rng.random() < 0.2),
        )
        for p in persons
    ]
    if seed % 2:
        scores = rng.integers(0, 6, size=n) / 5.0
    else:
        scores = rng.random(n)
    return rows, scores, int(rng.integers(1, n + 1))


def _expected_order(persons: list[int], scores: list[float], tie_seed: int) -> list[int]:
    def tie(person: int) -> int:
        digest = hashlib.blake2b(f"{tie_seed}:{person}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big")

    return [p for _, p in sorted(zip(scores, persons), key=lambda pair: (-pair[0], tie(pair[1])))]


def _tpr(rows: list[CohortRow], top: set[int], attribute: str, group: str) -> float | None:
    members = [r.person for r in rows if r.label and getattr(r, attribute) == group]
    if not members:
        return None
    return sum(p in top for p in members) / len(members)


_INSTANCES = range(120)


@pytest.mark.parametrize("seed", _INSTANCES)
class TestAgainstDirectRecomputation:
    """Metrics on seeded random cohorts of up to 200 persons."""

    def test_rank_and_cut(self, seed: int) -> None:
        rows, scores, k = _instance(seed)
        persons = [r.person for r in rows]
        ranked = rank_and_cut(persons, scores, k=k, tie_seed=seed)

        assert list(ranked.persons) == _expected_order(persons, scores.tolist(), seed)
        assert ranked.selected == ranked.persons[:k]
        boundary = sorted(scores.tolist(), reverse=True)[k - 1]
        assert ranked.tie_count == sum(s == boundary for s in scores.tolist())

    def test_precision_and_recall(self, seed: int) -> None:
        rows, scores, k = _instance(seed)
        labels = {r.person: bool(r.label) for r in rows}
        ranked = rank_and_cut(list(labels), scores, k=k, tie_seed=seed)
        precision, recall = precision_recall_at_k(ranked, labels)

        hits = sum(labels[p] for p in ranked.persons[:k])
        positives = sum(labels.values())
        assert precision.value == pytest.approx(hits / k)
        if positives:
            assert recall.value == pytest.approx(hits / positives)
        else:
            assert not recall.defined

    def test_fairness_ratios(self, seed: int) -> None:
        rows, scores, k = _instance(seed)
        labels = {r.person: bool(r.label) for r in rows}
        ranked = rank_and_cut(list(labels), scores, k=k, tie_seed=seed)
        ratios = fairness_ratios(ranked, labels, {r.person: r.group_attrs for r in rows})
        top = set(ranked.persons[:k])

        pairs = (("race", "black", "white"), ("gender", "female", "male"))
        for attribute, numerator, denominator in pairs:
            ratio = ratios[f"{attribute}:{numerator}/{denominator}"]
            num = _tpr(rows, top, attribute, numerator)
            den = _tpr(rows, top, attribute, denominator)
            assert ratio.numerator_tpr.value == (pytest.approx(num) if num is not None else None)
            assert ratio.denominator_tpr.value == (pytest.approx(den) if den is not None else None)
            if num is None or not den:
                assert not ratio.ratio.defined
            else:
                assert ratio.ratio.value == pytest.approx(num / den)

    def test_missed_group_recall(self, seed: int) -> None:
        rows, scores, k = _instance(seed)
        ranked = rank_and_cut([r.person for r in rows], scores, k=k, tie_seed=seed)
        metric = missed_group_recall(ranked, rows)

        missed = [r.person for r in rows if r.label and not r.applied and not r.received_assistance]
        if missed:
            found = sum(p in ranked.persons[:k] for p in missed)
            assert metric.value == pytest.approx(found / len(missed))
        else:
            assert not metric.defined
