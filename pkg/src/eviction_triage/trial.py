"""Field validation: shadow-mode replay and simulated randomized trials.

Shadow mode trains on the log exactly as it stood on a freeze date, freezes
the top-k list, and scores it once the outcome window has matured.  The
trial simulation compares the current first-come-first-served candidate set
with the model's candidate set, realizing outcomes from the generator's
counterfactual pairs so every estimate can be checked against its truth.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from dateutil.relativedelta import relativedelta

from eviction_triage.cohort import CohortRow, build_cohort, label_cohort, lookback_window
from eviction_triage.config import CohortSpec, FeatureSpec, RctAssignment
from eviction_triage.evaluate import Metric, RankedList, precision_recall_at_k, rank_and_cut
from eviction_triage.features import FeatureMatrix
from eviction_triage.learners import ModelSpec, fit, score
from eviction_triage.splits import cohort_matrix, training_as_ofs
from eviction_triage.store import EventLog, EventSource
from eviction_triage.synthgen import GroundTruth

logger = logging.getLogger(__name__)

_N_STRATA = 5

# ---------------------------------------------------------------------------
# Exception
# ---------------------------------------------------------------------------


class TrialError(Exception):
    """Raised when a shadow run or trial cannot be carried out."""


# ---------------------------------------------------------------------------
# Shadow mode
# ---------------------------------------------------------------------------


def freeze_list(
    log: EventLog,
    freeze_date: date,
    spec: ModelSpec,
    cohort_spec: CohortSpec,
    feature_spec: FeatureSpec,
    k: int = 100,
    cadence_months: int = 3,
    data_start: date | None = None,
    tie_seed: int = 0,
    workers: int = 1,
) -> tuple[RankedList, list[CohortRow]]:
    """Train on everything known by *freeze_date* and rank that day's cohort.

    Only ``log.truncated(freeze_date)`` is read, so records known later
    cannot change the list.  Training stacks the labeled cohorts of every
    as-of date whose label window closes by the freeze date.

    Returns
    -------
    tuple[RankedList, list[CohortRow]]
        The frozen list and the unlabeled cohort it ranks.
    """
    known = log.truncated(freeze_date)
    floor = data_start or known.earliest_knowledge
    if floor is None:
        raise TrialError(f"nothing known by {freeze_date.isoformat()}")
    as_ofs = training_as_ofs(freeze_date, floor, cohort_spec.label_span_months, cadence_months)
    matrices = (
        cohort_matrix(known, d, cohort_spec, feature_spec, workers=workers) for d in as_ofs
    )
    parts = [m for m in matrices if len(m)]
    if not parts:
        raise TrialError(f"no labeled training cohort before {freeze_date.isoformat()}")
    model = fit(spec, FeatureMatrix.stack(parts), workers=workers)

    current = cohort_matrix(
        known, freeze_date, cohort_spec, feature_spec, labeled=False, workers=workers
    )
    if len(current) < k:
        raise TrialError(
            f"cohort at {freeze_date.isoformat()} has {len(current)} member(s), fewer than k={k}"
        )
    ranked = rank_and_cut(
        current.persons,
        score(model, current),
        k=k,
        tie_seed=tie_seed,
        split_id=f"shadow-{freeze_date.isoformat()}",
        model_id=spec.model_id,
        as_of=freeze_date,
    )
    logger.info(
        "Froze top-%s of %s at %s (%s training row(s))",
        k,
        len(current),
        freeze_date.isoformat(),
        sum(len(p) for p in parts),
        extra={"stage": "shadow", "model": spec.model_id},
    )
    return ranked, list(current.rows)


@dataclass(frozen=True)
class ShadowRun:
    """A frozen list and how it fared once outcomes matured."""

    freeze_date: date
    model_id: str
    frozen: RankedList
    horizon_months: int
    precision: Metric
    recall: Metric
    recipients_overlap: int
    received_and_positive: int
    missed_found: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "freeze_date": self.freeze_date.isoformat(),
            "model_id": self.model_id,
            "k": self.frozen.k,
            "cohort_size": len(self.frozen),
            "horizon_months": self.horizon_months,
            "precision_at_k": self.precision.value,
            "recall_at_k": self.recall.value,
            "recipients_overlap": self.recipients_overlap,
            "received_and_positive": self.received_and_positive,
            "missed_found": self.missed_found,
            "frozen_persons": list(self.frozen.selected),
        }


def run_shadow(
    log: EventLog,
    freeze_date: date,
    spec: ModelSpec,
    cohort_spec: CohortSpec,
    feature_spec: FeatureSpec,
    horizon_months: int = 12,
    k: int = 100,
    cadence_months: int = 3,
    tie_seed: int = 0,
    workers: int = 1,
) -> ShadowRun:
    """Freeze a list at *freeze_date*, then score it after *horizon_months*.

    Raises
    ------
    TrialError
        If the log does not reach ``freeze_date + horizon_months``.
    """
    matured = freeze_date + relativedelta(months=horizon_months)
    if log.horizon is None or log.horizon < matured:
        raise TrialError(
            f"horizon short: shadow outcomes mature on {matured.isoformat()} but the log ends "
            f"{log.horizon.isoformat() if log.horizon else '(empty)'}"
        )
    frozen, rows = freeze_list(
        log, freeze_date, spec, cohort_spec, feature_spec,
        k=k, cadence_months=cadence_months, tie_seed=tie_seed, workers=workers,
    )
    outcome_spec = cohort_spec.model_copy(update={"label_span_months": horizon_months})
    labeled = {r.person: r for r in label_cohort(rows, log, outcome_spec)}
    labels = {p: bool(r.label) for p, r in labeled.items()}
    precision, recall = precision_recall_at_k(frozen, labels)
    chosen = [labeled[p] for p in frozen.selected]
    run = ShadowRun(
        freeze_date=freeze_date,
        model_id=spec.model_id,
        frozen=frozen,
        horizon_months=horizon_months,
        precision=precision,
        recall=recall,
        recipients_overlap=sum(r.received_assistance for r in chosen),
        received_and_positive=sum(r.received_assistance and bool(r.label) for r in chosen),
        missed_found=sum(r.missed for r in chosen),
    )
    logger.info(
        "Shadow list at %s: precision@%s=%.3f, %s received assistance, %s missed found",
        freeze_date.isoformat(),
        k,
        precision.value or 0.0,
        run.recipients_overlap,
        run.missed_found,
        extra={"stage": "shadow", "model": spec.model_id},
    )
    return run


# ---------------------------------------------------------------------------
# Randomized trial
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RctDesign:
    """Trial arms are the current and model candidate sets at ``as_of``."""

    as_of: date
    k: int = 100
    treatment_fraction: float = 0.5
    assignment: RctAssignment = RctAssignment.pure_random
    seed: int = 0
    span_months: int = 12

    def __post_init__(self) -> None:
        if not 0.0 < self.treatment_fraction < 1.0:
            raise TrialError(
                f"treatment_fraction must lie in (0, 1), got {self.treatment_fraction}"
            )
        if self.k <= 0:
            raise TrialError(f"k must be positive, got {self.k}")


@dataclass(frozen=True)
class Candidate:
    person: int
    contact_date: date


@dataclass(frozen=True)
class Candidates:
    """Both arms' candidate sets, fixed across replications."""

    current: tuple[Candidate, ...]
    model: tuple[Candidate, ...]
    scores: Mapping[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Contrast:
    """Difference of two rates with its binomial standard error."""

    estimate: float
    se: float
    n_a: int
    n_b: int

    def covers(self, truth: float, z: float = 2.0) -> bool:
        return abs(self.estimate - truth) <= z * self.se


def _contrast(a: np.ndarray, b: np.ndarray, what: str) -> Contrast:
    if len(a) == 0 or len(b) == 0:
        raise TrialError(f"empty arm: {what}")
    pa, pb = float(a.mean()), float(b.mean())
    se = math.sqrt(pa * (1 - pa) / len(a) + pb * (1 - pb) / len(b))
    return Contrast(pa - pb, se, len(a), len(b))


@dataclass(frozen=True)
class StratumEffect:
    arm: str
    stratum: int
    effect: Contrast | None


@dataclass(frozen=True)
class RctReport:
    """Estimates of one trial replication next to their counterfactual truths."""

    design: RctDesign
    replication: int
    n_treated: dict[str, int]
    n_control: dict[str, int]
    efficiency: Contrast
    effectiveness_model: Contrast
    effectiveness_current: Contrast
    true_efficiency: float
    true_effect_model: float
    true_effect_current: float
    strata: tuple[StratumEffect, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "replication": self.replication,
            "seed": self.design.seed,
            "as_of": self.design.as_of.isoformat(),
            "assignment": self.design.assignment.value,
            "treatment_fraction": self.design.treatment_fraction,
        }
        for arm in ("current", "model"):
            out[f"n_treated_{arm}"] = self.n_treated[arm]
            out[f"n_control_{arm}"] = self.n_control[arm]
        for name, contrast, truth in (
            ("efficiency", self.efficiency, self.true_efficiency),
            ("effectiveness_model", self.effectiveness_model, self.true_effect_model),
            ("effectiveness_current", self.effectiveness_current, self.true_effect_current),
        ):
            out[name] = contrast.estimate
            out[f"{name}_se"] = contrast.se
            out[f"{name}_true"] = truth
        for s in self.strata:
            out[f"effect_{s.arm}_q{s.stratum + 1}"] = s.effect.estimate if s.effect else None
        return out


def candidate_sets(
    log: EventLog,
    design: RctDesign,
    ranked: RankedList,
    cohort_spec: CohortSpec,
) -> Candidates:
    """Current set: the first k cohort applicants by application date.  Model set: *ranked*'s top-k.

    A candidate's contact date is their application date if they applied
    in the lookback window, else their latest filing date.
    """
    view = log.view(design.as_of)
    window = lookback_window(design.as_of, cohort_spec)
    cohort = {r.person for r in build_cohort(view, cohort_spec)}
    applied: dict[int, date] = {}
    for record in view.scan(EventSource.assistance_application, window):
        if record.person in cohort:
            first = applied.get(record.person, record.event_start)
            applied[record.person] = min(first, record.event_start)
    filed: dict[int, date] = {}
    for record in view.scan(EventSource.eviction, window):
        if record.person in cohort:
            latest = filed.get(record.person, record.event_start)
            filed[record.person] = max(latest, record.event_start)

    def contact(person: int) -> date:
        return applied.get(person) or filed.get(person) or design.as_of

    first_come = sorted(applied.items(), key=lambda item: (item[1], item[0]))[: design.k]
    return Candidates(
        current=tuple(Candidate(p, d) for p, d in first_come),
        model=tuple(Candidate(p, contact(p)) for p in ranked.top(min(design.k, len(ranked)))),
        scores=dict(zip(ranked.persons, ranked.scores)),
    )


def _funding_available(seed: int, day: date, fraction: float) -> bool:
    digest = hashlib.blake2b(f"funding:{seed}:{day.isoformat()}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64 < fraction


def _assign(candidates: Sequence[Candidate], design: RctDesign, arm_index: int) -> np.ndarray:
    """Boolean treatment flags, one per candidate."""
    n = len(candidates)
    if design.assignment is RctAssignment.pure_random:
        rng = np.random.default_rng([design.seed, arm_index])
        flags = np.zeros(n, dtype=bool)
        flags[rng.permutation(n)[: round(design.treatment_fraction * n)]] = True
        return flags
    return np.array(
        [
            _funding_available(design.seed, c.contact_date, design.treatment_fraction)
            for c in candidates
        ],
        dtype=bool,
    )


def _strata(
    arms: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]],
    scores: Mapping[int, float],
) -> tuple[StratumEffect, ...]:
    pooled = [scores[p] for persons, _, _ in arms.values() for p in persons if p in scores]
    if len(pooled) < _N_STRATA:
        return ()
    edges = np.quantile(pooled, np.linspace(0, 1, _N_STRATA + 1)[1:-1])
    out: list[StratumEffect] = []
    for arm, (persons, treated, outcome) in arms.items():
        stratum = np.array(
            [np.searchsorted(edges, scores.get(int(p), -np.inf), side="right") for p in persons]
        )
        for q in range(_N_STRATA):
            cell = stratum == q
            t, c = outcome[cell & treated], outcome[cell & ~treated]
            out.append(StratumEffect(arm, q, _contrast(t, c, arm) if len(t) and len(c) else None))
    return tuple(out)


def realize_rct(
    truth: GroundTruth, design: RctDesign, candidates: Candidates, replication: int = 0
) -> RctReport:
    """Assign, realize outcomes from the counterfactual pairs, and estimate."""
    arms: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    true_effect: dict[str, float] = {}
    true_control: dict[str, float] = {}
    arms_in_order = (("current", candidates.current), ("model", candidates.model))
    for index, (arm, members) in enumerate(arms_in_order):
        if not members:
            raise TrialError(f"empty arm: no {arm} candidates at {design.as_of.isoformat()}")
        persons = np.array([c.person for c in members], dtype=np.int64)
        pairs = np.array(
            [truth.counterfactual(c.person, design.as_of, design.span_months) for c in members],
            dtype=bool,
        )
        treated = _assign(members, design, index)
        outcome = np.where(treated, pairs[:, 0], pairs[:, 1])
        arms[arm] = (persons, treated, outcome)
        true_effect[arm] = float(pairs[:, 0].mean() - pairs[:, 1].mean())
        true_control[arm] = float(pairs[:, 1].mean())

    def split(arm: str) -> tuple[np.ndarray, np.ndarray]:
        _, treated, outcome = arms[arm]
        return outcome[treated], outcome[~treated]

    model_t, model_c = split("model")
    current_t, current_c = split("current")
    return RctReport(
        design=design,
        replication=replication,
        n_treated={"current": len(current_t), "model": len(model_t)},
        n_control={"current": len(current_c), "model": len(model_c)},
        efficiency=_contrast(model_c, current_c, "control group"),
        effectiveness_model=_contrast(model_t, model_c, "model arm"),
        effectiveness_current=_contrast(current_t, current_c, "current arm"),
        true_efficiency=true_control["model"] - true_control["current"],
        true_effect_model=true_effect["model"],
        true_effect_current=true_effect["current"],
        strata=_strata(arms, candidates.scores) if candidates.scores else (),
    )


def _check_horizon(log: EventLog, design: RctDesign) -> None:
    end = design.as_of + relativedelta(months=design.span_months)
    if log.horizon is None or log.horizon < end:
        raise TrialError(f"trial outcomes mature on {end.isoformat()}, past the log horizon")


def simulate_rct(
    log: EventLog,
    truth: GroundTruth,
    design: RctDesign,
    ranked: RankedList,
    cohort_spec: CohortSpec,
) -> RctReport:
    """Run one simulated trial at ``design.as_of``.

    Raises
    ------
    TrialError
        If outcomes would reach past the log horizon or an arm (or one of
        its treatment and control groups) is empty.
    """
    _check_horizon(log, design)
    return realize_rct(truth, design, candidate_sets(log, design, ranked, cohort_spec))


def replication_seed(seed: int, replication: int) -> int:
    return int(np.random.SeedSequence([seed, replication]).generate_state(1)[0])


def run_rct_replications(
    log: EventLog,
    truth: GroundTruth,
    design: RctDesign,
    ranked: RankedList,
    cohort_spec: CohortSpec,
    n_replications: int = 100,
    workers: int = 1,
) -> list[RctReport]:
    """Repeat the assignment with per-replication seeds; candidate sets stay fixed."""
    _check_horizon(log, design)
    candidates = candidate_sets(log, design, ranked, cohort_spec)
    designs = [
        RctDesign(
            as_of=design.as_of,
            k=design.k,
            treatment_fraction=design.treatment_fraction,
            assignment=design.assignment,
            seed=replication_seed(design.seed, i),
            span_months=design.span_months,
        )
        for i in range(n_replications)
    ]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(realize_rct, truth, d, candidates, i) for i, d in enumerate(designs)]
        reports = [f.result() for f in futures]
    covered = sum(r.effectiveness_model.covers(r.true_effect_model) for r in reports)
    logger.info(
        "%s replication(s): model-arm effectiveness within 2 SE of truth in %s",
        n_replications,
        covered,
        extra={"stage": "rct"},
    )
    return reports


def write_rct_csv(reports: Sequence[RctReport], path: Path) -> None:
    """Replication-level CSV, one row per replication."""
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.to_dict() for r in reports]).to_csv(path, index=False)
