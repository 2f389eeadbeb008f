"""Seeded generator of linked synthetic administrative histories.

Each person is simulated month by month from a latent vulnerability score
that raises the intensity of every event stream and the homelessness hazard.
A configurable share of the population is "first-time hard": their score
shows only weakly in the non-homelessness streams, so the model has little
to go on until they have been homeless once.

The generator also returns a :class:`GroundTruth` holding, per person, the
latent score, the untreated homelessness onset dates and a common-random-
number uniform per decision, from which the treated/untreated outcome pair
of any decision can be read off exactly.

:func:`replay_current_process` then layers the county's current
first-come-first-served rental assistance process on top of a generated log.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import defaultdict
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from dateutil.relativedelta import relativedelta

from eviction_triage.config import CohortSpec, PopulationConfig
from eviction_triage.store import (
    CATEGORY_LEVELS,
    DemographicSnapshot,
    EventLog,
    EventRecord,
    EventSource,
)

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Exception
# ---------------------------------------------------------------------------


class GeneratorError(Exception):
    """Raised when a population cannot be generated or read back."""


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

# Sources driven by the latent score alone; homelessness, applications and
# payments are simulated separately.
_REGULAR_SOURCES: tuple[EventSource, ...] = (
    EventSource.eviction,
    EventSource.program_spell,
    EventSource.public_housing,
    EventSource.mental_behavioral_health,
    EventSource.physical_health_er,
    EventSource.cyf,
)

_PROGRAM_TYPES = CATEGORY_LEVELS[EventSource.program_spell]["program_type"]
_DIAGNOSES = CATEGORY_LEVELS[EventSource.mental_behavioral_health]["diagnosis"]
_CYF_TYPES = CATEGORY_LEVELS[EventSource.cyf]["service_type"]
_HOMELESS_TYPES = CATEGORY_LEVELS[EventSource.homelessness_service]["service_type"]
_HOMELESS_WEIGHTS = (0.6, 0.25, 0.15)
_EPISODE_PREFIX = {
    EventSource.eviction: "EV",
    EventSource.program_spell: "PS",
    EventSource.public_housing: "PH",
    EventSource.mental_behavioral_health: "MH",
    EventSource.physical_health_er: "ER",
    EventSource.cyf: "CY",
    EventSource.homelessness_service: "HS",
    EventSource.assistance_application: "AP",
    EventSource.rental_assistance_payment: "PA",
}

_MIN_RANGE_MONTHS = 12
_TRUTH_FILE = "ground_truth.csv"
_EPISODES_FILE = "episodes.csv"
_TRUTH_META = "truth.yaml"

# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PersonTruth:
    """Latent state and untreated homelessness onsets of one person."""

    person: int
    vulnerability: float
    first_time_hard: bool
    gender: str
    race: str
    birthdate: date
    onsets: tuple[date, ...]


@dataclass(frozen=True)
class AssistanceEpisode:
    """One paid application of the current process and its outcome pair."""

    person: int
    application_date: date
    payment_date: date
    untreated: bool
    treated: bool

    @property
    def prevented(self) -> bool:
        return self.untreated and not self.treated


@dataclass
class GroundTruth:
    """Counterfactual outcomes for every person of a generated population."""

    persons: dict[int, PersonTruth]
    seed: int
    treatment_risk_multiplier: float
    episodes: list[AssistanceEpisode] = field(default_factory=list)

    def uniform(self, person: int, as_of: date) -> float:
        """Common random number shared by both branches of one decision."""
        digest = hashlib.blake2b(
            f"{self.seed}:{person}:{as_of.isoformat()}".encode(), digest_size=8
        ).digest()
        return int.from_bytes(digest, "big") / 2**64

    def untreated_outcome(self, person: int, as_of: date, span_months: int) -> bool:
        """True if an untreated onset falls in ``(as_of, as_of + span]``."""
        end = as_of + relativedelta(months=span_months)
        truth = self.persons.get(person)
        if truth is None:
            return False
        return any(as_of < onset <= end for onset in truth.onsets)

    def counterfactual(self, person: int, as_of: date, span_months: int = 12) -> tuple[bool, bool]:
        """Return ``(homeless_if_treated, homeless_if_untreated)`` for one decision.

        Treatment can only prevent an onset; it prevents it when the
        decision's uniform is at least the treatment risk multiplier.
        """
        untreated = self.untreated_outcome(person, as_of, span_months)
        treated = untreated and self.uniform(person, as_of) < self.treatment_risk_multiplier
        return treated, untreated


# ---------------------------------------------------------------------------
# Calendar
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Calendar:
    start: date
    end: date
    month_starts: tuple[date, ...]
    month_lengths: np.ndarray
    filing_multiplier: np.ndarray

    @classmethod
    def build(cls, config: PopulationConfig) -> _Calendar:
        start, end = config.date_range
        months: list[date] = []
        current = start
        while current <= end:
            months.append(current)
            current = start + relativedelta(months=len(months))
        lengths = np.array(
            [((m + relativedelta(months=1)) - m).days for m in months], dtype=np.int64
        )
        multiplier = np.ones(len(months))
        mor = config.moratorium
        if mor is not None:
            for i, m in enumerate(months):
                month_end = m + relativedelta(months=1) - timedelta(days=1)
                if m <= mor.end and month_end >= mor.start:
                    multiplier[i] = mor.filing_multiplier
        return cls(start, end, tuple(months), lengths, multiplier)

    @property
    def n_months(self) -> int:
        return len(self.month_starts)

    def day(self, month: int, fraction: float) -> date:
        length = int(self.month_lengths[month])
        offset = min(int(fraction * length), length - 1)
        return self.month_starts[month] + timedelta(days=offset)


# ---------------------------------------------------------------------------
# Per-person simulation
# ---------------------------------------------------------------------------


@dataclass
class _PersonHistory:
    records: list[EventRecord]
    snapshots: list[DemographicSnapshot]
    truth: PersonTruth


class _Emitter:
    """Collects one person's records, applying knowledge lags and the data end."""

    def __init__(self, person: int, config: PopulationConfig, end: date) -> None:
        self.person = person
        self.end = end
        self.lags = {s: config.knowledge_lag_days.get(s, 0) for s in EventSource}
        self.records: list[EventRecord] = []
        self.counters: dict[EventSource, int] = defaultdict(int)

    def new_episode(self, source: EventSource) -> str:
        self.counters[source] += 1
        return f"{_EPISODE_PREFIX[source]}-{self.person}-{self.counters[source]}"

    def emit(
        self,
        source: EventSource,
        start: date,
        known_on: date,
        end: date | None = None,
        **attrs: str | float | date,
    ) -> bool:
        """Append one record if it is known by the data end; return whether it was."""
        knowledge = known_on + timedelta(days=self.lags[source])
        if known_on > self.end or knowledge > self.end:
            return False
        self.records.append(
            EventRecord.create(self.person, source, start, knowledge, event_end=end, **attrs)
        )
        return True


def _monthly_rates(
    config: PopulationConfig,
    cal: _Calendar,
    vulnerability: float,
    expression: float,
    minor: np.ndarray,
) -> dict[EventSource, np.ndarray]:
    loading = config.vulnerability_model.source_loading * expression
    scale = math.exp(loading * vulnerability - loading**2 / 2)
    rates: dict[EventSource, np.ndarray] = {}
    for source in _REGULAR_SOURCES:
        base = config.base_intensities.get(source, 0.0) / 12 * scale
        lam = np.full(cal.n_months, base)
        if source is EventSource.eviction:
            lam = lam * cal.filing_multiplier * ~minor
        elif source is EventSource.cyf:
            lam = lam * minor
        rates[source] = lam
    return rates


def _event_days(rng: np.random.Generator, cal: _Calendar, counts: np.ndarray) -> list[date]:
    days: list[date] = []
    for month in np.flatnonzero(counts):
        for fraction in rng.random(int(counts[month])):
            days.append(cal.day(int(month), float(fraction)))
    return sorted(days)


def _simulate_person(person: int, config: PopulationConfig, cal: _Calendar) -> _PersonHistory:
    rng = np.random.default_rng([config.seed, person])
    vm = config.vulnerability_model
    mix = config.demog_mix

    vulnerability = float(rng.standard_normal())
    hard = bool(rng.random() < vm.first_time_hard_fraction)
    expression = vm.hard_expression if hard else 1.0

    gender = "female" if rng.random() < mix.p_female else "male"
    race_draw = rng.random()
    if race_draw < mix.p_black:
        race = "black"
    elif race_draw < mix.p_black + mix.p_white:
        race = "white"
    else:
        race = "other"
    age_days = int(rng.integers(mix.age_min * 365, mix.age_max * 365))
    birthdate = cal.start - timedelta(days=age_days)
    adult_on = birthdate + relativedelta(years=18)
    minor = np.array([m < adult_on for m in cal.month_starts], dtype=bool)

    out = _Emitter(person, config, cal.end)
    interaction_days: set[date] = set()

    rates = _monthly_rates(config, cal, vulnerability, expression, minor)
    counts = {source: rng.poisson(rates[source]) for source in _REGULAR_SOURCES}

    # Eviction cases: filing, then hearing, then possibly an Order for Possession.
    filing_months = np.zeros(cal.n_months, dtype=bool)
    for filed in _event_days(rng, cal, counts[EventSource.eviction]):
        episode = out.new_episode(EventSource.eviction)
        amount = round(float(rng.lognormal(7.4, 0.7)), 2)
        if not out.emit(EventSource.eviction, filed, filed, episode_id=episode,
                        stage="filing", amount_owed=amount):
            continue
        interaction_days.add(filed)
        filing_months[_month_index(cal, filed)] = True
        if rng.random() >= 0.9:
            continue
        hearing = filed + timedelta(days=int(rng.integers(30, 46)))
        outcome = "landlord" if rng.random() < 0.75 else str(rng.choice(["tenant", "settled"]))
        out.emit(EventSource.eviction, filed, hearing, episode_id=episode, stage="hearing",
                 hearing_date=hearing, hearing_outcome=outcome)
        if outcome == "landlord" and rng.random() < 0.8:
            ofp = hearing + timedelta(days=int(rng.integers(10, 31)))
            out.emit(EventSource.eviction, filed, ofp, episode_id=episode,
                     stage="ofp", ofp_date=ofp)

    # Program spells.
    for opened in _event_days(rng, cal, counts[EventSource.program_spell]):
        episode = out.new_episode(EventSource.program_spell)
        program = str(rng.choice(_PROGRAM_TYPES))
        closed = opened + timedelta(days=1 + int(rng.exponential(240)))
        if out.emit(EventSource.program_spell, opened, opened, episode_id=episode,
                    stage="open", program_type=program):
            interaction_days.add(opened)
            out.emit(EventSource.program_spell, opened, closed, end=closed, episode_id=episode,
                     stage="closed", program_type=program)

    # Section 8 housing (rapid rehousing follows homelessness stays below).
    housed_until = date.min
    for enrolled in _event_days(rng, cal, counts[EventSource.public_housing]):
        if enrolled <= housed_until:
            continue
        move_in = enrolled + timedelta(days=int(rng.integers(30, 121)))
        left = move_in + timedelta(days=365 + int(rng.exponential(730)))
        housed_until = left
        if _emit_housing(out, enrolled, move_in, left, "section_8"):
            interaction_days.add(enrolled)

    # Mental and behavioral health interactions.
    crisis_months = np.zeros(cal.n_months, dtype=bool)
    for seen in _event_days(rng, cal, counts[EventSource.mental_behavioral_health]):
        episode = out.new_episode(EventSource.mental_behavioral_health)
        draw = rng.random()
        diagnosis = str(rng.choice(_DIAGNOSES))
        if draw < vm.p_crisis:
            kind, discharged = "crisis", seen
        elif draw < vm.p_crisis + 0.1:
            kind, discharged = "hospital_stay", seen + timedelta(days=int(rng.integers(2, 21)))
        else:
            kind, discharged = "walk_in", seen
        if out.emit(EventSource.mental_behavioral_health, seen, discharged, end=discharged,
                    episode_id=episode, stage="single", interaction_type=kind, diagnosis=diagnosis):
            interaction_days.add(seen)
            if kind == "crisis":
                crisis_months[_month_index(cal, seen)] = True

    # Emergency-room visits.
    for visited in _event_days(rng, cal, counts[EventSource.physical_health_er]):
        episode = out.new_episode(EventSource.physical_health_er)
        if out.emit(EventSource.physical_health_er, visited, visited, end=visited,
                    episode_id=episode, stage="single"):
            interaction_days.add(visited)

    # Child, youth and family services, minors only.
    for opened in _event_days(rng, cal, counts[EventSource.cyf]):
        episode = out.new_episode(EventSource.cyf)
        closed = min(opened + timedelta(days=1 + int(rng.exponential(180))), adult_on)
        if out.emit(EventSource.cyf, opened, opened, episode_id=episode, stage="open",
                    service_type=str(rng.choice(_CYF_TYPES))):
            interaction_days.add(opened)
            out.emit(EventSource.cyf, opened, max(closed, opened), end=max(closed, opened),
                     episode_id=episode, stage="closed")

    onsets = _simulate_homelessness(
        rng, config, cal, out, vulnerability, filing_months, crisis_months, interaction_days
    )

    snapshots = _snapshots(rng, config, person, gender, race, birthdate, interaction_days)
    truth = PersonTruth(person, vulnerability, hard, gender, race, birthdate, tuple(onsets))
    return _PersonHistory(out.records, snapshots, truth)


def _month_index(cal: _Calendar, day: date) -> int:
    delta = relativedelta(day, cal.start)
    return min(delta.years * 12 + delta.months, cal.n_months - 1)


def _emit_housing(
    out: _Emitter, enrolled: date, move_in: date, left: date, housing_type: str, referral: str = ""
) -> bool:
    episode = out.new_episode(EventSource.public_housing)
    extra = {"referral": referral} if referral else {}
    if not out.emit(EventSource.public_housing, enrolled, enrolled, episode_id=episode,
                    stage="open", housing_type=housing_type, **extra):
        return False
    if out.emit(EventSource.public_housing, enrolled, move_in, episode_id=episode,
                stage="move_in", move_in_date=move_in):
        out.emit(EventSource.public_housing, enrolled, left, end=left, episode_id=episode,
                 stage="closed")
    return True


def _recent(flags: np.ndarray, window: int) -> np.ndarray:
    """``out[m]`` is true when any flag is set in months ``[m - window, m - 1]``."""
    cumulative = np.concatenate([[0], np.cumsum(flags.astype(np.int64))])
    idx = np.arange(len(flags))
    lo = np.maximum(idx - window, 0)
    return (cumulative[idx] - cumulative[lo]) > 0


def _simulate_homelessness(
    rng: np.random.Generator,
    config: PopulationConfig,
    cal: _Calendar,
    out: _Emitter,
    vulnerability: float,
    filing_months: np.ndarray,
    crisis_months: np.ndarray,
    interaction_days: set[date],
) -> list[date]:
    vm = config.vulnerability_model
    hazard = vm.homelessness_rate / 12 * math.exp(vm.homelessness_loading * vulnerability)
    recent_filing = _recent(filing_months, vm.filing_window_months)
    recent_crisis = _recent(crisis_months, vm.crisis_window_months)
    draws = rng.random(cal.n_months)
    days = rng.random(cal.n_months)

    onsets: list[date] = []
    blocked_until = -1
    prior = False
    for month in range(cal.n_months):
        if month <= blocked_until:
            continue
        rate = hazard
        if prior:
            rate *= vm.prior_multiplier
        if recent_crisis[month]:
            rate *= vm.crisis_multiplier
        if recent_filing[month]:
            rate *= vm.filing_multiplier
        if draws[month] >= -math.expm1(-rate):
            continue

        onset = cal.day(month, float(days[month]))
        stay_days = 1 + int(rng.exponential(30 * vm.mean_stay_months))
        left = onset + timedelta(days=stay_days)
        service = str(rng.choice(_HOMELESS_TYPES, p=_HOMELESS_WEIGHTS))
        episode = out.new_episode(EventSource.homelessness_service)
        onsets.append(onset)
        prior = True
        blocked_until = _month_index(cal, left) if left <= cal.end else cal.n_months
        if not out.emit(EventSource.homelessness_service, onset, onset, episode_id=episode,
                        stage="open", service_type=service):
            continue
        interaction_days.add(onset)
        out.emit(EventSource.homelessness_service, onset, left, end=left, episode_id=episode,
                 stage="closed", service_type=service)

        if rng.random() < vm.p_rehousing:
            enrolled = left + timedelta(days=int(rng.integers(0, 15)))
            move_in = enrolled + timedelta(days=int(rng.integers(30, 181)))
            housed = move_in + timedelta(days=365)
            if _emit_housing(out, enrolled, move_in, housed, "rapid_rehousing", referral=episode):
                interaction_days.add(enrolled)
    return onsets


def _snapshots(
    rng: np.random.Generator,
    config: PopulationConfig,
    person: int,
    gender: str,
    race: str,
    birthdate: date,
    interaction_days: set[date],
) -> list[DemographicSnapshot]:
    mix = config.demog_mix
    days = sorted(interaction_days)
    gender_gap = rng.random(len(days)) < mix.p_gender_unrecorded
    race_gap = rng.random(len(days)) < mix.p_race_unrecorded
    return [
        DemographicSnapshot(
            person=person,
            collected_on=day,
            gender="unknown" if gender_gap[i] else gender,
            race="unknown" if race_gap[i] else race,
            birthdate=birthdate,
        )
        for i, day in enumerate(days)
    ]


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _chunks(n: int, size: int) -> Iterator[range]:
    for lo in range(0, n, size):
        yield range(lo + 1, min(lo + size, n) + 1)


def generate(config: PopulationConfig, workers: int = 1) -> tuple[EventLog, GroundTruth]:
    """Generate a linked synthetic event log and its ground truth.

    Person identifiers are ``1..n_persons``.  Each person draws from
    ``numpy.random.default_rng([seed, person])``, so the result is identical
    for any *workers* count.

    Raises
    ------
    GeneratorError
        If the date range is shorter than one label span or a latent-only
        intensity is configured for a separately simulated source.
    """
    start, end = config.date_range
    if start + relativedelta(months=_MIN_RANGE_MONTHS) > end:
        raise GeneratorError(
            f"date_range {start.isoformat()}..{end.isoformat()} is shorter than one "
            f"{_MIN_RANGE_MONTHS}-month label span"
        )
    extra = set(config.base_intensities) - set(_REGULAR_SOURCES)
    if extra:
        raise GeneratorError(
            "base_intensities cannot set simulated sources: " + ", ".join(sorted(extra))
        )

    cal = _Calendar.build(config)
    logger.info(
        "Generating %s person(s) over %s month(s), seed %s",
        config.n_persons,
        cal.n_months,
        config.seed,
    )

    def run_chunk(persons: range) -> list[_PersonHistory]:
        return [_simulate_person(p, config, cal) for p in persons]

    chunk_size = max(1, math.ceil(config.n_persons / (workers * 4)))
    with ThreadPoolExecutor(max_workers=workers) as executor:
        chunks = executor.map(run_chunk, _chunks(config.n_persons, chunk_size))
        histories = [h for chunk in chunks for h in chunk]

    records = [r for h in histories for r in h.records]
    snapshots = [s for h in histories for s in h.snapshots]
    log = EventLog(records, snapshots, horizon=end)
    truth = GroundTruth(
        persons={h.truth.person: h.truth for h in histories},
        seed=config.seed,
        treatment_risk_multiplier=config.assistance_model.treatment_risk_multiplier,
    )
    logger.info("Generated %s record(s) and %s snapshot(s)", len(log), len(log.snapshots))
    return log, truth


def replay_current_process(
    log: EventLog,
    config: PopulationConfig,
    truth: GroundTruth | None = None,
    span_months: int = 12,
) -> EventLog:
    """Simulate the first-come-first-served assistance process on a generated log.

    A ``p_apply_given_filing`` share of eviction filings produce an
    application within two weeks.  Each month the waitlist pays, in
    application order, up to ``waitlist_capacity_per_month`` applicants
    ``payment_delay_days`` after the month opens or the application arrives;
    applications waiting longer than ``waitlist_expiry_months`` lapse.  A
    payment prevents the homelessness onsets of the following *span_months*
    whenever the decision's common random number says the treated branch
    stays housed; the corresponding homelessness and rehousing records are
    removed.  When *truth* is given, each paid episode is appended to
    ``truth.episodes``.
    """
    am = config.assistance_model
    lag_app = config.knowledge_lag_days.get(EventSource.assistance_application, 0)
    lag_pay = config.knowledge_lag_days.get(EventSource.rental_assistance_payment, 0)
    horizon = log.horizon or config.date_range[1]
    multiplier = (
        truth.treatment_risk_multiplier if truth is not None else am.treatment_risk_multiplier
    )
    oracle = truth or GroundTruth({}, config.seed, multiplier)

    filings = [
        r for r in log.source_records(EventSource.eviction) if r.attr("stage") == "filing"
    ]
    applications: list[tuple[date, int, str, float]] = []
    new_records: list[EventRecord] = []
    for filing in sorted(filings, key=lambda r: (r.event_start, r.person, r.sort_key())):
        rng = np.random.default_rng([config.seed, 7, filing.person, filing.event_start.toordinal()])
        if rng.random() >= am.p_apply_given_filing:
            continue
        applied = filing.event_start + timedelta(days=int(rng.integers(0, 15)))
        if applied + timedelta(days=lag_app) > horizon:
            continue
        case = str(filing.attr("episode_id", ""))
        amount = float(filing.attr("amount_owed", 0.0) or 0.0)  # type: ignore[arg-type]
        applications.append((applied, filing.person, case, amount))
        new_records.append(
            EventRecord.create(
                filing.person, EventSource.assistance_application, applied,
                applied + timedelta(days=lag_app), episode_id=f"AP-{case}", case=case,
                stage="single",
            )
        )
    applications.sort()

    payments: list[tuple[int, date, date]] = []
    queue: list[tuple[date, int, str, float]] = []
    month = config.date_range[0].replace(day=1)
    cursor = 0
    while month <= horizon:
        next_month = month + relativedelta(months=1)
        while cursor < len(applications) and applications[cursor][0] < next_month:
            queue.append(applications[cursor])
            cursor += 1
        expiry = month - relativedelta(months=am.waitlist_expiry_months)
        queue = [entry for entry in queue if entry[0] >= expiry]
        capacity = am.waitlist_capacity_per_month
        paid, queue = queue[:capacity], queue[capacity:]
        for applied, person, case, amount in paid:
            pay_day = max(applied, month) + timedelta(days=am.payment_delay_days)
            if pay_day + timedelta(days=lag_pay) > horizon:
                continue
            payments.append((person, applied, pay_day))
            new_records.append(
                EventRecord.create(
                    person, EventSource.rental_assistance_payment, pay_day,
                    pay_day + timedelta(days=lag_pay), episode_id=f"PA-{case}", case=case,
                    amount=amount, stage="single",
                )
            )
        month = next_month

    removed_episodes: set[str] = set()
    for person, applied, paid_on in payments:
        window_end = paid_on + relativedelta(months=span_months)
        onsets = [
            r for r in log.person_records(person, EventSource.homelessness_service)
            if r.attr("stage") == "open" and paid_on < r.event_start <= window_end
        ]
        untreated = bool(onsets) or oracle.untreated_outcome(person, paid_on, span_months)
        treated = untreated and oracle.uniform(person, paid_on) < multiplier
        if untreated and not treated:
            removed_episodes.update(str(r.attr("episode_id")) for r in onsets)
        if truth is not None:
            truth.episodes.append(AssistanceEpisode(person, applied, paid_on, untreated, treated))

    def keep(record: EventRecord) -> bool:
        if record.source is EventSource.homelessness_service:
            return str(record.attr("episode_id")) not in removed_episodes
        if record.source is EventSource.public_housing:
            return str(record.attr("referral", "")) not in removed_episodes
        return True

    replayed = log.filtered(keep).with_records(new_records)
    replayed = _drop_orphan_snapshots(replayed)
    logger.info(
        "Replayed current process: %s application(s), %s payment(s), %s prevented episode(s)",
        len(applications),
        len(payments),
        len(removed_episodes),
    )
    return replayed


def _drop_orphan_snapshots(log: EventLog) -> EventLog:
    days: dict[int, set[date]] = defaultdict(set)
    for record in log.records:
        days[record.person].add(record.event_start)
    kept = [s for s in log.snapshots if s.collected_on in days.get(s.person, set())]
    return EventLog(log.records, kept, horizon=log.horizon)


# ---------------------------------------------------------------------------
# Calibration summary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PopulationSummary:
    """Demographic composition of one labeled cohort."""

    as_of: date
    cohort_size: int
    positives: int
    baserate: float
    share_female: float
    share_black: float
    share_prior_homeless: float
    share_prior_among_positives: float | None
    share_unapplied_among_positives: float | None

    def to_dict(self) -> dict[str, object]:
        return {k: (v.isoformat() if isinstance(v, date) else v) for k, v in self.__dict__.items()}


def _recorded_share(values: list[str], level: str) -> float:
    recorded = [v for v in values if v != "unknown"]
    return sum(v == level for v in recorded) / len(recorded) if recorded else 0.0


def population_summary(
    log: EventLog, as_of: date, cohort_spec: CohortSpec | None = None
) -> PopulationSummary:
    """Composition of the labeled cohort at *as_of*.

    Gender and race shares are taken over rows whose value is recorded;
    an unrecorded value counts in neither numerator nor denominator.
    """
    from eviction_triage.cohort import build_cohort, label_cohort

    spec = cohort_spec or CohortSpec()
    rows = label_cohort(build_cohort(log.view(as_of), spec), log, spec)
    n = len(rows)
    if n == 0:
        raise GeneratorError(f"empty cohort at {as_of.isoformat()}")
    positives = [r for r in rows if r.label]
    n_pos = len(positives)
    prior_pos = sum(r.prior_homelessness for r in positives)
    unapplied_pos = sum(not r.applied for r in positives)
    return PopulationSummary(
        as_of=as_of,
        cohort_size=n,
        positives=n_pos,
        baserate=n_pos / n,
        share_female=_recorded_share([r.gender for r in rows], "female"),
        share_black=_recorded_share([r.race for r in rows], "black"),
        share_prior_homeless=sum(r.prior_homelessness for r in rows) / n,
        share_prior_among_positives=prior_pos / n_pos if n_pos else None,
        share_unapplied_among_positives=unapplied_pos / n_pos if n_pos else None,
    )


# ---------------------------------------------------------------------------
# Interchange
# ---------------------------------------------------------------------------


def write_ground_truth(truth: GroundTruth, directory: Path) -> list[Path]:
    """Write ``ground_truth.csv``, ``episodes.csv`` and ``truth.yaml``."""
    directory.mkdir(parents=True, exist_ok=True)
    people = pd.DataFrame(
        [
            {
                "person_id": t.person,
                "vulnerability": repr(t.vulnerability),
                "first_time_hard": int(t.first_time_hard),
                "gender": t.gender,
                "race": t.race,
                "birthdate": t.birthdate.isoformat(),
                "onsets": "|".join(d.isoformat() for d in t.onsets),
            }
            for t in sorted(truth.persons.values(), key=lambda t: t.person)
        ],
        columns=[
            "person_id",
            "vulnerability",
            "first_time_hard",
            "gender",
            "race",
            "birthdate",
            "onsets",
        ],
    )
    episodes = pd.DataFrame(
        [
            {
                "person_id": e.person,
                "application_date": e.application_date.isoformat(),
                "payment_date": e.payment_date.isoformat(),
                "untreated": int(e.untreated),
                "treated": int(e.treated),
                "prevented": int(e.prevented),
            }
            for e in truth.episodes
        ],
        columns=[
            "person_id",
            "application_date",
            "payment_date",
            "untreated",
            "treated",
            "prevented",
        ],
    )
    truth_path = directory / _TRUTH_FILE
    episodes_path = directory / _EPISODES_FILE
    meta_path = directory / _TRUTH_META
    people.to_csv(truth_path, index=False, encoding="utf-8")
    episodes.to_csv(episodes_path, index=False, encoding="utf-8")
    meta_path.write_text(
        yaml.safe_dump(
            {"seed": truth.seed, "treatment_risk_multiplier": truth.treatment_risk_multiplier},
            sort_keys=True,
        ),
        encoding="utf-8",
    )
    return [truth_path, episodes_path, meta_path]


def read_ground_truth(directory: Path) -> GroundTruth:
    """Read files written by :func:`write_ground_truth`.

    Raises
    ------
    GeneratorError
        If a file is missing or malformed.
    """
    try:
        meta = yaml.safe_load((directory / _TRUTH_META).read_text(encoding="utf-8"))
        people = pd.read_csv(directory / _TRUTH_FILE, dtype=str, keep_default_na=False)
        episodes = pd.read_csv(directory / _EPISODES_FILE, dtype=str, keep_default_na=False)
    except FileNotFoundError as exc:
        raise GeneratorError(f"Ground truth file not found: {exc.filename}") from exc
    except (yaml.YAMLError, pd.errors.ParserError) as exc:
        raise GeneratorError(f"Failed to read ground truth in {directory}: {exc}") from exc

    try:
        persons = {
            int(row.person_id): PersonTruth(
                person=int(row.person_id),
                vulnerability=float(row.vulnerability),
                first_time_hard=row.first_time_hard == "1",
                gender=row.gender,
                race=row.race,
                birthdate=date.fromisoformat(row.birthdate),
                onsets=tuple(date.fromisoformat(d) for d in row.onsets.split("|") if d),
            )
            for row in people.itertuples(index=False)
        }
        paid = [
            AssistanceEpisode(
                person=int(row.person_id),
                application_date=date.fromisoformat(row.application_date),
                payment_date=date.fromisoformat(row.payment_date),
                untreated=row.untreated == "1",
                treated=row.treated == "1",
            )
            for row in episodes.itertuples(index=False)
        ]
        return GroundTruth(
            persons=persons,
            seed=int(meta["seed"]),
            treatment_risk_multiplier=float(meta["treatment_risk_multiplier"]),
            episodes=paid,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GeneratorError(f"Malformed ground truth in {directory}: {exc}") from exc
