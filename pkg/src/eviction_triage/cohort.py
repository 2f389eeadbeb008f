"""Cohort construction and outcome labeling.

A person belongs to the cohort at an as-of date when an eviction filing
against them started in the preceding ``filing_lookback_months`` and they
are not currently homeless.  "Currently homeless" covers an active
homelessness-service stay and a rapid-rehousing enrolment whose move-in is
not yet known.  Membership reads only the leakage-guarded view; labels read
the full log, since outcomes lie in the future by construction.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Iterable
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import pandas as pd
from dateutil.relativedelta import relativedelta

from eviction_triage.config import CohortSpec
from eviction_triage.store import AsOfView, EventLog, EventSource

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------


class CohortError(Exception):
    """Raised for cohort construction, labeling and export failures."""


class LabelHorizonError(CohortError):
    """Raised when a label window reaches past the data horizon."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "person_id",
    "as_of",
    "label",
    "race",
    "gender",
    "prior_homelessness",
    "applied",
    "received_assistance",
]


@dataclass(frozen=True)
class CohortRow:
    """One (person, as-of date) decision unit."""

    person: int
    as_of: date
    label: bool | None = None
    race: str = "unknown"
    gender: str = "unknown"
    prior_homelessness: bool = False
    applied: bool = False
    received_assistance: bool = False

    @property
    def group_attrs(self) -> dict[str, object]:
        return {
            "race": self.race,
            "gender": self.gender,
            "prior_homelessness": self.prior_homelessness,
        }

    @property
    def served_attrs(self) -> dict[str, bool]:
        return {"applied": self.applied, "received_assistance": self.received_assistance}

    @property
    def missed(self) -> bool:
        """Positive without having applied for or received assistance."""
        return bool(self.label) and not self.applied and not self.received_assistance


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def lookback_window(as_of: date, spec: CohortSpec) -> tuple[date, date]:
    """Closed day window equal to ``(as_of - filing_lookback, as_of]``."""
    return as_of - relativedelta(months=spec.filing_lookback_months) + timedelta(days=1), as_of


def label_window(as_of: date, spec: CohortSpec) -> tuple[date, date]:
    """Closed day window equal to ``(as_of, as_of + label_span]``."""
    return as_of + timedelta(days=1), as_of + relativedelta(months=spec.label_span_months)


def is_currently_homeless(view: AsOfView, person: int, spec: CohortSpec) -> bool:
    """Active homelessness stay, or rehousing enrolment without a known move-in."""
    if spec.exclude_active_shelter:
        for source in spec.homelessness_sources:
            if any(ep.covers(view.as_of) for ep in view.episodes(person, source)):
                return True
    if spec.exclude_unhoused_rehousing:
        for ep in view.episodes(person, EventSource.public_housing):
            if ep.attrs.get("housing_type") != "rapid_rehousing" or ep.end is not None:
                continue
            move_in = ep.attrs.get("move_in_date")
            if not isinstance(move_in, date) or move_in > view.as_of:
                return True
    return False


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def build_cohort(view: AsOfView, spec: CohortSpec) -> list[CohortRow]:
    """Return the unlabeled cohort at ``view.as_of``, one row per person, ordered by person."""
    filings = view.scan(EventSource.eviction, lookback_window(view.as_of, spec))
    candidates = sorted({r.person for r in filings if r.attr("stage", "filing") == "filing"})

    rows: list[CohortRow] = []
    excluded = 0
    for person in candidates:
        if is_currently_homeless(view, person, spec):
            excluded += 1
            continue
        snap = view.demographics(person)
        prior = any(view.episodes(person, source) for source in spec.homelessness_sources)
        rows.append(
            CohortRow(
                person=person,
                as_of=view.as_of,
                race=snap.race if snap is not None else "unknown",
                gender=snap.gender if snap is not None else "unknown",
                prior_homelessness=prior,
            )
        )
    logger.debug(
        "Cohort at %s: %s member(s), %s excluded as currently homeless",
        view.as_of.isoformat(),
        len(rows),
        excluded,
    )
    return rows


def label_cohort(
    rows: Iterable[CohortRow], full_log: EventLog, spec: CohortSpec
) -> list[CohortRow]:
    """Attach labels and served attributes from the unguarded log.

    Raises
    ------
    LabelHorizonError
        If ``as_of + label_span`` lies past the log's horizon.
    """
    horizon = full_log.horizon
    labeled: list[CohortRow] = []
    for row in rows:
        start, end = label_window(row.as_of, spec)
        if horizon is None or end > horizon:
            reached = horizon.isoformat() if horizon else "empty log"
            raise LabelHorizonError(
                f"label window exceeds data horizon: {row.as_of.isoformat()} + "
                f"{spec.label_span_months} months > {reached}"
            )
        label = any(
            full_log.person_range(row.person, source, start, end)
            for source in spec.homelessness_sources
        )
        served_from = lookback_window(row.as_of, spec)[0]
        applied = bool(
            full_log.person_range(row.person, EventSource.assistance_application, served_from, end)
        )
        received = bool(
            full_log.person_range(
                row.person, EventSource.rental_assistance_payment, served_from, end
            )
        )
        labeled.append(
            dataclasses.replace(row, label=label, applied=applied, received_assistance=received)
        )
    return labeled


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _flag(value: bool | None) -> str:
    return "" if value is None else str(int(value))


def write_cohort_csv(rows: Iterable[CohortRow], path: Path) -> None:
    """Write the cohort export CSV."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [
            [
                str(r.person),
                r.as_of.isoformat(),
                _flag(r.label),
                r.race,
                r.gender,
                _flag(r.prior_homelessness),
                _flag(r.applied),
                _flag(r.received_assistance),
            ]
            for r in rows
        ],
        columns=_CSV_COLUMNS,
        dtype=str,
    )
    frame.to_csv(path, index=False, encoding="utf-8")


def read_cohort_csv(path: Path) -> list[CohortRow]:
    """Read a file written by :func:`write_cohort_csv`.

    Raises
    ------
    CohortError
        If the file is missing or malformed.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as exc:
        raise CohortError(f"Cohort file not found: {path}") from exc
    missing = [c for c in _CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise CohortError(f"Cohort file {path} lacks column(s): {', '.join(missing)}")
    try:
        return [
            CohortRow(
                person=int(row.person_id),
                as_of=date.fromisoformat(row.as_of),
                label=None if row.label == "" else row.label == "1",
                race=row.race,
                gender=row.gender,
                prior_homelessness=row.prior_homelessness == "1",
                applied=row.applied == "1",
                received_assistance=row.received_assistance == "1",
            )
            for row in frame.itertuples(index=False)
        ]
    except ValueError as exc:
        raise CohortError(f"Malformed cohort file {path}: {exc}") from exc
