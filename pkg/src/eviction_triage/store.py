"""Typed event log and knowledge-date-aware point-in-time query layer.

Every administrative interaction is an :class:`EventRecord` carrying both the
date(s) of the event and the ``knowledge_date`` on which the system learned
about it.  Reads go through an :class:`AsOfView`, which exposes exactly the
records with ``knowledge_date <= as_of``.  Asking a view for a window that
ends after its as-of date raises :class:`FutureWindowError`.

Multi-stage cases (an eviction filing followed by a hearing and an Order for
Possession, a program enrolment followed by its termination) are stored as
several records sharing ``event_start`` and an ``episode_id`` attribute, one
per stage, each with its own knowledge date.  :meth:`AsOfView.episodes`
merges the stages visible at the view's date.

Demographics are per-interaction :class:`DemographicSnapshot` objects; the
latest snapshot collected on or before the as-of date is the person's known
state.
"""

from __future__ import annotations

import bisect
import dataclasses
import logging
from collections import defaultdict
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from datetime import date
from enum import StrEnum
from pathlib import Path
from typing import Any

import pandas as pd
import yaml

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------


class StoreError(Exception):
    """Raised for event-log construction, query and interchange failures."""


class FutureWindowError(StoreError):
    """Raised when a query window extends past the view's as-of date."""


# ---------------------------------------------------------------------------
# Sources and attribute typing
# ---------------------------------------------------------------------------


class EventSource(StrEnum):
    """Administrative data sources linked by person identifier."""

    eviction = "eviction"
    program_spell = "program_spell"
    public_housing = "public_housing"
    mental_behavioral_health = "mental_behavioral_health"
    physical_health_er = "physical_health_er"
    cyf = "cyf"
    homelessness_service = "homelessness_service"
    assistance_application = "assistance_application"
    rental_assistance_payment = "rental_assistance_payment"


# Sources used for feature generation by default.
FEATURE_SOURCES: tuple[EventSource, ...] = (
    EventSource.eviction,
    EventSource.program_spell,
    EventSource.public_housing,
    EventSource.mental_behavioral_health,
    EventSource.physical_health_er,
    EventSource.cyf,
    EventSource.homelessness_service,
)

# Sources whose episodes have a duration.
SPELL_SOURCES: frozenset[EventSource] = frozenset(
    {
        EventSource.program_spell,
        EventSource.public_housing,
        EventSource.mental_behavioral_health,
        EventSource.cyf,
        EventSource.homelessness_service,
    }
)

# Categorical attribute vocabularies per source.
CATEGORY_LEVELS: dict[EventSource, dict[str, tuple[str, ...]]] = {
    EventSource.eviction: {"hearing_outcome": ("landlord", "tenant", "settled")},
    EventSource.program_spell: {
        "program_type": (
            "food_assistance",
            "cash_assistance",
            "case_management",
            "job_training",
            "housing_support",
        )
    },
    EventSource.public_housing: {"housing_type": ("section_8", "rapid_rehousing")},
    EventSource.mental_behavioral_health: {
        "interaction_type": ("walk_in", "crisis", "hospital_stay"),
        "diagnosis": ("depression", "anxiety", "substance_use", "bipolar", "psychotic", "other"),
    },
    EventSource.physical_health_er: {},
    EventSource.cyf: {"service_type": ("placement", "in_home", "investigation")},
    EventSource.homelessness_service: {
        "service_type": ("emergency_shelter", "street_outreach", "transitional_housing")
    },
}

FLOAT_ATTRS: frozenset[str] = frozenset({"amount_owed", "amount"})
DATE_ATTRS: frozenset[str] = frozenset({"hearing_date", "ofp_date", "move_in_date"})

AttrValue = str | float | date

SCHEMA_VERSION = 1
_MANIFEST_NAME = "manifest.yaml"
_DEMOGRAPHICS_NAME = "demographics.csv"
_BASE_COLUMNS = ("person_id", "event_start", "event_end", "knowledge_date")

# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EventRecord:
    """One dated interaction from one source.

    ``attrs`` is a tuple of ``(name, value)`` pairs sorted by name so that
    records are hashable and compare field by field.  Amounts are floats,
    the names in :data:`DATE_ATTRS` are dates, everything else is a string.
    """

    person: int
    source: EventSource
    event_start: date
    event_end: date | None
    knowledge_date: date
    attrs: tuple[tuple[str, AttrValue], ...] = ()

    @classmethod
    def create(
        cls,
        person: int,
        source: EventSource,
        event_start: date,
        knowledge_date: date,
        event_end: date | None = None,
        **attrs: AttrValue,
    ) -> EventRecord:
        """Build a record with attributes given as keyword arguments."""
        return cls(
            person=person,
            source=source,
            event_start=event_start,
            event_end=event_end,
            knowledge_date=knowledge_date,
            attrs=tuple(sorted(attrs.items())),
        )

    def attr(self, name: str, default: AttrValue | None = None) -> AttrValue | None:
        """Return attribute *name* or *default*."""
        for key, value in self.attrs:
            if key == name:
                return value
        return default

    @property
    def attr_map(self) -> dict[str, AttrValue]:
        return dict(self.attrs)

    def sort_key(self) -> tuple[Any, ...]:
        """Full-record lexicographic key (absent end sorts first)."""
        return (
            self.person,
            str(self.source),
            self.event_start,
            self.event_end is not None,
            self.event_end or date.min,
            self.knowledge_date,
            self.attrs,
        )


@dataclass(frozen=True)
class DemographicSnapshot:
    """Demographics as recorded during one interaction."""

    person: int
    collected_on: date
    gender: str
    race: str
    birthdate: date


@dataclass(frozen=True)
class Episode:
    """Stages of one case visible at a given as-of date, merged."""

    person: int
    source: EventSource
    episode_id: str
    start: date
    end: date | None
    attrs: dict[str, AttrValue]
    stages: frozenset[str]

    def covers(self, day: date) -> bool:
        """True when the episode started by *day* and is not known to have ended before it."""
        return self.start <= day and (self.end is None or self.end >= day)


@dataclass(frozen=True)
class Rejection:
    """A record or snapshot refused at ingest, with its input position."""

    index: int
    reason: str
    kind: str = "record"


@dataclass(frozen=True)
class IngestResult:
    """Outcome of :func:`ingest`: the log plus per-record accounting."""

    log: EventLog
    accepted: int
    rejected: tuple[Rejection, ...] = ()
    duplicates: int = 0


# ---------------------------------------------------------------------------
# Event log
# ---------------------------------------------------------------------------


class EventLog:
    """Immutable, deduplicated collection of records and snapshots.

    Records are kept in full-record lexicographic order and indexed by
    ``(person, source)`` and by source, both ordered by ``event_start``.
    """

    def __init__(
        self,
        records: Iterable[EventRecord] = (),
        snapshots: Iterable[DemographicSnapshot] = (),
        horizon: date | None = None,
    ) -> None:
        self._records: tuple[EventRecord, ...] = tuple(
            sorted(set(records), key=EventRecord.sort_key)
        )
        self._snapshots: tuple[DemographicSnapshot, ...] = tuple(
            sorted(
                set(snapshots),
                key=lambda s: (s.person, s.collected_on, s.gender, s.race, s.birthdate),
            )
        )
        self._explicit_horizon = horizon

        by_key: dict[tuple[int, EventSource], list[EventRecord]] = defaultdict(list)
        by_source: dict[EventSource, list[EventRecord]] = defaultdict(list)
        for record in self._records:
            by_key[(record.person, record.source)].append(record)
            by_source[record.source].append(record)
        self._by_key = {key: tuple(recs) for key, recs in by_key.items()}
        self._starts = {key: [r.event_start for r in recs] for key, recs in self._by_key.items()}
        self._by_source = {
            source: tuple(sorted(recs, key=lambda r: (r.event_start, r.sort_key())))
            for source, recs in by_source.items()
        }
        self._source_starts = {
            source: [r.event_start for r in recs] for source, recs in self._by_source.items()
        }

        by_person: dict[int, list[DemographicSnapshot]] = defaultdict(list)
        for snap in self._snapshots:
            by_person[snap.person].append(snap)
        self._snaps_by_person = {person: tuple(snaps) for person, snaps in by_person.items()}

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[EventRecord]:
        return iter(self._records)

    @property
    def records(self) -> tuple[EventRecord, ...]:
        return self._records

    @property
    def snapshots(self) -> tuple[DemographicSnapshot, ...]:
        return self._snapshots

    @property
    def persons(self) -> tuple[int, ...]:
        """Sorted identifiers of every person with a record or snapshot."""
        ids = {r.person for r in self._records} | set(self._snaps_by_person)
        return tuple(sorted(ids))

    @property
    def earliest_knowledge(self) -> date | None:
        if not self._records:
            return None
        return min(r.knowledge_date for r in self._records)

    @property
    def horizon(self) -> date | None:
        """Last date the log is complete for (explicit, else latest knowledge date)."""
        if self._explicit_horizon is not None:
            return self._explicit_horizon
        if not self._records:
            return None
        return max(r.knowledge_date for r in self._records)

    def view(self, as_of_date: date) -> AsOfView:
        """Return the leakage-guarded view of this log at *as_of_date*."""
        return AsOfView(self, as_of_date)

    def person_records(self, person: int, source: EventSource) -> tuple[EventRecord, ...]:
        """All records of *person* in *source*, unguarded, ordered by event_start."""
        return self._by_key.get((person, source), ())

    def person_snapshots(self, person: int) -> tuple[DemographicSnapshot, ...]:
        return self._snaps_by_person.get(person, ())

    def source_records(self, source: EventSource) -> tuple[EventRecord, ...]:
        """All records of *source*, unguarded, ordered by event_start."""
        return self._by_source.get(source, ())

    def source_range(self, source: EventSource, start: date, end: date) -> Sequence[EventRecord]:
        """Unguarded records of *source* with ``start <= event_start <= end``."""
        recs = self._by_source.get(source, ())
        starts = self._source_starts.get(source, [])
        lo = bisect.bisect_left(starts, start)
        hi = bisect.bisect_right(starts, end)
        return recs[lo:hi]

    def person_range(
        self, person: int, source: EventSource, start: date, end: date
    ) -> Sequence[EventRecord]:
        """Unguarded records of one person/source with ``start <= event_start <= end``."""
        recs = self._by_key.get((person, source), ())
        starts = self._starts.get((person, source), [])
        lo = bisect.bisect_left(starts, start)
        hi = bisect.bisect_right(starts, end)
        return recs[lo:hi]

    def truncated(self, cutoff: date) -> EventLog:
        """The log as it stood on *cutoff*: only records and snapshots known by then."""
        return EventLog(
            (r for r in self._records if r.knowledge_date <= cutoff),
            (s for s in self._snapshots if s.collected_on <= cutoff),
            horizon=cutoff,
        )

    def filtered(self, keep: Callable[[EventRecord], bool]) -> EventLog:
        """A copy holding only records for which *keep* is true."""
        return EventLog(
            (r for r in self._records if keep(r)), self._snapshots, horizon=self._explicit_horizon
        )

    def with_records(
        self,
        records: Iterable[EventRecord] = (),
        snapshots: Iterable[DemographicSnapshot] = (),
    ) -> EventLog:
        """A copy with *records* and *snapshots* appended (duplicates collapse)."""
        return EventLog(
            (*self._records, *records),
            (*self._snapshots, *snapshots),
            horizon=self._explicit_horizon,
        )


# ---------------------------------------------------------------------------
# Point-in-time view
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AsOfView:
    """Read-only window onto *log* exposing records known by *as_of*."""

    log: EventLog = field(repr=False)
    as_of: date

    def _check_window(self, start: date, end: date) -> None:
        if end > self.as_of:
            raise FutureWindowError(
                f"future window: window end {end.isoformat()} is after as-of date "
                f"{self.as_of.isoformat()}"
            )
        if start > end:
            raise StoreError(f"window start {start.isoformat()} is after its end {end.isoformat()}")

    def records(self) -> Iterator[EventRecord]:
        """Every visible record, in full-record order."""
        return (r for r in self.log.records if r.knowledge_date <= self.as_of)

    def events(self, person: int, source: EventSource) -> list[EventRecord]:
        """All visible records of one person/source, ordered by event_start."""
        return [
            r for r in self.log.person_records(person, source) if r.knowledge_date <= self.as_of
        ]

    def query_events(
        self, person: int, source: EventSource, window: tuple[date, date]
    ) -> list[EventRecord]:
        """Visible records of one person/source with event_start in the closed *window*.

        Raises
        ------
        FutureWindowError
            If the window ends after the view's as-of date.
        """
        start, end = window
        self._check_window(start, end)
        return [
            r
            for r in self.log.person_range(person, source, start, end)
            if r.knowledge_date <= self.as_of
        ]

    def scan(self, source: EventSource, window: tuple[date, date]) -> list[EventRecord]:
        """Visible records of *source*, any person, with event_start in *window*."""
        start, end = window
        self._check_window(start, end)
        return [
            r for r in self.log.source_range(source, start, end) if r.knowledge_date <= self.as_of
        ]

    def episodes(
        self,
        person: int,
        source: EventSource,
        window: tuple[date, date] | None = None,
    ) -> list[Episode]:
        """Visible episodes of one person/source, ordered by start then episode id.

        When *window* is given only episodes starting inside it are returned.
        """
        records = self.events(person, source) if window is None else self.query_events(
            person, source, window
        )
        return merge_episodes(records)

    def demographics(self, person: int) -> DemographicSnapshot | None:
        """Latest snapshot collected on or before the as-of date."""
        snaps = self.log.person_snapshots(person)
        best: DemographicSnapshot | None = None
        for snap in snaps:
            if snap.collected_on <= self.as_of:
                best = snap
            else:
                break
        return best


ViewFactory = Callable[[date], AsOfView]


def merge_episodes(records: Iterable[EventRecord]) -> list[Episode]:
    """Group records by episode id and merge their stages.

    Records without an ``episode_id`` are episodes of their own.  Later
    knowledge dates win when stages disagree on an attribute.
    """
    groups: dict[tuple[int, EventSource, str], list[EventRecord]] = defaultdict(list)
    for position, record in enumerate(records):
        episode_id = record.attr("episode_id")
        key_id = str(episode_id) if episode_id is not None else f"#{record.sort_key()!r}-{position}"
        groups[(record.person, record.source, key_id)].append(record)

    episodes: list[Episode] = []
    for (person, source, episode_id), recs in groups.items():
        recs.sort(key=lambda r: (r.knowledge_date, r.sort_key()))
        merged: dict[str, AttrValue] = {}
        stages: set[str] = set()
        end: date | None = None
        for record in recs:
            merged.update(record.attrs)
            stage = record.attr("stage")
            if stage is not None:
                stages.add(str(stage))
            if record.event_end is not None and (end is None or record.event_end > end):
                end = record.event_end
        merged.pop("stage", None)
        episodes.append(
            Episode(
                person=person,
                source=source,
                episode_id=episode_id,
                start=min(r.event_start for r in recs),
                end=end,
                attrs=merged,
                stages=frozenset(stages),
            )
        )
    episodes.sort(key=lambda e: (e.start, e.episode_id))
    return episodes


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def as_of(log: EventLog, as_of_date: date) -> AsOfView:
    """Return the view of *log* exposing exactly the records known by *as_of_date*."""
    return log.view(as_of_date)


def query_events(
    view: AsOfView, person: int, source: EventSource, window: tuple[date, date]
) -> list[EventRecord]:
    """See :meth:`AsOfView.query_events`."""
    return view.query_events(person, source, window)


def demographics_as_of(view: AsOfView, person: int) -> DemographicSnapshot | None:
    """See :meth:`AsOfView.demographics`."""
    return view.demographics(person)


def _record_problem(record: EventRecord) -> str | None:
    """Return the rejection reason for *record*, or ``None`` when well-formed."""
    if record.person is None:
        return "missing person"
    if record.event_start is None:
        return "missing start date"
    if record.knowledge_date is None:
        return "missing knowledge date"
    if record.event_end is not None and record.event_end < record.event_start:
        return "negative duration"
    if record.knowledge_date < record.event_start:
        return "knowledge before event"
    for key, value in record.attrs:
        if key in FLOAT_ATTRS and isinstance(value, float) and value < 0:
            return "negative amount"
    return None


def ingest(
    records: Iterable[EventRecord],
    snapshots: Iterable[DemographicSnapshot] = (),
    horizon: date | None = None,
    base: EventLog | None = None,
) -> IngestResult:
    """Validate and load records (and demographic snapshots) into an :class:`EventLog`.

    Malformed records are never fatal: each is reported as a
    :class:`Rejection` carrying its input position and reason.  Records equal
    in every field are collapsed into one.

    Parameters
    ----------
    records:
        Input records; ``source`` may be given as a plain string.
    snapshots:
        Demographic snapshots.  A snapshot is accepted only if its
        ``collected_on`` date is the start date of one of the person's
        accepted records.
    horizon:
        Date the data is complete for; defaults to ``base.horizon`` when
        appending, else the latest knowledge date.
    base:
        Existing log to append to.
    """
    rejected: list[Rejection] = []
    accepted_records: list[EventRecord] = []

    for index, record in enumerate(records):
        try:
            source = EventSource(record.source)
        except ValueError:
            rejected.append(Rejection(index, "unknown source"))
            continue
        if source is not record.source:
            record = dataclasses.replace(record, source=source)
        reason = _record_problem(record)
        if reason is not None:
            rejected.append(Rejection(index, reason))
            continue
        accepted_records.append(record)

    unique = set(accepted_records)
    duplicates = len(accepted_records) - len(unique)
    if base is not None:
        fresh = unique - set(base.records)
        duplicates += len(unique) - len(fresh)
        unique = fresh

    interaction_days: dict[int, set[date]] = defaultdict(set)
    for record in (*unique, *(base.records if base is not None else ())):
        interaction_days[record.person].add(record.event_start)

    accepted_snaps: list[DemographicSnapshot] = []
    for index, snap in enumerate(snapshots):
        if snap.person is None:
            rejected.append(Rejection(index, "missing person", kind="snapshot"))
        elif snap.collected_on not in interaction_days.get(snap.person, set()):
            rejected.append(Rejection(index, "snapshot without interaction", kind="snapshot"))
        else:
            accepted_snaps.append(snap)

    if base is not None:
        log = base.with_records(unique, accepted_snaps)
        if horizon is not None:
            log = EventLog(log.records, log.snapshots, horizon=horizon)
    else:
        log = EventLog(unique, accepted_snaps, horizon=horizon)

    if rejected:
        logger.warning("Ingest rejected %s input row(s)", len(rejected))
    logger.info(
        "Ingested %s record(s) (%s duplicate(s) collapsed), %s snapshot(s)",
        len(unique),
        duplicates,
        len(accepted_snaps),
    )
    return IngestResult(
        log=log, accepted=len(unique), rejected=tuple(rejected), duplicates=duplicates
    )


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def _format_value(value: AttrValue | None) -> str:
    if value is None:
        return ""
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_date(text: str) -> date | None:
    text = text.strip()
    if not text:
        return None
    try:
        return date.fromisoformat(text)
    except ValueError as exc:
        raise StoreError(f"malformed date '{text}'") from exc


def _parse_attr(name: str, text: str) -> AttrValue | None:
    if text == "":
        return None
    if name in FLOAT_ATTRS:
        try:
            return float(text)
        except ValueError as exc:
            raise StoreError(f"malformed amount '{text}'") from exc
    if name in DATE_ATTRS:
        return _parse_date(text)
    return text


def write_event_files(log: EventLog, directory: Path) -> list[Path]:
    """Write one CSV per source, ``demographics.csv`` and ``manifest.yaml``.

    Columns are ``person_id, event_start, event_end, knowledge_date`` followed
    by the source's attribute names in sorted order.  Absent values are empty
    strings.
    """
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    files: dict[str, str] = {}
    counts: dict[str, int] = {}

    for source in EventSource:
        records = [r for r in log.records if r.source is source]
        if not records:
            continue
        attr_names = sorted({key for r in records for key, _ in r.attrs})
        rows = []
        for r in records:
            attrs = r.attr_map
            rows.append(
                [
                    str(r.person),
                    r.event_start.isoformat(),
                    _format_value(r.event_end),
                    r.knowledge_date.isoformat(),
                    *(_format_value(attrs.get(name)) for name in attr_names),
                ]
            )
        frame = pd.DataFrame(rows, columns=[*_BASE_COLUMNS, *attr_names], dtype=str)
        path = directory / f"{source.value}.csv"
        frame.to_csv(path, index=False, encoding="utf-8")
        files[source.value] = path.name
        counts[source.value] = len(records)
        written.append(path)

    demo = pd.DataFrame(
        [
            [str(s.person), s.collected_on.isoformat(), s.gender, s.race, s.birthdate.isoformat()]
            for s in log.snapshots
        ],
        columns=["person_id", "collected_on", "gender", "race", "birthdate"],
        dtype=str,
    )
    demo_path = directory / _DEMOGRAPHICS_NAME
    demo.to_csv(demo_path, index=False, encoding="utf-8")
    written.append(demo_path)

    horizon = log.horizon
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "horizon": horizon.isoformat() if horizon is not None else None,
        "files": files,
        "record_counts": counts,
        "demographics": _DEMOGRAPHICS_NAME,
    }
    manifest_path = directory / _MANIFEST_NAME
    manifest_path.write_text(yaml.safe_dump(manifest, sort_keys=True), encoding="utf-8")
    written.append(manifest_path)
    logger.info("Wrote %s event file(s) to %s", len(files), directory)
    return written


def _read_csv(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as exc:
        raise StoreError(f"Event file not found: {path}") from exc
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise StoreError(f"Failed to parse {path}: {exc}") from exc


def read_event_files(directory: Path) -> IngestResult:
    """Load an interchange directory written by :func:`write_event_files`.

    Rows that cannot be parsed are rejected alongside the ingest rejections;
    record rejection indexes count rows across the event files in manifest
    order; snapshot rejection indexes are rows of the demographics file.

    Raises
    ------
    StoreError
        If the manifest is missing or unreadable, or a listed file is absent.
    """
    manifest_path = directory / _MANIFEST_NAME
    try:
        manifest = yaml.safe_load(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise StoreError(f"Event manifest not found: {manifest_path}") from exc
    except yaml.YAMLError as exc:
        raise StoreError(f"Failed to parse {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("schema_version") != SCHEMA_VERSION:
        raise StoreError(f"Unsupported event manifest in {directory}")

    records: list[EventRecord] = []
    positions: list[int] = []
    parse_rejections: list[Rejection] = []
    row_index = 0
    for source_name, filename in sorted((manifest.get("files") or {}).items()):
        frame = _read_csv(directory / filename)
        attr_names = [c for c in frame.columns if c not in _BASE_COLUMNS]
        for row in frame.itertuples(index=False):
            values = row._asdict()
            try:
                person_text = values["person_id"].strip()
                attrs = {
                    name: parsed
                    for name in attr_names
                    if (parsed := _parse_attr(name, values[name])) is not None
                }
                record = EventRecord(
                    person=int(person_text) if person_text else None,  # type: ignore[arg-type]
                    source=source_name,  # type: ignore[arg-type]
                    event_start=_parse_date(values["event_start"]),  # type: ignore[arg-type]
                    event_end=_parse_date(values["event_end"]),
                    knowledge_date=_parse_date(values["knowledge_date"]),  # type: ignore[arg-type]
                    attrs=tuple(sorted(attrs.items())),
                )
            except (StoreError, ValueError) as exc:
                parse_rejections.append(Rejection(row_index, f"malformed row: {exc}"))
            else:
                records.append(record)
                positions.append(row_index)
            row_index += 1

    snapshots: list[DemographicSnapshot] = []
    snapshot_positions: list[int] = []
    demo_name = manifest.get("demographics")
    if demo_name:
        demo = _read_csv(directory / demo_name)
        for index, row in enumerate(demo.itertuples(index=False)):
            try:
                snapshots.append(
                    DemographicSnapshot(
                        person=int(row.person_id),
                        collected_on=_parse_date(row.collected_on),  # type: ignore[arg-type]
                        gender=row.gender or "unknown",
                        race=row.race or "unknown",
                        birthdate=_parse_date(row.birthdate),  # type: ignore[arg-type]
                    )
                )
            except (StoreError, ValueError) as exc:
                parse_rejections.append(Rejection(index, f"malformed row: {exc}", kind="snapshot"))
            else:
                snapshot_positions.append(index)

    horizon_text = manifest.get("horizon")
    horizon = _parse_date(str(horizon_text)) if horizon_text else None
    result = ingest(records, snapshots, horizon=horizon)
    file_rows = {"record": positions, "snapshot": snapshot_positions}
    remapped = tuple(
        Rejection(file_rows[r.kind][r.index], r.reason, kind=r.kind) for r in result.rejected
    )
    return IngestResult(
        log=result.log,
        accepted=result.accepted,
        rejected=tuple(sorted((*parse_rejections, *remapped), key=lambda r: (r.kind, r.index))),
        duplicates=result.duplicates,
    )
