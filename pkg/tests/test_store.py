"""Unit tests for eviction_triage.store module."""

from __future__ import annotations

from datetime import date
from pathlib import Path

import pytest

from eviction_triage.store import (
    DemographicSnapshot,
    EventLog,
    EventRecord,
    EventSource,
    FutureWindowError,
    StoreError,
    as_of,
    demographics_as_of,
    ingest,
    merge_episodes,
    query_events,
    read_event_files,
    write_event_files,
)

# ---------------------------------------------------------------------------
# Helpers / fixtures
# ---------------------------------------------------------------------------


def _filing(person: int, filed: date, known: date, **attrs: object) -> EventRecord:
    return EventRecord.create(
        person, EventSource.eviction, filed, known, **attrs  # type: ignore[arg-type]
    )


@pytest.fixture()
def eviction_case() -> list[EventRecord]:
    """One eviction case recorded as filing, hearing and OFP stages."""
    filed = date(2018, 3, 1)
    return [
        _filing(1, filed, date(2018, 3, 3), episode_id="ev-1", stage="filing", amount_owed=1250.0),
        _filing(
            1,
            filed,
            date(2018, 4, 2),
            episode_id="ev-1",
            stage="hearing",
            hearing_date=date(2018, 4, 1),
            hearing_outcome="landlord",
        ),
        _filing(
            1, filed, date(2018, 4, 20), episode_id="ev-1", stage="ofp", ofp_date=date(2018, 4, 18)
        ),
    ]


@pytest.fixture()
def small_log(eviction_case: list[EventRecord]) -> EventLog:
    program = EventRecord.create(
        1,
        EventSource.program_spell,
        date(2016, 5, 1),
        date(2016, 5, 1),
        event_end=date(2016, 9, 30),
        program_type="food_assistance",
    )
    other = _filing(2, date(2018, 2, 10), date(2018, 2, 12), episode_id="ev-2", stage="filing")
    snaps = [
        DemographicSnapshot(1, date(2016, 5, 1), "female", "black", date(1985, 6, 1)),
        DemographicSnapshot(1, date(2018, 3, 1), "female", "white", date(1985, 6, 1)),
    ]
    return ingest([*eviction_case, program, other], snaps).log


# ---------------------------------------------------------------------------
# Point-in-time visibility
# ---------------------------------------------------------------------------


def test_record_known_after_as_of_is_invisible() -> None:
    """A filing entered the day after the as-of date is not visible at it."""
    record = _filing(7, date(2018, 12, 31), date(2019, 1, 2))
    log = EventLog([record])

    before = as_of(log, date(2019, 1, 1))
    after = as_of(log, date(2019, 1, 2))
    window = (date(2018, 1, 1), date(2019, 1, 1))
    assert query_events(before, 7, EventSource.eviction, window) == []
    window = (date(2018, 1, 1), date(2019, 1, 2))
    assert query_events(after, 7, EventSource.eviction, window) == [record]


def test_future_window_raises(small_log: EventLog) -> None:
    view = small_log.view(date(2018, 6, 1))
    with pytest.raises(FutureWindowError, match="future window"):
        view.query_events(1, EventSource.eviction, (date(2018, 1, 1), date(2018, 6, 2)))


def test_inverted_window_raises(small_log: EventLog) -> None:
    view = small_log.view(date(2018, 6, 1))
    with pytest.raises(StoreError, match="after its end"):
        view.scan(EventSource.eviction, (date(2018, 5, 1), date(2018, 4, 1)))


def test_scan_returns_all_persons_in_window(small_log: EventLog) -> None:
    view = small_log.view(date(2018, 3, 5))
    found = view.scan(EventSource.eviction, (date(2018, 1, 1), date(2018, 3, 5)))
    assert sorted({r.person for r in found}) == [1, 2]
    assert all(r.knowledge_date <= date(2018, 3, 5) for r in found)


class TestEpisodes:
    """Stage merging as seen from different as-of dates."""

    def test_only_filing_visible_before_hearing_is_recorded(self, small_log: EventLog) -> None:
        episodes = small_log.view(date(2018, 3, 10)).episodes(1, EventSource.eviction)
        assert len(episodes) == 1
        episode = episodes[0]
        assert episode.stages == frozenset({"filing"})
        assert episode.start == date(2018, 3, 1)
        assert "ofp_date" not in episode.attrs
        assert episode.attrs["amount_owed"] == pytest.approx(1250.0)

    def test_all_stages_merge_once_known(self, small_log: EventLog) -> None:
        episode = small_log.view(date(2018, 5, 1)).episodes(1, EventSource.eviction)[0]
        assert episode.stages == frozenset({"filing", "hearing", "ofp"})
        assert episode.attrs["ofp_date"] == date(2018, 4, 18)
        assert episode.attrs["hearing_outcome"] == "landlord"
        assert "stage" not in episode.attrs

    def test_spell_end_and_covers(self, small_log: EventLog) -> None:
        spell = small_log.view(date(2018, 1, 1)).episodes(1, EventSource.program_spell)[0]
        assert spell.end == date(2016, 9, 30)
        assert spell.covers(date(2016, 7, 1))
        assert not spell.covers(date(2016, 10, 1))

    def test_window_filters_by_start(self, small_log: EventLog) -> None:
        view = small_log.view(date(2018, 5, 1))
        assert view.episodes(1, EventSource.eviction, (date(2017, 1, 1), date(2018, 2, 28))) == []
        spring = (date(2018, 3, 1), date(2018, 5, 1))
        assert len(view.episodes(1, EventSource.eviction, spring)) == 1

    def test_merge_without_episode_id_keeps_records_apart(self) -> None:
        records = [
            EventRecord.create(
                2, EventSource.physical_health_er, date(2017, 1, 5), date(2017, 1, 5)
            ),
            EventRecord.create(
                2, EventSource.physical_health_er, date(2017, 2, 5), date(2017, 2, 5)
            ),
            _filing(2, date(2017, 3, 1), date(2017, 3, 1),
                    episode_id="ev-2", stage="filing", amount_owed=500.0),
            _filing(2, date(2017, 3, 1), date(2017, 4, 1),
                    episode_id="ev-2", stage="hearing", amount_owed=650.0),
        ]
        episodes = merge_episodes(records)
        er, eviction = EventSource.physical_health_er, EventSource.eviction
        assert [e.source for e in episodes] == [er, er, eviction]
        assert episodes[2].attrs["amount_owed"] == pytest.approx(650.0)


def test_demographics_latest_snapshot_wins(small_log: EventLog) -> None:
    assert demographics_as_of(small_log.view(date(2015, 1, 1)), 1) is None
    earlier = demographics_as_of(small_log.view(date(2017, 1, 1)), 1)
    later = demographics_as_of(small_log.view(date(2018, 3, 1)), 1)
    assert earlier is not None and earlier.race == "black"
    assert later is not None and later.race == "white"


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------


class TestIngest:
    """Validation, deduplication and snapshot checks at ingest."""

    def test_malformed_records_are_rejected_with_position(self) -> None:
        good = _filing(1, date(2018, 1, 1), date(2018, 1, 2))
        rows = [
            good,
            EventRecord.create(
                2, EventSource.cyf, date(2018, 2, 1), date(2018, 2, 1), event_end=date(2018, 1, 1)
            ),
            _filing(3, date(2018, 3, 1), date(2018, 2, 27)),
            EventRecord(
                4, "bogus", date(2018, 1, 1), None, date(2018, 1, 1)  # type: ignore[arg-type]
            ),
            _filing(5, date(2018, 1, 1), date(2018, 1, 1), amount_owed=-5.0),
        ]
        result = ingest(rows)

        assert result.accepted == 1
        assert [(r.index, r.reason) for r in result.rejected] == [
            (1, "negative duration"),
            (2, "knowledge before event"),
            (3, "unknown source"),
            (4, "negative amount"),
        ]
        assert result.log.records == (good,)

    def test_string_source_is_coerced(self) -> None:
        record = EventRecord(
            1, "eviction", date(2018, 1, 1), None, date(2018, 1, 2)  # type: ignore[arg-type]
        )
        log = ingest([record]).log
        assert log.records[0].source is EventSource.eviction

    def test_identical_records_collapse(self) -> None:
        record = _filing(1, date(2018, 1, 1), date(2018, 1, 2))
        result = ingest([record, record, record])
        assert result.accepted == 1
        assert result.duplicates == 2
        assert len(result.log) == 1

    def test_append_to_base_counts_existing_as_duplicates(self) -> None:
        first = _filing(1, date(2018, 1, 1), date(2018, 1, 2))
        second = _filing(1, date(2018, 6, 1), date(2018, 6, 2))
        base = ingest([first]).log
        result = ingest([first, second], base=base)
        assert result.accepted == 1
        assert result.duplicates == 1
        assert len(result.log) == 2

    def test_snapshot_needs_matching_interaction(self) -> None:
        record = _filing(1, date(2018, 1, 1), date(2018, 1, 2))
        snaps = [
            DemographicSnapshot(1, date(2018, 1, 1), "male", "white", date(1990, 1, 1)),
            DemographicSnapshot(1, date(2018, 1, 5), "male", "white", date(1990, 1, 1)),
        ]
        result = ingest([record], snaps)
        assert len(result.log.snapshots) == 1
        assert [(r.kind, r.index, r.reason) for r in result.rejected] == [
            ("snapshot", 1, "snapshot without interaction")
        ]


# ---------------------------------------------------------------------------
# Log-level operations
# ---------------------------------------------------------------------------


def test_horizon_explicit_or_latest_knowledge(small_log: EventLog) -> None:
    assert small_log.horizon == date(2018, 4, 20)
    assert EventLog(small_log.records, horizon=date(2019, 1, 1)).horizon == date(2019, 1, 1)
    assert EventLog().horizon is None


def test_truncated_drops_later_knowledge(small_log: EventLog) -> None:
    cut = small_log.truncated(date(2018, 3, 31))
    assert cut.horizon == date(2018, 3, 31)
    assert all(r.knowledge_date <= date(2018, 3, 31) for r in cut)
    assert len(cut) == len(small_log) - 2
    assert all(s.collected_on <= date(2018, 3, 31) for s in cut.snapshots)


def test_persons_sorted(small_log: EventLog) -> None:
    assert small_log.persons == (1, 2)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def test_event_files_reload_without_rejections(small_log: EventLog, tmp_path: Path) -> None:
    """Files written for a log read back as the same log with nothing rejected."""
    written = write_event_files(small_log, tmp_path / "raw")
    assert (tmp_path / "raw" / "manifest.yaml") in written
    assert (tmp_path / "raw" / "eviction.csv").exists()

    result = read_event_files(tmp_path / "raw")
    assert result.rejected == ()
    assert result.log.records == small_log.records
    assert result.log.snapshots == small_log.snapshots
    assert result.log.horizon == small_log.horizon


def test_malformed_csv_row_is_rejected(small_log: EventLog, tmp_path: Path) -> None:
    write_event_files(small_log, tmp_path)
    path = tmp_path / "eviction.csv"
    text = path.read_text(encoding="utf-8")
    path.write_text(text.replace("2018-02-12", "2018-02-31"), encoding="utf-8")

    result = read_event_files(tmp_path)
    assert len(result.rejected) == 1
    assert result.rejected[0].reason.startswith("malformed row")
    assert len(result.log) == len(small_log) - 1


def test_snapshot_rejections_point_at_file_rows(small_log: EventLog, tmp_path: Path) -> None:
    """An unparseable demographics row does not shift positions of later rejections."""
    write_event_files(small_log, tmp_path)
    (tmp_path / "demographics.csv").write_text(
        "person_id,collected_on,gender,race,birthdate\n"
        "1,2016-05-01,female,black,1985-13-01\n"
        "1,2016-05-01,female,black,1985-06-01\n"
        "1,2017-07-07,female,black,1985-06-01\n",
        encoding="utf-8",
    )

    result = read_event_files(tmp_path)
    assert [(r.kind, r.index) for r in result.rejected] == [("snapshot", 0), ("snapshot", 2)]
    assert result.rejected[0].reason.startswith("malformed row")
    assert result.rejected[1].reason == "snapshot without interaction"
    assert len(result.log.snapshots) == 1


def test_missing_manifest_raises(tmp_path: Path) -> None:
    with pytest.raises(StoreError, match="manifest not found"):
        read_event_files(tmp_path)


def test_unsupported_manifest_raises(tmp_path: Path) -> None:
    (tmp_path / "manifest.yaml").write_text("schema_version: 99\n", encoding="utf-8")
    with pytest.raises(StoreError, match="Unsupported"):
        read_event_files(tmp_path)
