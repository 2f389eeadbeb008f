"""Heuristic rankers compared against the learners.

Each baseline reduces a person's visible history to one key and ranks on
it.  Scores are ``rank / (n + 1)`` with average ranks for ties, so only the
induced order carries meaning.  Rows without a key (never homeless for B1,
no Order for Possession for B3, ...) rank strictly below every keyed row.
"""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import date

import numpy as np
from dateutil.relativedelta import relativedelta
from scipy.stats import rankdata

from eviction_triage.cohort import CohortRow, lookback_window
from eviction_triage.config import BaselineKind, CohortSpec
from eviction_triage.store import AsOfView, Episode, EventSource, ViewFactory

logger = logging.getLogger(__name__)

# Non-homelessness county programs.
PROGRAM_SOURCES: tuple[EventSource, ...] = (
    EventSource.program_spell,
    EventSource.public_housing,
    EventSource.mental_behavioral_health,
    EventSource.cyf,
)

_DIRECTIONS: dict[BaselineKind, str] = {
    BaselineKind.B1_PrevHomelessness: "more recent homelessness interaction ranks higher",
    BaselineKind.B2_Baserate: "uniform random order",
    BaselineKind.B3_EarliestOFP: "earlier Order for Possession ranks higher",
    BaselineKind.B4_AgeFirstInteraction: "younger at first program interaction ranks higher",
    BaselineKind.B5_AgeFirstAdultInteraction: (
        "younger at first adult program interaction ranks higher"
    ),
    BaselineKind.B6_DaysSinceFiling: "more days since the current filing ranks higher",
    BaselineKind.B7_DaysSinceProgram: "more recent program interaction ranks higher",
    BaselineKind.B8_NumDistinctPrograms: "more distinct programs ranks higher",
    BaselineKind.B9_NumProgramSpells: "more program spells ranks higher",
    BaselineKind.B10_TotalProgramDays: "more total program days ranks higher",
}


@dataclass(frozen=True)
class BaselineSpec:
    """One baseline ranker."""

    kind: BaselineKind
    seed: int = 0
    cohort: CohortSpec = CohortSpec()

    @property
    def direction(self) -> str:
        return _DIRECTIONS[self.kind]

    @property
    def model_id(self) -> str:
        return self.kind.value


# ---------------------------------------------------------------------------
# Keys
# ---------------------------------------------------------------------------


def _last_touch(episodes: Sequence[Episode], as_of: date) -> date | None:
    touches = [min(ep.end, as_of) if ep.end is not None else ep.start for ep in episodes]
    return max(touches) if touches else None


def _program_episodes(view: AsOfView, person: int) -> list[Episode]:
    return [ep for source in PROGRAM_SOURCES for ep in view.episodes(person, source)]


def _program_label(ep: Episode) -> str:
    for attr in ("program_type", "housing_type", "service_type"):
        value = ep.attrs.get(attr)
        if value is not None:
            return f"{ep.source.value}:{value}"
    return ep.source.value


def _seeded_uniform(seed: int, person: int, as_of: date) -> float:
    message = f"B2:{seed}:{person}:{as_of.isoformat()}".encode()
    digest = hashlib.blake2b(message, digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def _key(spec: BaselineSpec, view: AsOfView, person: int) -> float | None:
    as_of = view.as_of
    kind = spec.kind

    if kind is BaselineKind.B1_PrevHomelessness:
        episodes = [ep for s in spec.cohort.homelessness_sources for ep in view.episodes(person, s)]
        last = _last_touch(episodes, as_of)
        return None if last is None else float(last.toordinal())

    if kind is BaselineKind.B2_Baserate:
        return _seeded_uniform(spec.seed, person, as_of)

    if kind in (BaselineKind.B3_EarliestOFP, BaselineKind.B6_DaysSinceFiling):
        cases = view.episodes(person, EventSource.eviction, lookback_window(as_of, spec.cohort))
        if kind is BaselineKind.B6_DaysSinceFiling:
            return float((as_of - max(ep.start for ep in cases)).days) if cases else None
        ofps = [ep.attrs["ofp_date"] for ep in cases if isinstance(ep.attrs.get("ofp_date"), date)]
        return -float(min(ofps).toordinal()) if ofps else None  # type: ignore[type-var, union-attr]

    programs = _program_episodes(view, person)

    if kind in (BaselineKind.B4_AgeFirstInteraction, BaselineKind.B5_AgeFirstAdultInteraction):
        snap = view.demographics(person)
        if snap is None:
            return None
        starts = [ep.start for ep in programs]
        if kind is BaselineKind.B5_AgeFirstAdultInteraction:
            adult_on = snap.birthdate + relativedelta(years=18)
            starts = [d for d in starts if d >= adult_on]
        return -float((min(starts) - snap.birthdate).days) if starts else None

    if kind is BaselineKind.B7_DaysSinceProgram:
        last = _last_touch(programs, as_of)
        return None if last is None else float(last.toordinal())
    if kind is BaselineKind.B8_NumDistinctPrograms:
        return float(len({_program_label(ep) for ep in programs}))
    if kind is BaselineKind.B9_NumProgramSpells:
        return float(len(programs))
    if kind is BaselineKind.B10_TotalProgramDays:
        return float(
            sum(((min(ep.end, as_of) if ep.end else as_of) - ep.start).days + 1 for ep in programs)
        )
    raise ValueError(f"unknown baseline kind {kind}")


def baseline_keys(
    spec: BaselineSpec, rows: Sequence[CohortRow], view_factory: ViewFactory
) -> np.ndarray:
    """Raw key per row (higher ranks higher); ``nan`` where the key is absent."""
    views: dict[date, AsOfView] = {}
    keys = np.full(len(rows), np.nan)
    for i, row in enumerate(rows):
        view = views.get(row.as_of)
        if view is None:
            view = views[row.as_of] = view_factory(row.as_of)
        value = _key(spec, view, row.person)
        if value is not None:
            keys[i] = value
    return keys


def keys_to_scores(keys: np.ndarray) -> np.ndarray:
    """Average ranks over ``n + 1``; absent keys share the lowest ranks."""
    n = len(keys)
    missing = np.isnan(keys)
    ranks = np.empty(n, dtype=np.float64)
    n_missing = int(missing.sum())
    if n_missing:
        ranks[missing] = (n_missing + 1) / 2.0
    if n_missing < n:
        ranks[~missing] = n_missing + rankdata(keys[~missing], method="average")
    return ranks / (n + 1)


def baseline_score(
    spec: BaselineSpec, rows: Sequence[CohortRow], view_factory: ViewFactory
) -> np.ndarray:
    """Scores in ``(0, 1)`` for *rows*, each from a view at its own as-of date."""
    keys = baseline_keys(spec, rows, view_factory)
    logger.debug(
        "%s: %s of %s row(s) keyed",
        spec.model_id,
        int((~np.isnan(keys)).sum()),
        len(rows),
        extra={"model": spec.model_id},
    )
    return keys_to_scores(keys)
