"""Point-in-time feature matrix construction.

Columns follow a ``source.aggregate.window`` grammar generated from the
:class:`~eviction_triage.config.FeatureSpec` alone, so the column set and its
order never depend on the data.  Every value is computed from an
:class:`~eviction_triage.store.AsOfView` at the row's own as-of date.

Windows are day counts ending on the as-of date (``3mo`` covers the 91 days
``as_of - 90 .. as_of``); ``all`` is the full visible history.  A missing
"days since" or inter-arrival value is the fixed ``sentinel_days`` with a
companion ``*_imputed`` flag set to 1.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from dateutil.relativedelta import relativedelta

from eviction_triage.cohort import CohortRow
from eviction_triage.config import Aggregate, FeatureSpec
from eviction_triage.store import (
    CATEGORY_LEVELS,
    SPELL_SOURCES,
    AsOfView,
    Episode,
    EventSource,
    ViewFactory,
)

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Exception
# ---------------------------------------------------------------------------


class FeatureError(Exception):
    """Raised for feature construction and matrix interchange failures."""


# ---------------------------------------------------------------------------
# Column schema
# ---------------------------------------------------------------------------

LIFETIME = "all"
_AMOUNT_ATTR: dict[EventSource, str] = {
    EventSource.eviction: "amount_owed",
    EventSource.rental_assistance_payment: "amount",
}
_GENDERS = ("female", "male", "unknown")
_RACES = ("black", "white", "other", "unknown")


@dataclass(frozen=True)
class ColumnMeta:
    """Provenance of one matrix column."""

    name: str
    source: str
    aggregate: str
    window: str
    kind: str = "numeric"


def _window_plan(spec: FeatureSpec) -> list[tuple[str, int | None]]:
    plan: list[tuple[str, int | None]] = list(zip(spec.windows, spec.window_days))
    if spec.include_lifetime:
        plan.append((LIFETIME, None))
    return plan


def _aggregate_names(source: EventSource, aggregate: Aggregate) -> list[tuple[str, str]]:
    """``(column aggregate name, kind)`` pairs produced by one aggregate family."""
    if aggregate is Aggregate.count:
        return [("count", "numeric")]
    if aggregate is Aggregate.days_since_last:
        return [("days_since_last", "numeric"), ("days_since_last_imputed", "flag")]
    if aggregate is Aggregate.inter_arrival:
        return [
            ("inter_arrival_min", "numeric"),
            ("inter_arrival_max", "numeric"),
            ("inter_arrival_avg", "numeric"),
            ("inter_arrival_imputed", "flag"),
        ]
    if aggregate is Aggregate.amount:
        if source not in _AMOUNT_ATTR:
            return []
        return [(f"amount_{stat}", "numeric") for stat in ("sum", "min", "max", "avg")]
    if aggregate is Aggregate.total_days:
        return [("total_days", "numeric")] if source in SPELL_SOURCES else []
    raise FeatureError(f"unknown aggregate '{aggregate}'")


def _categorical_columns(source: EventSource) -> list[str]:
    names: list[str] = []
    for attr, levels in CATEGORY_LEVELS.get(source, {}).items():
        names.extend(f"{attr}={level}" for level in (*levels, "unknown"))
    if source is EventSource.eviction:
        names.extend(["stage=hearing", "stage=ofp"])
    return names


def _column(source: str, aggregate: str, window: str, kind: str = "numeric") -> ColumnMeta:
    # Demographic columns carry no window suffix in their name.
    if source == "demographics":
        return ColumnMeta(f"{source}.{aggregate}", source, aggregate, window, kind)
    return ColumnMeta(f"{source}.{aggregate}.{window}", source, aggregate, window, kind)


def feature_columns(spec: FeatureSpec) -> tuple[ColumnMeta, ...]:
    """Ordered column schema for *spec*."""
    columns: list[ColumnMeta] = []
    for source in spec.sources:
        for label, _ in _window_plan(spec):
            for aggregate in spec.aggregates:
                for name, kind in _aggregate_names(source, aggregate):
                    columns.append(_column(source.value, name, label, kind))
        if spec.categoricals:
            for name in _categorical_columns(source):
                columns.append(_column(source.value, name, LIFETIME, "count"))
    if spec.demographics:
        columns.append(_column("demographics", "age", LIFETIME))
        columns.append(_column("demographics", "age_imputed", LIFETIME, "flag"))
        for gender in _GENDERS:
            columns.append(_column("demographics", f"gender={gender}", LIFETIME, "onehot"))
        for race in _RACES:
            columns.append(_column("demographics", f"race={race}", LIFETIME, "onehot"))
    return tuple(columns)


def schema_hash(columns: Sequence[str]) -> str:
    """SHA-256 over the ordered column names."""
    return hashlib.sha256("\n".join(columns).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Feature matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense feature values aligned to cohort rows.

    ``labels`` holds 0/1 per row, or ``None`` for an unlabeled matrix.
    """

    rows: tuple[CohortRow, ...]
    columns: tuple[ColumnMeta, ...]
    values: np.ndarray
    labels: np.ndarray | None = None
    sentinel_days: int = 0
    missingness: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.rows), len(self.columns)):
            raise FeatureError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.rows)} row(s) x {len(self.columns)} column(s)"
            )

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.column_names)

    @property
    def persons(self) -> np.ndarray:
        return np.array([r.person for r in self.rows], dtype=np.int64)

    def column(self, name: str) -> np.ndarray:
        """Values of column *name*."""
        try:
            index = self.column_names.index(name)
        except ValueError as exc:
            raise FeatureError(f"unknown column '{name}'") from exc
        return self.values[:, index]

    def select(self, mask: np.ndarray | Sequence[int]) -> FeatureMatrix:
        """Row subset by boolean mask or index list."""
        array = np.asarray(mask)
        index = np.flatnonzero(array) if array.dtype == bool else array.astype(np.int64)
        return FeatureMatrix(
            rows=tuple(self.rows[i] for i in index),
            columns=self.columns,
            values=self.values[index],
            labels=self.labels[index] if self.labels is not None else None,
            sentinel_days=self.sentinel_days,
            missingness=self.missingness,
        )

    @classmethod
    def stack(cls, matrices: Sequence[FeatureMatrix]) -> FeatureMatrix:
        """Concatenate matrices with identical schemas, in order."""
        if not matrices:
            raise FeatureError("cannot stack zero matrices")
        first = matrices[0]
        for other in matrices[1:]:
            if other.schema_hash != first.schema_hash:
                raise FeatureError("cannot stack matrices with different schemas")
        labeled = all(m.labels is not None for m in matrices)
        return cls(
            rows=tuple(r for m in matrices for r in m.rows),
            columns=first.columns,
            values=(
                np.vstack([m.values for m in matrices])
                if len(first.columns)
                else np.zeros((sum(len(m) for m in matrices), 0))
            ),
            labels=(
                np.concatenate([m.labels for m in matrices])  # type: ignore[misc]
                if labeled
                else None
            ),
            sentinel_days=first.sentinel_days,
            missingness=first.missingness,
        )


# ---------------------------------------------------------------------------
# Per-row computation
# ---------------------------------------------------------------------------


def _overlap_days(ep: Episode, lo: date | None, as_of: date) -> int:
    end = min(ep.end, as_of) if ep.end is not None else as_of
    start = ep.start if lo is None else max(ep.start, lo)
    return max((end - start).days + 1, 0)


def _source_features(
    view: AsOfView, person: int, source: EventSource, spec: FeatureSpec
) -> dict[str, float]:
    as_of = view.as_of
    sentinel = float(spec.sentinel_days)
    episodes = view.episodes(person, source)
    starts = np.array([(as_of - ep.start).days for ep in episodes], dtype=np.int64)
    amount_attr = _AMOUNT_ATTR.get(source)
    out: dict[str, float] = {}

    for label, days in _window_plan(spec):
        lo = None if days is None else as_of - relativedelta(days=days - 1)
        selected = [ep for ep, age in zip(episodes, starts) if days is None or age < days]
        ages = sorted(int(age) for age in starts if days is None or age < days)
        prefix = f"{source.value}."
        for aggregate in spec.aggregates:
            if aggregate is Aggregate.count:
                out[f"{prefix}count.{label}"] = float(len(selected))
            elif aggregate is Aggregate.days_since_last:
                out[f"{prefix}days_since_last.{label}"] = float(ages[0]) if ages else sentinel
                out[f"{prefix}days_since_last_imputed.{label}"] = 0.0 if ages else 1.0
            elif aggregate is Aggregate.inter_arrival:
                gaps = np.diff(ages) if len(ages) >= 2 else np.array([], dtype=np.int64)
                if len(gaps):
                    out[f"{prefix}inter_arrival_min.{label}"] = float(gaps.min())
                    out[f"{prefix}inter_arrival_max.{label}"] = float(gaps.max())
                    out[f"{prefix}inter_arrival_avg.{label}"] = float(gaps.mean())
                    out[f"{prefix}inter_arrival_imputed.{label}"] = 0.0
                else:
                    for stat in ("min", "max", "avg"):
                        out[f"{prefix}inter_arrival_{stat}.{label}"] = sentinel
                    out[f"{prefix}inter_arrival_imputed.{label}"] = 1.0
            elif aggregate is Aggregate.amount and amount_attr is not None:
                amounts = [
                    float(value)  # type: ignore[arg-type]
                    for ep in selected
                    if (value := ep.attrs.get(amount_attr)) is not None
                ]
                out[f"{prefix}amount_sum.{label}"] = float(math.fsum(amounts))
                out[f"{prefix}amount_min.{label}"] = min(amounts) if amounts else 0.0
                out[f"{prefix}amount_max.{label}"] = max(amounts) if amounts else 0.0
                out[f"{prefix}amount_avg.{label}"] = (
                    math.fsum(amounts) / len(amounts) if amounts else 0.0
                )
            elif aggregate is Aggregate.total_days and source in SPELL_SOURCES:
                out[f"{prefix}total_days.{label}"] = float(
                    sum(_overlap_days(ep, lo, as_of) for ep in episodes)
                )

    if spec.categoricals:
        counts: dict[str, float] = defaultdict(float)
        for ep in episodes:
            for attr, levels in CATEGORY_LEVELS.get(source, {}).items():
                value = ep.attrs.get(attr)
                if value is None and source is EventSource.eviction:
                    continue
                level = value if value in levels else "unknown"
                counts[f"{attr}={level}"] += 1
            if source is EventSource.eviction:
                for stage in ("hearing", "ofp"):
                    if stage in ep.stages:
                        counts[f"stage={stage}"] += 1
        for name in _categorical_columns(source):
            out[f"{source.value}.{name}.{LIFETIME}"] = counts.get(name, 0.0)
    return out


def _demographic_features(view: AsOfView, person: int) -> dict[str, float]:
    snap = view.demographics(person)
    out: dict[str, float] = {}
    if snap is None:
        out["demographics.age"] = 0.0
        out["demographics.age_imputed"] = 1.0
        gender, race = "unknown", "unknown"
    else:
        out["demographics.age"] = float(relativedelta(view.as_of, snap.birthdate).years)
        out["demographics.age_imputed"] = 0.0
        gender = snap.gender if snap.gender in _GENDERS else "unknown"
        race = snap.race if snap.race in _RACES else "unknown"
    for level in _GENDERS:
        out[f"demographics.gender={level}"] = 1.0 if gender == level else 0.0
    for level in _RACES:
        out[f"demographics.race={level}"] = 1.0 if race == level else 0.0
    return out


def row_features(view: AsOfView, person: int, spec: FeatureSpec) -> dict[str, float]:
    """Every feature of one person at ``view.as_of``, keyed by column name."""
    values: dict[str, float] = {}
    for source in spec.sources:
        values.update(_source_features(view, person, source, spec))
    if spec.demographics:
        values.update(_demographic_features(view, person))
    return values


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def build_matrix(
    rows: Iterable[CohortRow],
    view_factory: ViewFactory,
    spec: FeatureSpec,
    workers: int = 1,
) -> FeatureMatrix:
    """Compute the feature matrix for *rows*, each from a view at its own as-of date.

    Rows keep their input order; labels are carried over when every row has
    one.  The result is identical for any *workers* count.
    """
    rows = tuple(rows)
    columns = feature_columns(spec)
    names = [c.name for c in columns]
    views: dict[date, AsOfView] = {}
    for row in rows:
        if row.as_of not in views:
            views[row.as_of] = view_factory(row.as_of)

    def compute(row: CohortRow) -> list[float]:
        values = row_features(views[row.as_of], row.person, spec)
        return [values[name] for name in names]

    if workers > 1 and len(rows) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            data = list(executor.map(compute, rows))
    else:
        data = [compute(row) for row in rows]

    values = np.array(data, dtype=np.float64).reshape(len(rows), len(columns))
    labeled = bool(rows) and all(r.label is not None for r in rows)
    labels = np.array([int(bool(r.label)) for r in rows], dtype=np.int64) if labeled else None
    logger.debug("Built %s x %s feature matrix", len(rows), len(columns))
    return FeatureMatrix(
        rows=rows,
        columns=columns,
        values=values,
        labels=labels,
        sentinel_days=spec.sentinel_days,
        missingness={
            "days_since_last": "sentinel_days with days_since_last_imputed=1",
            "inter_arrival": "sentinel_days with inter_arrival_imputed=1",
            "age": "0 with age_imputed=1",
        },
    )


@dataclass(frozen=True)
class CharacteristicRatio:
    """Mean of one feature in the selection versus the rest."""

    feature: str
    mean_selected: float
    mean_rest: float
    ratio: float | None
    reason: str | None = None


def characteristic_ratios(
    matrix: FeatureMatrix, selection: Iterable[int]
) -> list[CharacteristicRatio]:
    """Per-feature ``mean(selected) / mean(rest)`` in column order.

    Ratios with a zero denominator are left undefined with a reason.

    Raises
    ------
    FeatureError
        If the selection is empty or covers every row.
    """
    index = sorted(set(selection))
    n = len(matrix)
    if not index or len(index) >= n:
        raise FeatureError("selection must be a nonempty proper subset of the matrix rows")
    if index[0] < 0 or index[-1] >= n:
        raise FeatureError("selection index out of range")
    mask = np.zeros(n, dtype=bool)
    mask[index] = True
    chosen = matrix.values[mask].mean(axis=0)
    rest = matrix.values[~mask].mean(axis=0)

    report: list[CharacteristicRatio] = []
    for col, sel_mean, rest_mean in zip(matrix.columns, chosen, rest):
        if rest_mean == 0:
            ratio = CharacteristicRatio(
                col.name, float(sel_mean), 0.0, None, "zero mean outside selection"
            )
        else:
            ratio = CharacteristicRatio(
                col.name, float(sel_mean), float(rest_mean), float(sel_mean / rest_mean)
            )
        report.append(ratio)
    return report


# ---------------------------------------------------------------------------
# Interchange
# ---------------------------------------------------------------------------


def _schema_path(path: Path) -> Path:
    return path.with_name(path.stem + ".schema.yaml")


def write_matrix(matrix: FeatureMatrix, path: Path) -> Path:
    """Write the matrix CSV and its sidecar schema; return the schema path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(matrix.values, columns=list(matrix.column_names))
    frame.insert(0, "label", [("" if r.label is None else int(r.label)) for r in matrix.rows])
    frame.insert(0, "as_of", [r.as_of.isoformat() for r in matrix.rows])
    frame.insert(0, "person_id", [r.person for r in matrix.rows])
    frame.to_csv(path, index=False, encoding="utf-8")

    schema = {
        "schema_hash": matrix.schema_hash,
        "sentinel_days": matrix.sentinel_days,
        "missingness": dict(matrix.missingness),
        "columns": [
            {
                "name": c.name,
                "source": c.source,
                "aggregate": c.aggregate,
                "window": c.window,
                "type": c.kind,
            }
            for c in matrix.columns
        ],
    }
    schema_path = _schema_path(path)
    schema_path.write_text(yaml.safe_dump(schema, sort_keys=False), encoding="utf-8")
    return schema_path


def read_matrix(path: Path, rows: Sequence[CohortRow] | None = None) -> FeatureMatrix:
    """Read a matrix written by :func:`write_matrix`.

    When *rows* (e.g. from the cohort export) are given they replace the
    minimal rows rebuilt from the CSV; they must match its persons and dates.

    Raises
    ------
    FeatureError
        If either file is missing, the schema hash does not match the header,
        or *rows* do not align.
    """
    try:
        schema = yaml.safe_load(_schema_path(path).read_text(encoding="utf-8"))
        frame = pd.read_csv(
            path, dtype={"as_of": str, "label": str}, keep_default_na=False, encoding="utf-8"
        )
    except FileNotFoundError as exc:
        raise FeatureError(f"Matrix file not found: {exc.filename}") from exc
    except (yaml.YAMLError, pd.errors.ParserError) as exc:
        raise FeatureError(f"Failed to read matrix {path}: {exc}") from exc

    columns = tuple(
        ColumnMeta(c["name"], c["source"], c["aggregate"], c["window"], c["type"])
        for c in schema["columns"]
    )
    names = [c.name for c in columns]
    if list(frame.columns[3:]) != names or schema_hash(names) != schema["schema_hash"]:
        raise FeatureError(f"Matrix {path} does not match its schema file")

    built = tuple(
        CohortRow(
            person=int(pid),
            as_of=date.fromisoformat(as_of),
            label=None if label == "" else label == "1",
        )
        for pid, as_of, label in zip(frame["person_id"], frame["as_of"], frame["label"])
    )
    if rows is not None:
        if [(r.person, r.as_of) for r in rows] != [(r.person, r.as_of) for r in built]:
            raise FeatureError(f"Cohort rows do not align with matrix {path}")
        built = tuple(rows)
    labeled = bool(built) and all(r.label is not None for r in built)
    return FeatureMatrix(
        rows=built,
        columns=columns,
        values=frame[names].to_numpy(dtype=np.float64).reshape(len(built), len(names)),
        labels=np.array([int(bool(r.label)) for r in built], dtype=np.int64) if labeled else None,
        sentinel_days=int(schema["sentinel_days"]),
        missingness=dict(schema.get("missingness") or {}),
    )
