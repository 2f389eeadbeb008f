"""Configuration schema and loader for eviction-triage.

Provides typed Pydantic v2 models representing the YAML experiment
configuration and a single public entry-point ``parse_config()`` that reads,
validates, and returns an ``ExperimentConfig`` instance.  Every model forbids
unknown keys so a typo fails before any compute starts.  All configuration
failures are surfaced as ``ConfigError``.
"""

from __future__ import annotations

import hashlib
import json
import re
from datetime import date
from enum import StrEnum
from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from eviction_triage.store import FEATURE_SOURCES, EventSource

# ---------------------------------------------------------------------------
# Default configuration path
# ---------------------------------------------------------------------------

_DEFAULT_CONFIG_PATH: Path = Path("~/.config/eviction-triage/config.yaml").expanduser()

# ---------------------------------------------------------------------------
# Exception
# ---------------------------------------------------------------------------


class ConfigError(Exception):
    """Raised for all configuration loading and validation failures."""


# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------


class ModelFamily(StrEnum):
    """Learner families of the model grid.

    Only ``LR``, ``DT`` and ``RF`` are implemented; the boosted families are
    accepted so that complete grid files load, and fail when fitted.
    """

    LR = "LR"
    DT = "DT"
    RF = "RF"
    LGBM = "LGBM"
    XGB = "XGB"
    ADABOOST = "ADABOOST"


class BaselineKind(StrEnum):
    """Heuristic rankers compared against the learners."""

    B1_PrevHomelessness = "B1_PrevHomelessness"
    B2_Baserate = "B2_Baserate"
    B3_EarliestOFP = "B3_EarliestOFP"
    B4_AgeFirstInteraction = "B4_AgeFirstInteraction"
    B5_AgeFirstAdultInteraction = "B5_AgeFirstAdultInteraction"
    B6_DaysSinceFiling = "B6_DaysSinceFiling"
    B7_DaysSinceProgram = "B7_DaysSinceProgram"
    B8_NumDistinctPrograms = "B8_NumDistinctPrograms"
    B9_NumProgramSpells = "B9_NumProgramSpells"
    B10_TotalProgramDays = "B10_TotalProgramDays"


class Aggregate(StrEnum):
    """Aggregate families generated per (source, window)."""

    count = "count"
    days_since_last = "days_since_last"
    amount = "amount"
    inter_arrival = "inter_arrival"
    total_days = "total_days"


class RctAssignment(StrEnum):
    """Treatment assignment mechanism of a simulated trial."""

    pure_random = "pure_random"
    quasi_random_funding_days = "quasi_random_funding_days"


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

_DURATION_RE = re.compile(r"^(\d+)(d|mo|y)$")


def duration_days(label: str) -> int:
    """Convert a window label (``"91d"``, ``"3mo"``, ``"1y"``) to a day count.

    Months are ``round(n * 365 / 12)`` days and years are ``365 * n`` days, so
    ``3mo`` is 91 days and ``5y`` is 1825 days.
    """
    match = _DURATION_RE.match(label.strip())
    if match is None:
        raise ValueError(f"'{label}' is not a duration like '91d', '3mo' or '1y'")
    n, unit = int(match.group(1)), match.group(2)
    if n <= 0:
        raise ValueError(f"duration '{label}' must be positive")
    if unit == "d":
        return n
    if unit == "mo":
        return round(n * 365 / 12)
    return 365 * n


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# Population (synthetic generator)
# ---------------------------------------------------------------------------


class DemographicMix(_Strict):
    """Marginal demographic composition of the simulated renter population."""

    p_female: float = Field(0.565, ge=0.0, le=1.0)
    p_black: float = Field(0.551, ge=0.0, le=1.0)
    p_white: float = Field(0.40, ge=0.0, le=1.0)
    p_race_unrecorded: float = Field(0.05, ge=0.0, le=1.0)
    p_gender_unrecorded: float = Field(0.01, ge=0.0, le=1.0)
    age_min: int = Field(16, ge=0)
    age_max: int = Field(70, ge=1)

    @model_validator(mode="after")
    def _check_race_mix(self) -> DemographicMix:
        if self.p_black + self.p_white > 1.0:
            raise ValueError("p_black + p_white must not exceed 1")
        if self.age_min >= self.age_max:
            raise ValueError("age_min must be below age_max")
        return self


def _default_intensities() -> dict[EventSource, float]:
    return {
        EventSource.eviction: 0.7,
        EventSource.program_spell: 0.35,
        EventSource.public_housing: 0.03,
        EventSource.mental_behavioral_health: 0.25,
        EventSource.physical_health_er: 0.45,
        EventSource.cyf: 0.10,
    }


class VulnerabilityModel(_Strict):
    """Links the latent vulnerability score to event intensities and hazard.

    ``homelessness_rate`` is the annual onset rate at vulnerability zero with
    no active risk factors; every multiplier applies while its condition holds.
    """

    source_loading: float = Field(0.5, ge=0.0)
    homelessness_rate: float = Field(0.0036, ge=0.0)
    homelessness_loading: float = Field(0.8, ge=0.0)
    prior_multiplier: float = Field(5.2, ge=1.0)
    crisis_multiplier: float = Field(1.5, ge=1.0)
    crisis_window_months: int = Field(6, gt=0)
    filing_multiplier: float = Field(2.0, ge=1.0)
    filing_window_months: int = Field(12, gt=0)
    first_time_hard_fraction: float = Field(0.3, ge=0.0, le=1.0)
    hard_expression: float = Field(0.2, ge=0.0, le=1.0)
    p_crisis: float = Field(0.35, ge=0.0, le=1.0)
    p_rehousing: float = Field(0.3, ge=0.0, le=1.0)
    mean_stay_months: float = Field(2.0, ge=1.0)


class MoratoriumConfig(_Strict):
    """Eviction moratorium window with its filing-rate multiplier."""

    start: date
    end: date
    filing_multiplier: float = Field(0.1, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_order(self) -> MoratoriumConfig:
        if self.end < self.start:
            raise ValueError("moratorium end precedes its start")
        return self


class AssistanceModel(_Strict):
    """Current first-come-first-served rental assistance process."""

    p_apply_given_filing: float = Field(0.3, ge=0.0, le=1.0)
    waitlist_capacity_per_month: int = Field(40, ge=0)
    treatment_risk_multiplier: float = Field(0.24, ge=0.0, le=1.0)
    payment_delay_days: int = Field(21, ge=0)
    waitlist_expiry_months: int = Field(3, gt=0)


class PopulationConfig(_Strict):
    """Parameters of one simulated population."""

    n_persons: int = Field(20000, gt=0)
    date_range: tuple[date, date] = (date(2013, 1, 1), date(2020, 12, 31))
    seed: int = 0
    demog_mix: DemographicMix = DemographicMix()
    base_intensities: dict[EventSource, float] = Field(default_factory=_default_intensities)
    vulnerability_model: VulnerabilityModel = VulnerabilityModel()
    moratorium: MoratoriumConfig | None = MoratoriumConfig(
        start=date(2020, 3, 15), end=date(2021, 8, 31), filing_multiplier=0.1
    )
    assistance_model: AssistanceModel = AssistanceModel()
    knowledge_lag_days: dict[EventSource, int] = Field(default_factory=dict)

    @field_validator("date_range")
    @classmethod
    def _check_range(cls, value: tuple[date, date]) -> tuple[date, date]:
        if value[1] <= value[0]:
            raise ValueError("date_range end must be after its start")
        return value

    @field_validator("base_intensities")
    @classmethod
    def _check_rates(cls, value: dict[EventSource, float]) -> dict[EventSource, float]:
        for source, rate in value.items():
            if rate < 0:
                raise ValueError(f"intensity for '{source}' must be >= 0")
        return value

    @field_validator("knowledge_lag_days")
    @classmethod
    def _check_lags(cls, value: dict[EventSource, int]) -> dict[EventSource, int]:
        for source, lag in value.items():
            if lag < 0:
                raise ValueError(f"knowledge lag for '{source}' must be >= 0")
        return value


# ---------------------------------------------------------------------------
# Cohort / features / splits
# ---------------------------------------------------------------------------


class CohortSpec(_Strict):
    """Inclusion/exclusion rules and label definition."""

    filing_lookback_months: int = Field(4, gt=0)
    label_span_months: int = Field(12, gt=0)
    exclude_active_shelter: bool = True
    exclude_unhoused_rehousing: bool = True
    homelessness_sources: tuple[EventSource, ...] = (EventSource.homelessness_service,)


class FeatureSpec(_Strict):
    """Feature grammar: sources x aggregates x windows, plus categoricals."""

    windows: tuple[str, ...] = ("3mo", "6mo", "1y", "2y", "3y", "4y", "5y")
    include_lifetime: bool = True
    sources: tuple[EventSource, ...] = FEATURE_SOURCES
    aggregates: tuple[Aggregate, ...] = tuple(Aggregate)
    categoricals: bool = True
    demographics: bool = True
    sentinel_days: int = Field(2923, gt=0)

    @field_validator("windows")
    @classmethod
    def _check_windows(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        days = [duration_days(label) for label in value]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError("windows must be sorted strictly ascending")
        return value

    @field_validator("aggregates")
    @classmethod
    def _check_aggregates(cls, value: tuple[Aggregate, ...]) -> tuple[Aggregate, ...]:
        if not value:
            raise ValueError("aggregate set must not be empty")
        return value

    @model_validator(mode="after")
    def _check_sentinel(self) -> FeatureSpec:
        if self.windows and self.sentinel_days <= max(self.window_days):
            raise ValueError("sentinel_days must exceed the longest window")
        return self

    @property
    def window_days(self) -> tuple[int, ...]:
        """Window lengths in days, in spec order."""
        return tuple(duration_days(label) for label in self.windows)


class SplitConfig(_Strict):
    """Temporal validation parameters."""

    data_start: date | None = None
    data_end: date | None = None
    n_splits: int | None = Field(4, gt=0)
    split_cadence_months: int = Field(3, gt=0)
    cadence_months: int = Field(3, gt=0)
    train_lookback_months: int | None = Field(None, gt=0)
    only: tuple[str, ...] | None = None


# ---------------------------------------------------------------------------
# Models / field validation
# ---------------------------------------------------------------------------


def _desk_grids() -> dict[ModelFamily, dict[str, list[Any]]]:
    return {
        ModelFamily.LR: {"C": [0.01, 0.1], "penalty": ["l2"]},
        ModelFamily.DT: {"max_depth": [5, 10], "min_samples_split": [10]},
        ModelFamily.RF: {
            "n_estimators": [200],
            "max_depth": [10],
            "min_samples_split": [10],
            "min_samples_leaf": [10],
        },
    }


class ModelGridConfig(_Strict):
    """Which learner families run, and their hyperparameter grids."""

    families: tuple[ModelFamily, ...] = (ModelFamily.LR, ModelFamily.DT, ModelFamily.RF)
    grids: dict[ModelFamily, dict[str, list[Any]]] = Field(default_factory=_desk_grids)

    @model_validator(mode="after")
    def _check_grids(self) -> ModelGridConfig:
        for family in self.families:
            if family not in self.grids:
                raise ValueError(f"no grid configured for family '{family}'")
            for name, values in self.grids[family].items():
                if not values:
                    raise ValueError(f"grid for {family}.{name} must not be empty")
        return self


class ShadowConfig(_Strict):
    """Shadow-mode deployment replay."""

    freeze_date: date
    horizon_months: int = Field(12, gt=0)
    family: ModelFamily = ModelFamily.RF
    hyperparams: dict[str, Any] = Field(default_factory=dict)


class RctConfig(_Strict):
    """Simulated randomized trial comparing current and model candidate sets."""

    as_of: date
    treatment_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    assignment: RctAssignment = RctAssignment.pure_random
    n_replications: int = Field(100, gt=0)
    family: ModelFamily = ModelFamily.RF
    hyperparams: dict[str, Any] = Field(default_factory=dict)


class ExperimentConfig(_Strict):
    """Root configuration object composed from all sub-configs."""

    population: PopulationConfig = PopulationConfig()
    cohort: CohortSpec = CohortSpec()
    features: FeatureSpec = FeatureSpec()
    splits: SplitConfig = SplitConfig()
    models: ModelGridConfig = ModelGridConfig()
    baselines: tuple[BaselineKind, ...] = (
        BaselineKind.B1_PrevHomelessness,
        BaselineKind.B2_Baserate,
        BaselineKind.B3_EarliestOFP,
    )
    k: int = Field(100, gt=0)
    moratorium: tuple[date, date] | None = None
    output_dir: Path = Path("runs/default")
    seed: int = 0
    workers: int = Field(1, gt=0)
    shadow: ShadowConfig | None = None
    rct: RctConfig | None = None

    @property
    def moratorium_window(self) -> tuple[date, date] | None:
        """Explicit window, else the population's moratorium window."""
        if self.moratorium is not None:
            return self.moratorium
        mor = self.population.moratorium
        return (mor.start, mor.end) if mor is not None else None

    @property
    def effective_population(self) -> PopulationConfig:
        """Population config with the experiment seed applied."""
        return self.population.model_copy(update={"seed": self.seed})


# ---------------------------------------------------------------------------
# Loader
# ---------------------------------------------------------------------------


def _extract_field_names(exc: ValidationError) -> str:
    """Return a human-readable list of failing field paths."""
    parts: list[str] = []
    for error in exc.errors():
        loc = " -> ".join(str(part) for part in error["loc"])
        parts.append(f"{loc}: {error['msg']}")
    return "; ".join(parts)


def validate_config(data: Any) -> ExperimentConfig:
    """Validate an already-parsed mapping into an :class:`ExperimentConfig`."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("Configuration root must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Configuration validation failed: {_extract_field_names(exc)}") from exc


def parse_config(path: Path = _DEFAULT_CONFIG_PATH) -> ExperimentConfig:
    """Read, parse, and validate the YAML configuration file at *path*.

    Raises
    ------
    ConfigError
        If the file is not found, contains invalid YAML, is empty, or fails
        validation (including unknown keys).
    """
    try:
        raw_text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found: {path}")

    try:
        data: Any = yaml.safe_load(raw_text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"Failed to parse YAML configuration: {exc}") from exc

    if data is None:
        raise ConfigError("Configuration file is empty")
    return validate_config(data)


def apply_overrides(config: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Return a re-validated copy of *config* with dotted-path overrides applied.

    String values are parsed as YAML scalars/sequences, so ``"0.5"`` becomes a
    float and ``"[LR, RF]"`` a list.
    """
    data = config.model_dump(mode="json")
    for path, raw in overrides.items():
        value = yaml.safe_load(raw) if isinstance(raw, str) else raw
        node: Any = data
        keys = path.split(".")
        for key in keys[:-1]:
            if not isinstance(node, dict):
                raise ConfigError(f"Cannot override '{path}': '{key}' is not a mapping")
            if node.get(key) is None:
                node[key] = {}
            node = node[key]
        if not isinstance(node, dict):
            raise ConfigError(f"Cannot override '{path}'")
        node[keys[-1]] = value
    return validate_config(data)


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form of *config*."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def dump_config(config: ExperimentConfig) -> str:
    """Serialize *config* as YAML (stable key order)."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True)


def config_template() -> str:
    """Return a commented YAML skeleton for ``eviction-triage template``."""
    return _CONFIG_TEMPLATE


_CONFIG_TEMPLATE: str = """\
# eviction-triage experiment configuration
# Pass with --config <path>; any key can be overridden with --set path=value.

seed: 7                      # master seed (population, learners, tie-breaking)
k: 100                       # list size (monthly intervention capacity)
output_dir: runs/desk        # run directory
workers: 2                   # thread pool size for split/tree parallelism

population:
  n_persons: 20000
  date_range: [2013-01-01, 2020-12-31]
  moratorium: {start: 2020-03-15, end: 2021-08-31, filing_multiplier: 0.1}
  assistance_model:
    p_apply_given_filing: 0.3
    waitlist_capacity_per_month: 40
    treatment_risk_multiplier: 0.24

cohort:
  filing_lookback_months: 4
  label_span_months: 12

features:
  windows: [3mo, 6mo, 1y, 2y, 3y, 4y, 5y]

splits:
  n_splits: 4
  split_cadence_months: 3
  cadence_months: 3

models:
  families: [LR, DT, RF]
  grids:
    LR: {C: [0.01, 0.1], penalty: [l2]}
    DT: {max_depth: [5, 10], min_samples_split: [10]}
    RF: {n_estimators: [200], max_depth: [10], min_samples_split: [10], min_samples_leaf: [10]}

baselines: [B1_PrevHomelessness, B2_Baserate, B3_EarliestOFP]

# shadow: {freeze_date: 2019-09-01, horizon_months: 12, family: RF}
# rct: {as_of: 2019-01-01, treatment_fraction: 0.5, assignment: pure_random}
"""
