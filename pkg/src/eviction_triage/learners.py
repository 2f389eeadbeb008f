"""Native learners: regularized logistic regression, CART and random forest.

All three families fit on rows put into a canonical (lexicographic) order
first, so predictions do not depend on the order of the training matrix.

- ``LR`` standardizes features on the training data and fits an
  unpenalized intercept.  The objective is the summed log-loss plus
  ``||w||^2 / (2C)`` (L2, solved with L-BFGS-B) or ``||w||_1 / C`` (L1,
  solved with proximal gradient and backtracking).
- ``DT`` grows a Gini tree; thresholds sit midway between consecutive
  distinct values and gain ties go to the lowest feature, then the lowest
  threshold.
- ``RF`` bags bootstrap samples and draws ``sqrt(p)`` candidate features per
  node, each tree from its own derived seed.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from eviction_triage.config import ModelFamily
from eviction_triage.features import FeatureMatrix

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Exceptions
# ---------------------------------------------------------------------------


class LearnerError(Exception):
    """Raised for invalid model specs, failed fits and unreadable models."""


class SchemaMismatchError(LearnerError):
    """Raised when a matrix does not carry the schema a model was trained on."""


class DegenerateLabelsError(LearnerError):
    """Raised when training labels contain a single class."""


class NotImplementedFamilyError(LearnerError):
    """Raised when fitting a family that is configurable but not implemented."""


# ---------------------------------------------------------------------------
# Model specs and grids
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1
_TOL = 1e-8
_MAX_ITER = 10_000
_BOOSTED = frozenset({ModelFamily.LGBM, ModelFamily.XGB, ModelFamily.ADABOOST})


def _positive_float(value: Any) -> float:
    number = float(value)
    if not number > 0 or not math.isfinite(number):
        raise ValueError("must be a positive finite number")
    return number


def _positive_int(value: Any) -> int:
    if isinstance(value, bool) or int(value) != value or int(value) <= 0:
        raise ValueError("must be a positive integer")
    return int(value)


_UNLIMITED = frozenset({"none", "no limit", "unlimited"})


def _depth(value: Any) -> int | None:
    if value is None or (isinstance(value, str) and value.strip().lower() in _UNLIMITED):
        return None
    return _positive_int(value)


def _split_size(value: Any) -> int:
    number = _positive_int(value)
    if number < 2:
        raise ValueError("must be at least 2")
    return number


def _penalty(value: Any) -> str:
    text = str(value).strip().lower()
    if text not in {"l1", "l2"}:
        raise ValueError("must be 'l1' or 'l2'")
    return text


def _max_features(value: Any) -> str | int:
    if isinstance(value, str) and value in {"sqrt", "all"}:
        return value
    return _positive_int(value)


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    raise ValueError("must be true or false")


def _text(value: Any) -> str:
    return str(value)


_PARAM_DOMAINS: dict[ModelFamily, dict[str, Callable[[Any], Any]]] = {
    ModelFamily.LR: {"C": _positive_float, "penalty": _penalty},
    ModelFamily.DT: {
        "max_depth": _depth,
        "min_samples_split": _split_size,
        "min_samples_leaf": _positive_int,
    },
    ModelFamily.RF: {
        "n_estimators": _positive_int,
        "max_depth": _depth,
        "min_samples_split": _split_size,
        "min_samples_leaf": _positive_int,
        "max_features": _max_features,
        "bootstrap": _bool,
    },
    ModelFamily.LGBM: {
        "boosting_type": _text,
        "n_estimators": _positive_int,
        "num_leaves": _positive_int,
        "max_depth": _depth,
        "learning_rate": _positive_float,
    },
    ModelFamily.XGB: {
        "booster": _text,
        "learning_rate": _positive_float,
        "n_estimators": _positive_int,
        "max_depth": _depth,
    },
    ModelFamily.ADABOOST: {"n_estimators": _positive_int, "learning_rate": _positive_float},
}

_DEFAULTS: dict[ModelFamily, dict[str, Any]] = {
    ModelFamily.LR: {"C": 1.0, "penalty": "l2"},
    ModelFamily.DT: {"max_depth": None, "min_samples_split": 2, "min_samples_leaf": 1},
    ModelFamily.RF: {
        "n_estimators": 200,
        "max_depth": None,
        "min_samples_split": 2,
        "min_samples_leaf": 1,
        "max_features": "sqrt",
        "bootstrap": True,
    },
    ModelFamily.LGBM: {},
    ModelFamily.XGB: {},
    ModelFamily.ADABOOST: {},
}

# Full model-selection grid, including the boosted families.
FULL_GRID: dict[ModelFamily, dict[str, list[Any]]] = {
    ModelFamily.LR: {"C": [0.001, 0.01, 0.1, 1], "penalty": ["l1", "l2"]},
    ModelFamily.DT: {"max_depth": [1, 2, 5, 10, None], "min_samples_split": [2, 10]},
    ModelFamily.RF: {
        "n_estimators": [1000, 5000, 10000],
        "max_depth": [5, 10, 25, 50],
        "min_samples_split": [10, 100],
        "min_samples_leaf": [10, 100],
    },
    ModelFamily.LGBM: {
        "boosting_type": ["dart"],
        "n_estimators": [100, 300, 500],
        "num_leaves": [31],
        "max_depth": [10, 100],
    },
    ModelFamily.XGB: {
        "booster": ["gbtree"],
        "learning_rate": [0.01, 0.1],
        "n_estimators": [100, 300],
        "max_depth": [5, 10, 40],
    },
}


@dataclass(frozen=True)
class ModelSpec:
    """Family, hyperparameters (as sorted pairs) and seed of one model."""

    family: ModelFamily
    hyperparams: tuple[tuple[str, Any], ...] = ()
    seed: int = 0

    @property
    def params(self) -> dict[str, Any]:
        """Hyperparameters with family defaults filled in."""
        return {**_DEFAULTS[self.family], **dict(self.hyperparams)}

    @property
    def model_id(self) -> str:
        return model_id(self)


def _format_param(value: Any) -> str:
    return "none" if value is None else str(value)


def model_id(spec: ModelSpec) -> str:
    """Stable identifier, e.g. ``LR-C=0.001-penalty=l2``."""
    parts = [f"{name}={_format_param(value)}" for name, value in spec.hyperparams]
    return "-".join([spec.family.value, *parts])


def make_spec(
    family: ModelFamily | str, hyperparams: dict[str, Any] | None = None, seed: int = 0
) -> ModelSpec:
    """Validate *hyperparams* against the family's domains and build a spec.

    Raises
    ------
    LearnerError
        On an unknown family, unknown parameter name or out-of-domain value.
    """
    try:
        family = ModelFamily(family)
    except ValueError as exc:
        raise LearnerError(f"unknown model family '{family}'") from exc
    domains = _PARAM_DOMAINS[family]
    checked: dict[str, Any] = {}
    for name, value in (hyperparams or {}).items():
        if name not in domains:
            raise LearnerError(f"unknown parameter '{name}' for family {family.value}")
        try:
            checked[name] = domains[name](value)
        except (TypeError, ValueError) as exc:
            raise LearnerError(f"invalid value {value!r} for {family.value}.{name}: {exc}") from exc
    return ModelSpec(family=family, hyperparams=tuple(sorted(checked.items())), seed=seed)


def expand_grid(
    family: ModelFamily | str, grid: dict[str, Sequence[Any]], seed: int = 0
) -> list[ModelSpec]:
    """Cartesian product of *grid*, parameters in name order, values in given order.

    Raises
    ------
    LearnerError
        On unknown parameter names, empty value lists or invalid values.
    """
    names = sorted(grid)
    for name in names:
        if len(grid[name]) == 0:
            raise LearnerError(f"empty value list for parameter '{name}'")
    specs = [
        make_spec(family, dict(zip(names, combo)), seed=seed)
        for combo in itertools.product(*(grid[name] for name in names))
    ]
    return specs


# ---------------------------------------------------------------------------
# Fitted models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    Rows go left when ``x[feature] <= threshold``.  ``value`` is the
    positive rate of the training samples reaching each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity_decrease: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index of every row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        rows = np.arange(X.shape[0])
        while active.any():
            idx = rows[active]
            current = node[idx]
            go_left = X[idx, self.feature[current]] <= self.threshold[current]
            node[idx] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict[str, list[Any]]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "impurity_decrease": self.impurity_decrease.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, list[Any]]) -> Tree:
        return cls(
            feature=np.asarray(data["feature"], dtype=np.int64),
            threshold=np.asarray(data["threshold"], dtype=np.float64),
            left=np.asarray(data["left"], dtype=np.int64),
            right=np.asarray(data["right"], dtype=np.int64),
            value=np.asarray(data["value"], dtype=np.float64),
            n_samples=np.asarray(data["n_samples"], dtype=np.int64),
            impurity_decrease=np.asarray(data["impurity_decrease"], dtype=np.float64),
        )


@dataclass(frozen=True)
class LinearParams:
    """Logistic regression weights on standardized inputs."""

    weights: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray

    def decision(self, X: np.ndarray) -> np.ndarray:
        return ((X - self.mean) / self.scale) @ self.weights + self.intercept


@dataclass(frozen=True)
class FittedModel:
    """Learned parameters plus the schema they were trained against."""

    spec: ModelSpec
    schema_hash: str
    feature_names: tuple[str, ...]
    linear: LinearParams | None = None
    trees: tuple[Tree, ...] = ()
    tree_seeds: tuple[int, ...] = ()
    loss_trace: tuple[float, ...] = ()
    n_train: int = 0
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def family(self) -> ModelFamily:
        return self.spec.family

    @property
    def model_id(self) -> str:
        return self.spec.model_id


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


def logistic_objective(
    params: np.ndarray, Z: np.ndarray, y: np.ndarray, C: float
) -> tuple[float, np.ndarray]:
    """L2-penalized summed log-loss and its gradient.

    ``params`` holds the weights followed by the intercept; the intercept is
    not penalized.
    """
    w, b = params[:-1], params[-1]
    margin = Z @ w + b
    loss = float(np.sum(np.logaddexp(0.0, margin) - y * margin) + w @ w / (2.0 * C))
    residual = expit(margin) - y
    grad = np.empty_like(params)
    grad[:-1] = Z.T @ residual + w / C
    grad[-1] = residual.sum()
    return loss, grad


def _smooth_loss(params: np.ndarray, Z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    w, b = params[:-1], params[-1]
    margin = Z @ w + b
    loss = float(np.sum(np.logaddexp(0.0, margin) - y * margin))
    residual = expit(margin) - y
    grad = np.concatenate([Z.T @ residual, [residual.sum()]])
    return loss, grad


def _soft_threshold(values: np.ndarray, amount: float) -> np.ndarray:
    return np.sign(values) * np.maximum(np.abs(values) - amount, 0.0)


def _fit_l1(Z: np.ndarray, y: np.ndarray, C: float) -> tuple[np.ndarray, list[float]]:
    """Proximal gradient with backtracking; every accepted step lowers the objective."""
    params = np.zeros(Z.shape[1] + 1)
    loss, grad = _smooth_loss(params, Z, y)
    objective = loss
    trace = [objective]
    # 1/L for the log-loss Hessian bound 0.25 * ||[Z 1]||_2^2.
    spectral = np.linalg.norm(np.column_stack([Z, np.ones(len(y))]), ord=2) if Z.size else 1.0
    step = 4.0 / max(spectral**2, 1e-12)
    for _ in range(_MAX_ITER):
        while True:
            candidate = params - step * grad
            candidate[:-1] = _soft_threshold(candidate[:-1], step / C)
            diff = candidate - params
            new_loss, new_grad = _smooth_loss(candidate, Z, y)
            if new_loss <= loss + grad @ diff + diff @ diff / (2.0 * step) + 1e-12:
                break
            step *= 0.5
        new_objective = new_loss + float(np.abs(candidate[:-1]).sum()) / C
        if new_objective > objective:
            break
        params, loss, grad = candidate, new_loss, new_grad
        change = objective - new_objective
        objective = new_objective
        trace.append(objective)
        if change <= _TOL * max(abs(objective), 1.0):
            break
    return params, trace


def _fit_l2(Z: np.ndarray, y: np.ndarray, C: float) -> tuple[np.ndarray, list[float]]:
    x0 = np.zeros(Z.shape[1] + 1)
    trace = [logistic_objective(x0, Z, y, C)[0]]

    def record(xk: np.ndarray) -> None:
        trace.append(logistic_objective(xk, Z, y, C)[0])

    result = minimize(
        logistic_objective,
        x0,
        args=(Z, y, C),
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"ftol": _TOL, "gtol": 1e-10, "maxiter": _MAX_ITER},
    )
    if not result.success:
        logger.warning("L-BFGS-B stopped early: %s", result.message)
    return np.asarray(result.x), trace


def _fit_lr(spec: ModelSpec, X: np.ndarray, y: np.ndarray) -> tuple[LinearParams, list[float]]:
    params = spec.params
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    yf = y.astype(np.float64)
    if params["penalty"] == "l1":
        solution, trace = _fit_l1(Z, yf, params["C"])
    else:
        solution, trace = _fit_l2(Z, yf, params["C"])
    return LinearParams(solution[:-1].copy(), float(solution[-1]), mean, scale), trace


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    features: Sequence[int],
    min_samples_leaf: int,
) -> tuple[int, float, float] | None:
    """Best ``(feature, threshold, impurity decrease)`` at a node, or ``None``."""
    n = len(idx)
    y_node = y[idx]
    total_pos = float(y_node.sum())
    parent = n * 2.0 * (total_pos / n) * (1.0 - total_pos / n)
    best: tuple[int, float, float] | None = None
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    for f in features:
        column = X[idx, f]
        order = np.argsort(column, kind="stable")
        xs = column[order]
        pos_left = np.cumsum(y_node[order])[:-1].astype(np.float64)
        valid = (xs[:-1] < xs[1:]) & (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
        if not valid.any():
            continue
        p_left = pos_left / n_left
        p_right = (total_pos - pos_left) / n_right
        child = n_left * 2.0 * p_left * (1.0 - p_left) + n_right * 2.0 * p_right * (1.0 - p_right)
        decrease = np.where(valid, parent - child, -np.inf)
        i = int(np.argmax(decrease))
        gain = float(decrease[i])
        if gain <= 1e-12:
            continue
        if best is None or gain > best[2] + 1e-12:
            threshold = (xs[i] + xs[i + 1]) / 2.0
            if threshold >= xs[i + 1]:
                threshold = xs[i]
            best = (int(f), float(threshold), gain)
    return best


def _sampled_split(
    X: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    n_candidates: int,
    min_samples_leaf: int,
    rng: np.random.Generator,
) -> tuple[int, float, float] | None:
    """Best split over a random feature subset of size *n_candidates*.

    When no sampled feature gives a valid split, further features are drawn
    in the same random order, one batch at a time, until one does or every
    feature has been tried.
    """
    order = rng.permutation(X.shape[1])
    for start in range(0, len(order), n_candidates):
        candidates = np.sort(order[start : start + n_candidates])
        split = _best_split(X, y, idx, candidates, min_samples_leaf)
        if split is not None:
            return split
    return None


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int | None,
    min_samples_split: int,
    min_samples_leaf: int,
    n_candidates: int,
    rng: np.random.Generator | None,
) -> Tree:
    p = X.shape[1]
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    n_samples: list[int] = []
    decrease: list[float] = []

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()) if len(idx) else 0.0)
        n_samples.append(len(idx))
        decrease.append(0.0)
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        rate = value[node]
        if (
            len(idx) < min_samples_split
            or (max_depth is not None and depth >= max_depth)
            or rate == 0.0
            or rate == 1.0
        ):
            continue
        if n_candidates >= p or rng is None:
            split = _best_split(X, y, idx, range(p), min_samples_leaf)
        else:
            split = _sampled_split(X, y, idx, n_candidates, min_samples_leaf, rng)
        if split is None:
            continue
        f, thr, gain = split
        go_left = X[idx, f] <= thr
        left_idx, right_idx = idx[go_left], idx[~go_left]
        feature[node], threshold[node], decrease[node] = f, thr, gain
        left[node] = new_node(left_idx)
        right[node] = new_node(right_idx)
        stack.append((right[node], right_idx, depth + 1))
        stack.append((left[node], left_idx, depth + 1))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
        n_samples=np.asarray(n_samples, dtype=np.int64),
        impurity_decrease=np.asarray(decrease, dtype=np.float64),
    )


def tree_seed(seed: int, index: int) -> int:
    """Derived seed of tree *index* of a forest seeded with *seed*."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _n_candidates(max_features: str | int, p: int) -> int:
    if max_features == "all":
        return p
    if max_features == "sqrt":
        return max(1, int(math.sqrt(p)))
    return min(int(max_features), p)


def _fit_forest(
    spec: ModelSpec, X: np.ndarray, y: np.ndarray, workers: int
) -> tuple[list[Tree], list[int]]:
    params = spec.params
    seeds = [tree_seed(spec.seed, t) for t in range(params["n_estimators"])]
    n_candidates = _n_candidates(params["max_features"], X.shape[1])

    def grow(seed: int) -> Tree:
        rng = np.random.default_rng(seed)
        if params["bootstrap"]:
            sample = np.sort(rng.integers(0, len(y), size=len(y)))
            Xs, ys = X[sample], y[sample]
        else:
            Xs, ys = X, y
        return _grow_tree(
            Xs, ys, params["max_depth"], params["min_samples_split"], params["min_samples_leaf"],
            n_candidates, rng,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            trees = list(executor.map(grow, seeds))
    else:
        trees = [grow(seed) for seed in seeds]
    return trees, seeds


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row order sorting ``(x_0, ..., x_p-1, y)`` lexicographically."""
    keys = np.column_stack([X, y]).T[::-1]
    return np.lexsort(keys)


def fit(spec: ModelSpec, train: FeatureMatrix, workers: int = 1) -> FittedModel:
    """Fit *spec* on the labeled matrix *train*.

    Raises
    ------
    NotImplementedFamilyError
        For the boosted families.
    DegenerateLabelsError
        If the labels contain only one class.
    LearnerError
        If the matrix is unlabeled or holds non-finite values.
    """
    if spec.family in _BOOSTED:
        raise NotImplementedFamilyError(f"model family {spec.family.value} is not implemented")
    if train.labels is None:
        raise LearnerError("training matrix has no labels")
    y = np.asarray(train.labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateLabelsError(
            f"degenerate labels: training data for {spec.model_id} has a single class"
        )
    if not np.isfinite(train.values).all():
        raise LearnerError("training matrix holds non-finite values")

    order = canonical_order(train.values, y)
    X = np.asfortranarray(train.values[order])
    y = y[order]
    common = {
        "spec": spec,
        "schema_hash": train.schema_hash,
        "feature_names": train.column_names,
        "n_train": len(y),
    }
    logger.debug("Fitting %s on %s row(s)", spec.model_id, len(y), extra={"model": spec.model_id})

    if spec.family is ModelFamily.LR:
        linear, trace = _fit_lr(spec, X, y)
        return FittedModel(linear=linear, loss_trace=tuple(trace), **common)
    if spec.family is ModelFamily.DT:
        params = spec.params
        tree = _grow_tree(
            X, y, params["max_depth"], params["min_samples_split"], params["min_samples_leaf"],
            X.shape[1], None,
        )
        return FittedModel(trees=(tree,), **common)
    trees, seeds = _fit_forest(spec, X, y, workers)
    return FittedModel(trees=tuple(trees), tree_seeds=tuple(seeds), **common)


def score(model: FittedModel, matrix: FeatureMatrix) -> np.ndarray:
    """Risk scores in ``[0, 1]`` for every row of *matrix*.

    Raises
    ------
    SchemaMismatchError
        If the matrix schema differs from the training schema.
    """
    if matrix.schema_hash != model.schema_hash:
        raise SchemaMismatchError(
            f"schema mismatch: {model.model_id} was trained on schema "
            f"{model.schema_hash[:12]}, matrix has {matrix.schema_hash[:12]}"
        )
    X = matrix.values
    if model.linear is not None:
        scores = expit(model.linear.decision(X))
    elif model.trees:
        scores = np.mean([tree.predict(X) for tree in model.trees], axis=0)
    else:
        raise LearnerError(f"model {model.model_id} has no learned parameters")
    return np.clip(np.asarray(scores, dtype=np.float64).reshape(len(matrix)), 0.0, 1.0)


def feature_importance(model: FittedModel) -> list[tuple[str, float]]:
    """Features ranked by normalized importance (ties by column order).

    LR uses ``|w|`` on standardized inputs; trees use the total Gini
    decrease, averaged over the forest after normalizing each tree.
    """
    p = len(model.feature_names)
    if model.linear is not None:
        raw = np.abs(model.linear.weights)
    else:
        raw = np.zeros(p)
        for tree in model.trees:
            per_tree = np.zeros(p)
            split = tree.feature >= 0
            np.add.at(per_tree, tree.feature[split], tree.impurity_decrease[split])
            total = per_tree.sum()
            if total > 0:
                raw += per_tree / total
    total = raw.sum()
    normalized = raw / total if total > 0 else raw
    order = sorted(range(p), key=lambda i: (-normalized[i], i))
    return [(model.feature_names[i], float(normalized[i])) for i in order]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(model: FittedModel, path: Path) -> None:
    """Write *model* as versioned JSON."""
    payload: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "spec": {
            "family": model.spec.family.value,
            "hyperparams": dict(model.spec.hyperparams),
            "seed": model.spec.seed,
        },
        "schema_hash": model.schema_hash,
        "feature_names": list(model.feature_names),
        "n_train": model.n_train,
        "loss_trace": list(model.loss_trace),
        "tree_seeds": list(model.tree_seeds),
        "linear": None,
        "trees": [tree.to_dict() for tree in model.trees],
    }
    if model.linear is not None:
        payload["linear"] = {
            "weights": model.linear.weights.tolist(),
            "intercept": model.linear.intercept,
            "mean": model.linear.mean.tolist(),
            "scale": model.linear.scale.tolist(),
        }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_model(path: Path) -> FittedModel:
    """Read a model written by :func:`save_model`.

    Raises
    ------
    LearnerError
        If the file is missing, malformed, or of another format version.
    """
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise LearnerError(f"Model file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise LearnerError(f"Failed to parse model file {path}: {exc}") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise LearnerError(f"Unsupported model format version in {path}")
    try:
        spec_data = payload["spec"]
        spec = make_spec(spec_data["family"], spec_data["hyperparams"], seed=int(spec_data["seed"]))
        linear_data = payload["linear"]
        linear = None
        if linear_data is not None:
            linear = LinearParams(
                weights=np.asarray(linear_data["weights"], dtype=np.float64),
                intercept=float(linear_data["intercept"]),
                mean=np.asarray(linear_data["mean"], dtype=np.float64),
                scale=np.asarray(linear_data["scale"], dtype=np.float64),
            )
        return FittedModel(
            spec=spec,
            schema_hash=str(payload["schema_hash"]),
            feature_names=tuple(payload["feature_names"]),
            linear=linear,
            trees=tuple(Tree.from_dict(t) for t in payload["trees"]),
            tree_seeds=tuple(int(s) for s in payload["tree_seeds"]),
            loss_trace=tuple(float(v) for v in payload["loss_trace"]),
            n_train=int(payload["n_train"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise LearnerError(f"Malformed model file {path}: {exc}") from exc
