"""Unit tests for eviction_triage.learners module."""

from __future__ import annotations

import json
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from eviction_triage.cohort import CohortRow
from eviction_triage.config import ModelFamily
from eviction_triage.features import ColumnMeta, FeatureMatrix
from eviction_triage.learners import (
    FULL_GRID,
    DegenerateLabelsError,
    FittedModel,
    LearnerError,
    NotImplementedFamilyError,
    SchemaMismatchError,
    Tree,
    expand_grid,
    feature_importance,
    fit,
    load_model,
    logistic_objective,
    make_spec,
    save_model,
    score,
)

AS_OF = date(2019, 1, 1)

# ---------------------------------------------------------------------------
# Helpers / fixtures
# ---------------------------------------------------------------------------


def _matrix(X: np.ndarray, y: np.ndarray | None = None, prefix: str = "f") -> FeatureMatrix:
    columns = tuple(
        ColumnMeta(f"{prefix}{j}.count.all", f"{prefix}{j}", "count", "all")
        for j in range(X.shape[1])
    )
    rows = tuple(
        CohortRow(i + 1, AS_OF, label=None if y is None else bool(y[i]))
        for i in range(X.shape[0])
    )
    return FeatureMatrix(
        rows=rows,
        columns=columns,
        values=np.asarray(X, dtype=np.float64),
        labels=None if y is None else np.asarray(y, dtype=np.int64),
    )


@pytest.fixture(scope="module")
def noisy() -> FeatureMatrix:
    """200 rows, 4 features, labels driven by the first two plus noise."""
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 4))
    logits = 1.5 * X[:, 0] - X[:, 1]
    y = (rng.random(200) < 1 / (1 + np.exp(-logits))).astype(np.int64)
    return _matrix(X, y)


def _walk(tree: Tree) -> list[tuple[int, int]]:
    """``(node, depth)`` pairs reachable from the root."""
    out: list[tuple[int, int]] = []
    stack = [(0, 0)]
    while stack:
        node, depth = stack.pop()
        out.append((node, depth))
        if tree.feature[node] >= 0:
            stack.append((int(tree.left[node]), depth + 1))
            stack.append((int(tree.right[node]), depth + 1))
    return out


# ---------------------------------------------------------------------------
# Specs and grids
# ---------------------------------------------------------------------------


class TestMakeSpec:
    """Hyperparameter validation and identifiers."""

    def test_model_id_is_stable(self) -> None:
        spec = make_spec("LR", {"penalty": "l2", "C": 0.001})
        assert spec.model_id == "LR-C=0.001-penalty=l2"
        assert make_spec(ModelFamily.DT, {"max_depth": None}).model_id == "DT-max_depth=none"

    def test_defaults_fill_params(self) -> None:
        params = make_spec("RF", {"n_estimators": 5}).params
        assert params["n_estimators"] == 5
        assert params["max_features"] == "sqrt"
        assert params["bootstrap"] is True

    @pytest.mark.parametrize(
        "family, hyperparams, fragment",
        [
            ("SVM", {}, "unknown model family"),
            ("LR", {"alpha": 1}, "unknown parameter"),
            ("LR", {"C": 0}, "LR.C"),
            ("LR", {"penalty": "l3"}, "LR.penalty"),
            ("DT", {"max_depth": 0}, "DT.max_depth"),
            ("DT", {"min_samples_split": 1}, "DT.min_samples_split"),
            ("RF", {"bootstrap": "yes"}, "RF.bootstrap"),
            ("RF", {"n_estimators": 2.5}, "RF.n_estimators"),
        ],
    )
    def test_invalid_specs_raise(
        self, family: str, hyperparams: dict[str, Any], fragment: str
    ) -> None:
        with pytest.raises(LearnerError, match=fragment):
            make_spec(family, hyperparams)


def test_full_grid_size() -> None:
    """The implemented families of the full grid expand to 8 + 10 + 48 specs."""
    sizes = {
        family: len(expand_grid(family, FULL_GRID[family]))
        for family in (ModelFamily.LR, ModelFamily.DT, ModelFamily.RF)
    }
    assert sizes == {ModelFamily.LR: 8, ModelFamily.DT: 10, ModelFamily.RF: 48}
    assert sum(sizes.values()) == 66


def test_expand_grid_order_and_empty_values() -> None:
    specs = expand_grid("LR", {"penalty": ["l1", "l2"], "C": [0.1, 1]})
    assert [s.model_id for s in specs] == [
        "LR-C=0.1-penalty=l1",
        "LR-C=0.1-penalty=l2",
        "LR-C=1.0-penalty=l1",
        "LR-C=1.0-penalty=l2",
    ]
    with pytest.raises(LearnerError, match="empty value list"):
        expand_grid("DT", {"max_depth": []})


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


def test_logistic_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(3)
    Z = rng.normal(size=(30, 3))
    y = (rng.random(30) < 0.4).astype(np.float64)
    params = rng.normal(size=4)
    _, grad = logistic_objective(params, Z, y, 0.5)

    eps = 1e-6
    def loss(at: np.ndarray) -> float:
        return logistic_objective(at, Z, y, 0.5)[0]

    numeric = np.array(
        [(loss(params + eps * e) - loss(params - eps * e)) / (2 * eps) for e in np.eye(4)]
    )
    np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-6)


class TestLogisticRegression:
    """Fitted LR optimality and loss traces."""

    def test_l2_solution_is_stationary(self, noisy: FeatureMatrix) -> None:
        model = fit(make_spec("LR", {"C": 1.0, "penalty": "l2"}), noisy)
        assert model.linear is not None
        Z = (noisy.values - model.linear.mean) / model.linear.scale
        params = np.concatenate([model.linear.weights, [model.linear.intercept]])
        assert noisy.labels is not None
        _, grad = logistic_objective(params, Z, noisy.labels.astype(np.float64), 1.0)
        assert np.linalg.norm(grad) < 0.05
        assert model.loss_trace[-1] <= model.loss_trace[0]

    def test_l1_trace_never_increases(self, noisy: FeatureMatrix) -> None:
        model = fit(make_spec("LR", {"C": 0.1, "penalty": "l1"}), noisy)
        trace = np.array(model.loss_trace)
        assert len(trace) > 1
        assert np.all(np.diff(trace) <= 1e-9)

    def test_l1_strong_penalty_zeroes_weights(self, noisy: FeatureMatrix) -> None:
        model = fit(make_spec("LR", {"C": 1e-6, "penalty": "l1"}), noisy)
        assert model.linear is not None
        assert np.all(model.linear.weights == 0.0)

    def test_signal_features_carry_weight(self, noisy: FeatureMatrix) -> None:
        model = fit(make_spec("LR", {"C": 1.0}), noisy)
        ranked = [name for name, _ in feature_importance(model)]
        assert set(ranked[:2]) == {"f0.count.all", "f1.count.all"}
        assert model.linear is not None
        assert model.linear.weights[0] > 0 > model.linear.weights[1]


# ---------------------------------------------------------------------------
# Decision trees and forests
# ---------------------------------------------------------------------------


def _exhaustive_stump(X: np.ndarray, y: np.ndarray) -> tuple[int, float]:
    """Best Gini stump by brute force; ties to the lowest feature, then threshold."""
    n = len(y)

    def gini_mass(labels: np.ndarray) -> float:
        if len(labels) == 0:
            return 0.0
        p = labels.mean()
        return len(labels) * 2 * p * (1 - p)

    parent = gini_mass(y)
    best: tuple[int, float, float] | None = None
    for f in range(X.shape[1]):
        values = np.unique(X[:, f])
        for lo, hi in zip(values, values[1:]):
            threshold = (lo + hi) / 2
            mask = X[:, f] <= threshold
            gain = parent - gini_mass(y[mask]) - gini_mass(y[~mask])
            if best is None or gain > best[2] + 1e-12:
                best = (f, float(threshold), gain)
    assert best is not None and n > 0
    return best[0], best[1]


def test_stump_matches_exhaustive_search() -> None:
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 3))
    y = (X[:, 2] > 0.3).astype(np.int64)
    model = fit(make_spec("DT", {"max_depth": 1}), _matrix(X, y))
    tree = model.trees[0]

    feature, threshold = _exhaustive_stump(X, y)
    assert tree.node_count == 3
    assert int(tree.feature[0]) == feature == 2
    assert float(tree.threshold[0]) == pytest.approx(threshold)
    assert sorted(tree.value[1:].tolist()) == [0.0, 1.0]


def test_stump_ties_go_to_lowest_feature() -> None:
    X = np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=np.float64)
    y = np.array([0, 0, 1, 1])
    tree = fit(make_spec("DT", {"max_depth": 1}), _matrix(X, y)).trees[0]
    assert int(tree.feature[0]) == 0
    assert float(tree.threshold[0]) == pytest.approx(0.5)


def test_tree_honors_size_and_depth_limits(noisy: FeatureMatrix) -> None:
    spec = make_spec("DT", {"max_depth": 4, "min_samples_split": 20, "min_samples_leaf": 7})
    tree = fit(spec, noisy).trees[0]
    for node, depth in _walk(tree):
        assert depth <= 4
        if tree.feature[node] >= 0:
            assert tree.n_samples[node] >= 20
        else:
            assert tree.n_samples[node] >= 7
    assert tree.node_count > 1


def test_single_full_tree_forest_equals_decision_tree(noisy: FeatureMatrix) -> None:
    dt = fit(make_spec("DT", {"max_depth": 5, "min_samples_split": 4}), noisy)
    rf = fit(
        make_spec(
            "RF",
            {
                "n_estimators": 1,
                "bootstrap": False,
                "max_features": "all",
                "max_depth": 5,
                "min_samples_split": 4,
            },
        ),
        noisy,
    )
    np.testing.assert_array_equal(score(dt, noisy), score(rf, noisy))


class TestForest:
    """Seeded bagging."""

    @pytest.fixture()
    def spec_params(self) -> dict[str, Any]:
        return {"n_estimators": 8, "max_depth": 4, "min_samples_leaf": 3}

    def test_same_seed_same_scores(self, noisy: FeatureMatrix, spec_params: dict[str, Any]) -> None:
        a = score(fit(make_spec("RF", spec_params, seed=4), noisy), noisy)
        b = score(fit(make_spec("RF", spec_params, seed=4), noisy), noisy)
        np.testing.assert_array_equal(a, b)

    def test_workers_do_not_change_scores(
        self, noisy: FeatureMatrix, spec_params: dict[str, Any]
    ) -> None:
        serial = fit(make_spec("RF", spec_params, seed=4), noisy)
        threaded = fit(make_spec("RF", spec_params, seed=4), noisy, workers=4)
        np.testing.assert_array_equal(score(serial, noisy), score(threaded, noisy))
        assert serial.tree_seeds == threaded.tree_seeds

    def test_different_seed_differs(
        self, noisy: FeatureMatrix, spec_params: dict[str, Any]
    ) -> None:
        a = fit(make_spec("RF", spec_params, seed=4), noisy)
        b = fit(make_spec("RF", spec_params, seed=5), noisy)
        assert a.tree_seeds != b.tree_seeds

    def test_unsplittable_sample_falls_back_to_other_features(self) -> None:
        """Only the last column separates the classes; every tree still finds it."""
        X = np.zeros((40, 6))
        X[:, 5] = np.arange(40)
        y = (np.arange(40) >= 20).astype(np.int64)
        params = {"n_estimators": 12, "max_features": 1, "bootstrap": False, "max_depth": 1}
        model = fit(make_spec("RF", params, seed=3), _matrix(X, y))
        assert [int(t.feature[0]) for t in model.trees] == [5] * 12
        np.testing.assert_array_equal(score(model, _matrix(X, y)), y.astype(np.float64))

    def test_importance_is_normalized(
        self, noisy: FeatureMatrix, spec_params: dict[str, Any]
    ) -> None:
        ranked = feature_importance(fit(make_spec("RF", spec_params, seed=4), noisy))
        weights = [w for _, w in ranked]
        assert sum(weights) == pytest.approx(1.0)
        assert weights == sorted(weights, reverse=True)


@pytest.mark.parametrize(
    "family, params",
    [("LR", {"C": 0.5}), ("DT", {"max_depth": 3}), ("RF", {"n_estimators": 3, "max_depth": 3})],
)
def test_row_order_does_not_change_model(
    noisy: FeatureMatrix, family: str, params: dict[str, Any]
) -> None:
    spec = make_spec(family, params, seed=2)
    permuted = noisy.select(np.random.default_rng(0).permutation(len(noisy)))
    np.testing.assert_allclose(
        score(fit(spec, noisy), noisy), score(fit(spec, permuted), noisy), atol=1e-9
    )


# ---------------------------------------------------------------------------
# Failure modes
# ---------------------------------------------------------------------------


def test_single_class_labels_raise() -> None:
    X = np.arange(10, dtype=np.float64).reshape(5, 2)
    with pytest.raises(DegenerateLabelsError, match="degenerate labels"):
        fit(make_spec("DT"), _matrix(X, np.zeros(5, dtype=np.int64)))


def test_boosted_family_not_implemented(noisy: FeatureMatrix) -> None:
    with pytest.raises(NotImplementedFamilyError, match="XGB"):
        fit(make_spec("XGB", {"n_estimators": 100}), noisy)


def test_unlabeled_training_matrix_raises() -> None:
    with pytest.raises(LearnerError, match="no labels"):
        fit(make_spec("LR"), _matrix(np.ones((3, 2))))


def test_scoring_other_schema_raises(noisy: FeatureMatrix) -> None:
    model = fit(make_spec("DT", {"max_depth": 2}), noisy)
    other = _matrix(noisy.values, prefix="g")
    with pytest.raises(SchemaMismatchError, match="schema mismatch"):
        score(model, other)


def test_scores_are_probabilities(noisy: FeatureMatrix) -> None:
    for spec in (make_spec("LR"), make_spec("DT"), make_spec("RF", {"n_estimators": 4})):
        scores = score(fit(spec, noisy), noisy)
        assert scores.shape == (len(noisy),)
        assert np.all((scores >= 0) & (scores <= 1))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "family, params",
    [("LR", {"C": 0.1, "penalty": "l1"}), ("RF", {"n_estimators": 3, "max_depth": 3})],
)
def test_saved_model_scores_identically(
    noisy: FeatureMatrix, tmp_path: Path, family: str, params: dict[str, Any]
) -> None:
    model = fit(make_spec(family, params, seed=9), noisy)
    path = tmp_path / "models" / f"{model.model_id}.json"
    save_model(model, path)
    loaded = load_model(path)

    assert isinstance(loaded, FittedModel)
    assert loaded.spec == model.spec
    assert loaded.tree_seeds == model.tree_seeds
    np.testing.assert_array_equal(score(loaded, noisy), score(model, noisy))


def test_load_model_missing_raises(tmp_path: Path) -> None:
    with pytest.raises(LearnerError, match="not found"):
        load_model(tmp_path / "absent.json")


def test_load_model_other_version_raises(tmp_path: Path) -> None:
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"format_version": 99}), encoding="utf-8")
    with pytest.raises(LearnerError, match="Unsupported model format"):
        load_model(path)
