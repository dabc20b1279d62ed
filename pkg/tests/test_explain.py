from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcmrisk.explain import (
    ExplainError, ShapMatrix, exact_shapley, linear_attribution, linear_margin_shap, path_dependent_shapley,
    pool_importance, sampling_shap_matrix, sampling_shapley, tree_shap,
)
from hcmrisk.models import ClassifierSpec, DecisionTree, LogisticModel, RandomForestModel, fit_classifier

from .helpers import random_tree_model


def hand_tree() -> DecisionTree:
    # root: x0 <= 0.5 ? (x1 <= 0.5 ? 0.1 : 0.4) : 0.9 ; feature 2 unused
    return DecisionTree(
        np.array([0, 1, -1, -1, -1]), np.array([0.5, 0.5, 0, 0, 0]), np.array([1, 3, -1, -1, -1]),
        np.array([2, 4, -1, -1, -1]), np.array([0.575, 0.25, 0.9, 0.1, 0.4]), np.array([4.0, 2, 2, 1, 1]))


def test_exact_examples():
    phi, base = exact_shapley(lambda Z: Z[:, 0] + Z[:, 1], np.array([2.0, 4.0]), np.array([[1.0, -1.0], [-1.0, 1.0]]))
    assert np.allclose(phi, [2, 4]) and base == 0
    bg = np.random.default_rng(0).normal(size=(30, 2))
    phi, _ = exact_shapley(lambda Z: Z[:, 0] * Z[:, 1], np.array([1.5, 1.5]), np.r_[bg, bg[:, ::-1]])
    assert phi[0] == pytest.approx(phi[1], abs=1e-12)


def test_exact_hand_table():
    t = hand_tree()
    # one background row (0,0,0); v({})=0.1, v({1})=0.4, v({0})=v({0,1})=0.9
    phi, base = exact_shapley(t.predict, np.ones(3), np.zeros((1, 3)))
    assert base == pytest.approx(0.1)
    assert np.allclose(phi, [0.65, 0.15, 0.0], atol=1e-15)


def test_exact_limit():
    with pytest.raises(ExplainError):
        exact_shapley(lambda Z: Z.sum(axis=1), np.zeros(16), np.zeros((1, 16)))


def test_tree_shap_examples():
    leaf = DecisionTree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([0.7]), np.ones(1))
    s = tree_shap(leaf, np.zeros((3, 4)))
    assert np.all(s.values == 0) and s.base_value == 0.7
    t = hand_tree()
    only2 = DecisionTree(np.array([2, -1, -1]), np.array([0.0, 0, 0]), np.array([1, -1, -1]), np.array([2, -1, -1]),
                         np.array([0.5, 0.2, 0.8]), np.array([2.0, 1, 1]))
    X = np.random.default_rng(1).normal(size=(10, 4))
    v = tree_shap(only2, X).values
    assert np.all(v[:, [0, 1, 3]] == 0) and np.all(v[:, 2] != 0)
    hs = tree_shap(t, np.array([[1.0, 1.0, 1.0]]))
    ref, base = path_dependent_shapley(t, np.array([1.0, 1.0, 1.0]))
    assert np.allclose(hs.values[0], ref, atol=1e-15) and hs.base_value == pytest.approx(base)
    with pytest.raises(ExplainError):
        tree_shap(LogisticModel(np.zeros(2), 0.0, {}, 0, 2), X[:, :2])


def test_tree_shap_matches_enumeration_8_feature_forest():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(200, 8))
    y = (X[:, 0] + X[:, 1] * X[:, 2] > 0).astype(int)
    rf = fit_classifier(ClassifierSpec("rf", {"n_trees": 20, "max_depth": 6}, 3), X, y)
    S = tree_shap(rf, X[:50])
    worst = 0.0
    for i in range(50):
        ref, base = path_dependent_shapley(rf, X[i])
        worst = max(worst, np.abs(S.values[i] - ref).max())
        assert S.base_value == pytest.approx(base, abs=1e-12)
    assert worst <= 1e-9
    assert np.allclose(S.base_value + S.values.sum(axis=1), rf.predict_proba(X[:50]), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**30))
def test_tree_shap_equals_enumeration_property(seed):
    model, X, rng = random_tree_model(seed)
    x = rng.normal(size=X.shape[1])
    S = tree_shap(model, x[None, :])
    ref, _ = path_dependent_shapley(model, x)
    assert np.abs(S.values[0] - ref).max() <= 1e-9
    out = model.margin(x[None]) if model.kind == "gb" else model.predict_proba(x[None])
    assert S.base_value + S.values[0].sum() == pytest.approx(out[0], abs=1e-6)


def test_linear_attribution_examples():
    zero = LogisticModel(np.zeros(3), 0.0, {}, 0, 3)
    assert np.all(linear_attribution(zero).coefficients == 0)
    w = np.array([0.5, -1.25, 3.0])
    assert np.array_equal(linear_attribution(LogisticModel(w, 0.1, {}, 0, 3)).coefficients, w)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(100, 1))
    X = np.c_[x, x, rng.normal(size=(100, 1))]
    y = (x[:, 0] + rng.normal(size=100) > 0).astype(int)
    lr = fit_classifier(ClassifierSpec("lr"), X, y)
    c = linear_attribution(lr).coefficients
    assert c[0] == pytest.approx(c[1], abs=1e-9)
    with pytest.raises(ExplainError):
        linear_attribution(RandomForestModel((), {}, 0, 1))


def test_sampling_converges_to_exact():
    rng = np.random.default_rng(3)
    f = lambda Z: np.tanh(Z[:, 0] * Z[:, 1]) + Z[:, 2] ** 2 - Z[:, 3] * Z[:, 4] * Z[:, 5]  # noqa: E731
    B = rng.normal(size=(10, 6))
    x = rng.normal(size=6)
    exact, base = exact_shapley(f, x, B)
    phi, se, b2 = sampling_shapley(f, x, B, permutations=20_000, seed=11)
    assert b2 == pytest.approx(base)
    # the additive x2 term has SE 0, so allow rounding noise
    assert np.all(np.abs(phi - exact) <= 3 * se + 1e-12)


def test_sampling_additive_zero_variance_and_seeded():
    B = np.random.default_rng(4).normal(size=(8, 5))
    w = np.arange(1.0, 6.0)
    f = lambda Z: Z @ w  # noqa: E731
    x = np.ones(5)
    phi, se, _ = sampling_shapley(f, x, B, permutations=50, seed=1)
    assert np.all(se <= 1e-12) and np.allclose(phi, w * (x - B.mean(axis=0)))
    a = sampling_shapley(f, x + 1, B, 30, seed=9)
    b = sampling_shapley(f, x + 1, B, 30, seed=9)
    assert all(np.array_equal(u, v) for u, v in zip(a[:2], b[:2]))


def test_sampling_linear_fast_path_matches_generic(rng):
    X = rng.normal(size=(80, 4))
    y = (X[:, 0] > 0).astype(int)
    svm = fit_classifier(ClassifierSpec("svm"), X, y)
    fast = sampling_shapley(svm, X[0], X[:10], 200, seed=5)
    slow = sampling_shapley(lambda Z: svm.predict_proba(Z), X[0], X[:10], 200, seed=5)
    assert np.allclose(fast[0], slow[0], atol=1e-12) and np.allclose(fast[1], slow[1], atol=1e-12)


@pytest.mark.parametrize("kind", ["rf", "gb", "lr", "svm"])
def test_local_accuracy_all_methods(kind, rng):
    X = rng.normal(size=(120, 5))
    y = (X[:, 0] - X[:, 1] > 0).astype(int)
    small = {"rf": {"n_trees": 20}, "gb": {"n_rounds": 20}, "lr": {}, "svm": {}}[kind]
    m = fit_classifier(ClassifierSpec(kind, small, 1), X, y)
    E = X[:25]
    if kind in ("rf", "gb"):
        S = tree_shap(m, E)
        out = m.margin(E) if kind == "gb" else m.predict_proba(E)
    elif kind == "lr":
        S = linear_margin_shap(m, E, X)
        out = m.decision_function(E)
    else:
        S = sampling_shap_matrix(m, E, X[:30], permutations=20, seed=2)
        out = m.predict_proba(E)
    assert np.abs(S.base_value + S.values.sum(axis=1) - out).max() <= 1e-6


def test_pool_examples():
    rng = np.random.default_rng(5)
    vals = rng.normal(size=(20, 3)) * np.array([3.0, 1.0, 0.0])
    s = ShapMatrix(vals, 0.0, ("a", "b", "c"), "t", "probability", rng.normal(size=(20, 3)))
    one = pool_importance([s])
    five = pool_importance([s] * 5)
    assert one.order == five.order == (0, 1, 2)
    assert np.allclose(one.importance, five.importance)
    assert five.importance[2] == 0
    partial = ShapMatrix(vals[:, :2], 0.0, ("a", "b"), "t", "probability")
    pooled = pool_importance([s, partial], ["a", "b", "c"])
    assert pooled.importance[2] == 0
    with pytest.raises(ExplainError):
        pool_importance([])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**20), st.permutations(range(4)))
def test_pool_stable_under_fold_permutation(seed, perm):
    rng = np.random.default_rng(seed)
    folds = [ShapMatrix(rng.normal(size=(5, 3)), 0.0, ("a", "b", "c"), "t", "p", rng.normal(size=(5, 3)))
             for _ in range(4)]
    a = pool_importance(folds)
    b = pool_importance([folds[i] for i in perm])
    assert a.order == b.order and np.allclose(a.importance, b.importance) and np.all(a.importance >= 0)
    assert np.array_equal(a.direction, b.direction)


def test_signal_features_rank_top():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(400, 6))
    y = (X[:, 0] + X[:, 1] + 0.5 * rng.normal(size=400) > 0).astype(int)
    folds = []
    for k in range(5):
        m = fit_classifier(ClassifierSpec("rf", {"n_trees": 30, "max_depth": 5}, k), X[k::5], y[k::5])
        folds.append(tree_shap(m, X[k::5], [f"x{j}" for j in range(6)]))
    assert set(pool_importance(folds).order[:2]) == {0, 1}
