"""Tree ensembles: bagged CART forest and logistic-loss gradient boosting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .._common import derive_seed
from .base import FittedClassifier
from .tree import DecisionTree, grow_tree, presort


@dataclass(frozen=True, eq=False)
class RandomForestModel(FittedClassifier):
    trees: tuple[DecisionTree, ...]
    hyperparams: dict
    seed: int
    feature_count: int
    kind = "rf"

    def tree_outputs(self, X) -> np.ndarray:
        X = self._check(X)
        return np.array([t.predict(X) for t in self.trees])

    def _proba(self, X):
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def _params_json(self):
        return {"trees": [t.to_json() for t in self.trees]}


def fit_random_forest(X, y, hp: dict, seed: int) -> RandomForestModel:
    n, p = X.shape
    mtry = hp["mtry"] if hp["mtry"] is not None else math.ceil(math.sqrt(p))
    sorted_rows = presort(X)
    trees = []
    for t in range(int(hp["n_trees"])):
        rng = np.random.default_rng(derive_seed(seed, "rf-tree", t))
        if hp["bootstrap"]:
            w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        else:
            w = None
        tree_seed = int(rng.integers(0, 2**63 - 1))
        trees.append(grow_tree(X, y, hp["max_depth"], hp["min_leaf"], mtry, tree_seed,
                               sample_weight=w, presorted=sorted_rows))
    return RandomForestModel(tuple(trees), dict(hp), seed, p)


def log_loss_from_margin(margin, y) -> float:
    # mean of log(1 + e^m) - y m, stable for large |m|
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


@dataclass(frozen=True, eq=False)
class GradientBoostingModel(FittedClassifier):
    """Margin = ``init`` + sum of tree outputs; shrinkage is folded into the leaves."""

    init: float
    trees: tuple[DecisionTree, ...]
    hyperparams: dict
    seed: int
    feature_count: int
    train_loss: tuple[float, ...] = ()
    kind = "gb"

    def margin(self, X) -> np.ndarray:
        X = self._check(X)
        out = np.full(X.shape[0], self.init)
        for t in self.trees:
            out += t.predict(X)
        return out

    def _proba(self, X):
        return expit(self.margin(X))

    def _params_json(self):
        return {"init": self.init, "trees": [t.to_json() for t in self.trees],
                "train_loss": list(self.train_loss)}


def _fill_internal_values(tree: DecisionTree, leaf_values: np.ndarray) -> np.ndarray:
    # children always carry larger ids than their parent
    v = leaf_values.copy()
    for node in range(tree.n_nodes - 1, -1, -1):
        if tree.feature[node] >= 0:
            l, r = tree.left[node], tree.right[node]
            v[node] = (tree.cover[l] * v[l] + tree.cover[r] * v[r]) / tree.cover[node]
    return v


def fit_gradient_boosting(X, y, hp: dict, seed: int) -> GradientBoostingModel:
    """Stagewise regression trees on logistic-loss residuals.

    Leaves take a Newton step (sum of residuals over sum of p(1-p)) scaled by
    the shrinkage; if a round would raise the training loss the step is
    halved, and dropped after ten halvings, so the loss never increases.
    """
    n, p = X.shape
    prior = float(np.mean(y))
    init = math.log(prior / (1.0 - prior))
    margin = np.full(n, init)
    loss = log_loss_from_margin(margin, y)
    losses = [loss]
    sorted_rows = presort(X)
    trees = []
    for _ in range(int(hp["n_rounds"])):
        prob = expit(margin)
        resid = y - prob
        tree = grow_tree(X, resid, hp["max_depth"], hp["min_leaf"], None, 0, presorted=sorted_rows)
        leaves = tree.apply(X)
        num = np.bincount(leaves, weights=resid, minlength=tree.n_nodes)
        den = np.bincount(leaves, weights=prob * (1.0 - prob), minlength=tree.n_nodes)
        step_vals = np.where(tree.feature < 0, num / np.maximum(den, 1e-12), 0.0)
        scale = float(hp["shrinkage"])
        for _halving in range(11):
            trial = margin + scale * step_vals[leaves]
            trial_loss = log_loss_from_margin(trial, y)
            if trial_loss <= loss:
                break
            scale *= 0.5
        else:
            scale, trial, trial_loss = 0.0, margin, loss
        margin, loss = trial, trial_loss
        losses.append(loss)
        trees.append(tree.with_values(_fill_internal_values(tree, scale * step_vals)))
    return GradientBoostingModel(init, tuple(trees), dict(hp), seed, p, tuple(losses))
