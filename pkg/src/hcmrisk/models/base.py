"""Shared classifier contract: spec, fitted-model base class, grids, serialization."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

KINDS = ("rf", "gb", "lr", "svm")
FORMAT_VERSION = 1

HYPERPARAMS = {
    "rf": {"n_trees": 100, "max_depth": None, "min_leaf": 1, "mtry": None, "bootstrap": True},
    "gb": {"n_rounds": 100, "shrinkage": 0.1, "max_depth": 3, "min_leaf": 1},
    "lr": {"lam": 0.1, "tol": 1e-8, "max_iter": 100_000},
    "svm": {"C": 1.0, "calib_folds": 3, "tol": 0.1, "max_epochs": 1000},
}

# Small grids keep 5x3 nested CV desk-runnable.
DEFAULT_GRIDS = {
    "rf": {"n_trees": [100, 300], "max_depth": [4, 8, None], "min_leaf": [1, 5]},
    "gb": {"n_rounds": [100, 200], "shrinkage": [0.05, 0.1], "max_depth": [2, 3]},
    "lr": {"lam": [0.01, 0.1, 1.0]},
    "svm": {"C": [0.1, 1.0, 10.0]},
}

# Settings used while SFFS scores candidate subsets, before the grid search.
SELECTION_DEFAULTS = {
    "rf": {"n_trees": 100, "max_depth": 8, "min_leaf": 5},
    "gb": {"n_rounds": 100, "shrinkage": 0.1, "max_depth": 2},
    "lr": {"lam": 0.1},
    "svm": {"C": 1.0},
}


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown classifier kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.hyperparams) - set(HYPERPARAMS[self.kind])
        if unknown:
            raise ModelError(f"invalid hyperparameters for {self.kind}: {sorted(unknown)}")

    def resolved(self) -> dict:
        return {**HYPERPARAMS[self.kind], **self.hyperparams}


def grid_points(grid: dict) -> list[dict]:
    """Cartesian product of a name -> values mapping, in declaration order."""
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def check_training_data(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ModelError("X must be 2-D with one row per label")
    if np.isnan(X).any():
        raise ModelError("X contains NaN; impute before fitting")
    if not np.isin(y, (0, 1)).all():
        raise ModelError("labels must be 0/1")
    if np.unique(y).size < 2:
        raise ModelError("training labels contain a single class")
    return X, y.astype(float)


class FittedClassifier:
    """A trained model returning class-1 probabilities."""

    kind: ClassVar[str]
    hyperparams: dict
    seed: int
    feature_count: int

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        return np.clip(self._proba(X), 0.0, 1.0)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.feature_count:
            raise ModelError(f"model expects {self.feature_count} features, got {X.shape[1]}")
        if not np.isfinite(X).all():
            raise ModelError("features must be finite")
        return X

    def _proba(self, X) -> np.ndarray:
        raise NotImplementedError

    def _params_json(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "hyperparams": {k: _json_value(v) for k, v in self.hyperparams.items()},
            "seed": self.seed,
            "feature_count": self.feature_count,
            "params": self._params_json(),
        }


def _json_value(v):
    if isinstance(v, float) and math.isinf(v):
        return None
    if isinstance(v, np.generic):
        return v.item()
    return v
