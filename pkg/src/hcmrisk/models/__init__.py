"""The four classifier families behind one probabilistic contract."""

from __future__ import annotations

import numpy as np

from .base import (
    DEFAULT_GRIDS,
    FORMAT_VERSION,
    HYPERPARAMS,
    KINDS,
    SELECTION_DEFAULTS,
    ClassifierSpec,
    FittedClassifier,
    ModelError,
    check_training_data,
    grid_points,
)
from .ensembles import GradientBoostingModel, RandomForestModel, fit_gradient_boosting, fit_random_forest
from .linear import LinearSVMModel, LogisticModel, fit_linear_svm, fit_logistic, fit_platt, lr_objective
from .tree import DecisionTree, grow_tree, presort

_FITTERS = {
    "rf": fit_random_forest,
    "gb": fit_gradient_boosting,
    "lr": fit_logistic,
    "svm": fit_linear_svm,
}


def fit_classifier(spec: ClassifierSpec, X, y) -> FittedClassifier:
    """Train ``spec.kind`` on standardized, imputed ``X`` and 0/1 ``y``; deterministic per spec."""
    X, y = check_training_data(X, y)
    return _FITTERS[spec.kind](np.ascontiguousarray(X), y, spec.resolved(), int(spec.seed))


def predict_proba(model: FittedClassifier, x) -> float | np.ndarray:
    """Class-1 probability for one feature vector (float) or a matrix (array)."""
    x = np.asarray(x, dtype=float)
    out = model.predict_proba(x)
    return float(out[0]) if x.ndim == 1 else out


def model_from_json(doc: dict) -> FittedClassifier:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"unsupported model format version {doc.get('format_version')!r}")
    kind = doc["kind"]
    hp, seed, p = doc["hyperparams"], int(doc["seed"]), int(doc["feature_count"])
    prm = doc["params"]
    if kind == "rf":
        return RandomForestModel(tuple(DecisionTree.from_json(t) for t in prm["trees"]), hp, seed, p)
    if kind == "gb":
        return GradientBoostingModel(float(prm["init"]), tuple(DecisionTree.from_json(t) for t in prm["trees"]),
                                     hp, seed, p, tuple(prm.get("train_loss", ())))
    if kind == "lr":
        return LogisticModel(np.array(prm["weights"], dtype=float), float(prm["intercept"]), hp, seed, p,
                             float(prm.get("grad_norm", 0.0)), int(prm.get("n_iter", 0)))
    if kind == "svm":
        return LinearSVMModel(np.array(prm["weights"], dtype=float), float(prm["intercept"]),
                              float(prm["platt_a"]), float(prm["platt_b"]), hp, seed, p)
    raise ModelError(f"unknown classifier kind {kind!r}")


__all__ = [
    "DEFAULT_GRIDS", "HYPERPARAMS", "KINDS", "SELECTION_DEFAULTS", "ClassifierSpec", "DecisionTree",
    "FittedClassifier", "GradientBoostingModel", "LinearSVMModel", "LogisticModel", "ModelError",
    "RandomForestModel", "fit_classifier", "fit_platt", "grid_points", "grow_tree", "lr_objective",
    "model_from_json", "predict_proba", "presort",
]
