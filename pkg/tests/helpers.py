from __future__ import annotations

import numpy as np

from hcmrisk.models import ClassifierSpec, fit_classifier


def random_tree_model(seed: int, max_features: int = 12):
    """A small random forest or boosting model fit on random data, with its feature count."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, max_features + 1))
    n = int(rng.integers(20, 80))
    X = rng.normal(size=(n, m))
    X[:, rng.integers(0, m)] = rng.integers(0, 3, n)  # a discrete column gives tied split values
    y = (X @ rng.normal(size=m) + rng.normal(size=n) > 0).astype(int)
    y[:2] = [0, 1]
    if rng.random() < 0.5:
        hp = {"n_trees": int(rng.integers(1, 6)), "max_depth": int(rng.integers(1, 7)),
              "min_leaf": int(rng.integers(1, 4))}
        model = fit_classifier(ClassifierSpec("rf", hp, seed), X, y)
    else:
        hp = {"n_rounds": int(rng.integers(1, 6)), "max_depth": int(rng.integers(1, 5)), "shrinkage": 0.3}
        model = fit_classifier(ClassifierSpec("gb", hp, seed), X, y)
    return model, X, rng
