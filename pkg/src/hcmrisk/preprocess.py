"""Leakage-safe preprocessing: median imputation, z-scoring, undersampling, correlation pruning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class FittedPreprocessor:
    medians: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    fitted_on: int

    def to_json(self) -> dict:
        return {
            "medians": self.medians.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FittedPreprocessor":
        return cls(np.array(doc["medians"], dtype=float), np.array(doc["means"], dtype=float),
                   np.array(doc["stds"], dtype=float), int(doc["fitted_on"]))


def fit_preprocessor(X, names: Sequence[str] | None = None) -> FittedPreprocessor:
    """Column medians, means and population stds from non-missing (non-NaN) entries."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise PreprocessError("need a nonempty 2-D matrix")
    observed = ~np.isnan(X)
    empty = np.flatnonzero(~observed.any(axis=0))
    if empty.size:
        j = int(empty[0])
        label = names[j] if names is not None else f"column {j}"
        raise PreprocessError(f"feature {label} has no observed values")
    medians = np.nanmedian(X, axis=0)
    means = np.nanmean(X, axis=0)
    stds = np.nanstd(X, axis=0)
    return FittedPreprocessor(medians, means, stds, X.shape[0])


def transform(pre: FittedPreprocessor, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return transform(pre, X[None, :])[0]
    if X.shape[1] != pre.medians.size:
        raise PreprocessError(f"expected {pre.medians.size} columns, got {X.shape[1]}")
    filled = np.where(np.isnan(X), pre.medians, X)
    safe = np.where(pre.stds > 0, pre.stds, 1.0)
    Z = (filled - pre.means) / safe
    Z[:, pre.stds == 0] = 0.0
    return Z


def undersample(y, seed) -> np.ndarray:
    """Indices keeping every minority row and an equal-size random draw of the majority."""
    y = np.asarray(y)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size == 0 or neg.size == 0:
        raise PreprocessError("undersampling needs both classes")
    minority, majority = (pos, neg) if pos.size <= neg.size else (neg, pos)
    rng = np.random.default_rng(seed)
    drawn = rng.choice(majority, size=minority.size, replace=False)
    return np.sort(np.concatenate([minority, drawn]))


@dataclass(frozen=True)
class CorrelationFilterResult:
    retained: list[int]
    dropped: list[tuple[int, int, float]]  # (dropped, kept, r)
    threshold: float = 0.75

    def to_json(self, names: Sequence[str] | None = None) -> dict:
        def nm(i):
            return names[i] if names is not None else i
        return {
            "threshold": self.threshold,
            "tie_break": "fewer missing values, then earlier schema position",
            "retained": [nm(i) for i in self.retained],
            "dropped": [{"dropped": nm(d), "kept": nm(k), "r": r} for d, k, r in self.dropped],
        }


def pairwise_pearson(X) -> np.ndarray:
    """Pearson r on pairwise-complete rows; constant (or near-empty) pairs give 0."""
    X = np.asarray(X, dtype=float)
    obs = (~np.isnan(X)).astype(float)
    center = np.where(obs > 0, X, 0.0).sum(axis=0) / np.maximum(obs.sum(axis=0), 1.0)
    # centering first limits cancellation in the sum-of-squares formulas
    Z = np.where(np.isnan(X), 0.0, X - center)
    n = obs.T @ obs
    sx = Z.T @ obs          # sum of x_i over rows where both observed
    sxx = (Z * Z).T @ obs
    sxy = Z.T @ Z
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = sxy - sx * sx.T / n
        vx = sxx - sx * sx / n
        vy = vx.T
        r = cov / np.sqrt(vx * vy)
    # relative guard: a column is constant on the shared rows
    scale = np.maximum(sxx, sxx.T)
    degenerate = (n < 2) | (vx <= 1e-12 * scale) | (vy <= 1e-12 * scale) | ~np.isfinite(r)
    r = np.where(degenerate, 0.0, np.clip(r, -1.0, 1.0))
    np.fill_diagonal(r, 1.0)
    return r


def correlation_filter(X, threshold: float = 0.75, missing_counts=None,
                       names: Sequence[str] | None = None) -> CorrelationFilterResult:
    """Greedy pruning of features with |r| strictly above ``threshold``.

    Features are visited in priority order (fewer missing values first, then
    schema position); each is kept unless it correlates too strongly with an
    already kept feature, in which case the kept one with the largest |r| is
    recorded as its partner. ``retained`` is reported in schema order.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    if p < 2:
        raise PreprocessError("correlation filter needs at least two features")
    if missing_counts is None:
        missing_counts = np.isnan(X).sum(axis=0)
    missing_counts = np.asarray(missing_counts)
    r = pairwise_pearson(X)
    order = sorted(range(p), key=lambda j: (missing_counts[j], j))
    kept: list[int] = []
    dropped: list[tuple[int, int, float]] = []
    for j in order:
        clash = [(abs(r[j, k]), k) for k in kept if abs(r[j, k]) > threshold]
        if clash:
            _, k = max(clash, key=lambda t: (t[0], -t[1]))
            dropped.append((j, k, float(r[j, k])))
        else:
            kept.append(j)
    return CorrelationFilterResult(sorted(kept), dropped, threshold)
