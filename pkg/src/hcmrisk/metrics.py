"""Classification metrics, ROC curves, fold-averaged ROC, and rank/parametric tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

EXACT_MW_LIMIT = 400   # exact Mann-Whitney when n_a * n_b is at most this
ROC_GRID_STEP = 0.01


class MetricsError(ValueError):
    pass


def _binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (0, 1)).all():
        raise MetricsError("labels must be 0/1")
    return y.astype(int)


# ------------------------------------------------------------------------ ROC

@dataclass(frozen=True)
class RocCurve:
    """ROC points from (0, 0) to (1, 1); the first point's threshold is +inf."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_json(self) -> dict:
        return {"auc": self.auc, "fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(),
                "thresholds": [None if math.isinf(t) else float(t) for t in self.thresholds]}

    def to_csv(self) -> str:
        rows = ["fpr,tpr,threshold"]
        rows += [f"{f!r},{t!r},{'inf' if math.isinf(h) else repr(float(h))}"
                 for f, t, h in zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist())]
        return "\n".join(rows) + "\n"


def roc_auc(scores, labels) -> RocCurve:
    """Threshold sweep over the unique scores (predict positive when score >= threshold).

    Tied scores move the curve diagonally, so the trapezoid area counts each
    tied positive/negative pair as one half, i.e. the Mann-Whitney statistic.
    """
    s = np.asarray(scores, dtype=float)
    y = _binary_labels(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricsError("scores and labels must be 1-D and of equal length")
    if not np.isfinite(s).all():
        raise MetricsError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s.size - 1]
    tp = np.cumsum(y_sorted)[last_of_run]
    fp = (last_of_run + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s_sorted[last_of_run]]
    # integer trapezoid sum keeps the area exact: sum (dfp)(tp_prev + tp) / 2
    tp_i = np.r_[0, tp]
    fp_i = np.r_[0, fp]
    twice_area = int(np.sum(np.diff(fp_i) * (tp_i[1:] + tp_i[:-1])))
    auc = twice_area / (2.0 * n_pos * n_neg)
    return RocCurve(fpr, tpr, thresholds, float(auc))


def auc_score(scores, labels) -> float:
    return roc_auc(scores, labels).auc


@dataclass(frozen=True)
class MeanRoc:
    """Vertically averaged ROC on a fixed FPR grid."""

    fpr: np.ndarray
    tpr: np.ndarray
    tpr_std: np.ndarray
    aucs: tuple[float, ...]
    auc_mean: float
    auc_std: float

    def label(self, name: str = "AUC") -> str:
        return f"{name} = {self.auc_mean:.2f} ± {self.auc_std:.2f}"

    def to_json(self) -> dict:
        return {"auc_mean": self.auc_mean, "auc_std": self.auc_std, "aucs": list(self.aucs),
                "fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(), "tpr_std": self.tpr_std.tolist()}

    def to_csv(self) -> str:
        rows = ["fpr,tpr_mean,tpr_std"]
        rows += [f"{f!r},{t!r},{s!r}" for f, t, s in zip(self.fpr.tolist(), self.tpr.tolist(), self.tpr_std.tolist())]
        return "\n".join(rows) + "\n"


def interpolate_tpr(curve: RocCurve, grid) -> np.ndarray:
    """TPR at each grid FPR; on a vertical segment the highest TPR is used."""
    grid = np.asarray(grid, dtype=float)
    i = np.searchsorted(curve.fpr, grid, side="right") - 1
    i = np.clip(i, 0, curve.fpr.size - 1)
    j = np.minimum(i + 1, curve.fpr.size - 1)
    f0, f1 = curve.fpr[i], curve.fpr[j]
    t0, t1 = curve.tpr[i], curve.tpr[j]
    exact = (f0 == grid) | (f1 == f0)
    frac = np.where(exact, 0.0, (grid - f0) / np.where(f1 > f0, f1 - f0, 1.0))
    return np.where(exact, t0, t0 + frac * (t1 - t0))


def mean_roc(curves, step: float = ROC_GRID_STEP) -> MeanRoc:
    curves = list(curves)
    if not curves:
        raise MetricsError("mean_roc needs at least one curve")
    n_steps = int(round(1.0 / step))
    grid = np.linspace(0.0, 1.0, n_steps + 1)
    T = np.array([interpolate_tpr(c, grid) for c in curves])
    aucs = np.array([c.auc for c in curves])
    return MeanRoc(grid, T.mean(axis=0), T.std(axis=0), tuple(float(a) for a in aucs),
                   float(aucs.mean()), float(aucs.std()))


def upper_left_threshold(curve: RocCurve) -> float:
    """Threshold of the ROC point nearest (0, 1); ties go to the higher threshold."""
    if curve.fpr.size == 0:
        raise MetricsError("empty curve")
    d = np.hypot(1.0 - curve.tpr, curve.fpr)
    best = d.min()
    tied = np.flatnonzero(d <= best + 1e-12)
    return float(curve.thresholds[tied].max())


# --------------------------------------------------------------- confusion

@dataclass(frozen=True)
class MetricBlock:
    sensitivity: float
    specificity: float
    accuracy: float
    balanced_accuracy: float
    f1: float
    auc: float | None
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_json(self) -> dict:
        return {
            "sensitivity": self.sensitivity, "specificity": self.specificity, "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy, "f1": self.f1, "auc": self.auc,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "threshold": self.threshold, "flags": list(self.flags),
        }


def _ratio(num: int, den: int, flag: str, flags: list) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def confusion_metrics(probabilities, labels, threshold: float = 0.5) -> MetricBlock:
    """Standard metrics with positive prediction iff probability >= threshold.

    Undefined ratios are reported as 0 and named in ``flags``. AUC is
    included when both classes are present.
    """
    p = np.asarray(probabilities, dtype=float)
    y = _binary_labels(labels)
    pred = p >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    flags: list[str] = []
    sens = _ratio(tp, tp + fn, "no_positives", flags)
    spec = _ratio(tn, tn + fp, "no_negatives", flags)
    acc = _ratio(tp + tn, y.size, "empty", flags)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn, "f1_undefined", flags)
    auc = roc_auc(p, y).auc if 0 < y.sum() < y.size else None
    return MetricBlock(sens, spec, acc, (sens + spec) / 2, f1, auc, tp, fp, fn, tn, float(threshold), tuple(flags))


# --------------------------------------------------------------- tests

@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    flags: tuple[str, ...] = ()

    __test__ = False  # keep pytest from collecting this class

    def to_json(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "method": self.method,
                "flags": list(self.flags)}


def _rank_sum_counts(doubled_ranks: np.ndarray, k: int) -> np.ndarray:
    """counts[s] = number of k-subsets whose doubled ranks sum to s."""
    total = int(doubled_ranks.sum())
    counts = np.zeros((k + 1, total + 1))
    counts[0, 0] = 1.0
    for r in doubled_ranks.astype(int):
        # iterate subset sizes downward so each rank is used at most once
        for j in range(min(k, counts.shape[0] - 1), 0, -1):
            counts[j, r:] += counts[j - 1, :total + 1 - r]
    return counts[k]


def mann_whitney_u(a, b) -> TestResult:
    """U statistic of ``a`` (pairs a > b plus half the ties) and a two-sided p-value.

    Exact permutation distribution of the midrank sum when n_a * n_b <= 400;
    otherwise the normal approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise MetricsError("Mann-Whitney needs two nonempty samples")
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    u = float(ranks[:na].sum() - na * (na + 1) / 2)
    mean_u = na * nb / 2.0
    if na * nb <= EXACT_MW_LIMIT:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _rank_sum_counts(doubled, na)
        offset = na * (na + 1)  # doubled version of na(na+1)/2
        s = np.arange(counts.size)
        u_values = (s - offset) / 2.0
        dev = abs(u - mean_u)
        extreme = np.abs(u_values - mean_u) >= dev - 1e-9
        p = float(counts[extreme].sum() / counts.sum())
        return TestResult(u, min(p, 1.0), "exact")
    n = na + nb
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return TestResult(u, 1.0, "normal", ("zero_variance",))
    z = max(abs(u - mean_u) - 0.5, 0.0) / math.sqrt(var)
    return TestResult(u, float(min(1.0, 2 * stats.norm.sf(z))), "normal")


def friedman_test(matrix) -> TestResult:
    """Friedman chi-square over subjects (rows) x treatments (columns), midranks with tie correction."""
    M = np.asarray(matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] < 2 or M.shape[1] < 2:
        raise MetricsError("Friedman test needs at least 2 subjects and 2 treatments")
    n, k = M.shape
    R = stats.rankdata(M, axis=1)
    col = R.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float(np.sum(col ** 2)) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in M:
        _, c = np.unique(row, return_counts=True)
        ties += float(np.sum(c ** 3 - c))
    correction = 1.0 - ties / (n * (k ** 3 - k))
    if correction <= 1e-12:
        return TestResult(0.0, 1.0, "friedman", ("all_tied",))
    chi2 = max(chi2 / correction, 0.0)
    return TestResult(float(chi2), float(stats.chi2.sf(chi2, k - 1)), "friedman")


def welch_t(a, b) -> TestResult:
    """Unequal-variance two-sample t-test (t = mean(a) - mean(b) scaled), two-sided."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise MetricsError("Welch t-test needs at least two values per sample")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    diff = float(a.mean() - b.mean())
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return TestResult(0.0, 1.0, "welch", ("zero_variance",))
        return TestResult(math.copysign(math.inf, diff), 0.0, "welch", ("zero_variance",))
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / ((va ** 2 / (a.size - 1) if va > 0 else 0.0) + (vb ** 2 / (b.size - 1) if vb > 0 else 0.0))
    return TestResult(float(t), float(min(1.0, 2 * stats.t.sf(abs(t), df))), "welch")
