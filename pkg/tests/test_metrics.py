from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hcmrisk.metrics import (
    MetricsError, RocCurve, confusion_metrics, friedman_test, interpolate_tpr, mann_whitney_u, mean_roc, roc_auc,
    upper_left_threshold, welch_t,
)


def pair_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    d = pos[:, None] - neg[None, :]
    return float(((d > 0) + 0.5 * (d == 0)).mean())


def test_auc_examples():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]).auc == 0.75
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]).auc == 0.5
    with pytest.raises(MetricsError):
        roc_auc([0.1, 0.2], [1, 1])


def test_curve_shape():
    c = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert (c.fpr[0], c.tpr[0]) == (0, 0) and (c.fpr[-1], c.tpr[-1]) == (1, 1)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert math.isinf(c.thresholds[0])


def test_auc_matches_pair_counting_on_1000_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.integers(0, 8, n) / 7.0 if rng.random() < 0.5 else rng.normal(size=n)
        assert abs(roc_auc(s, y).auc - pair_auc(s, y)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=4, max_size=40), st.integers(0, 2**16))
def test_auc_invariant_under_increasing_transform(s, seed):
    s = np.array(s)
    y = np.random.default_rng(seed).integers(0, 2, s.size)
    y[:2] = [0, 1]
    a = roc_auc(s, y).auc
    # strictly increasing remap that survives floating point: unique values to sorted random levels
    u = np.unique(s)
    levels = np.sort(np.random.default_rng(seed).uniform(-1e3, 1e3, u.size))
    assert np.unique(levels).size == u.size
    assert roc_auc(levels[np.searchsorted(u, s)], y).auc == a
    assert 0 <= a <= 1


def test_confusion_examples():
    p = np.array([1, 1, 1, 0, 1, 0, 0, 0, 0, 0], dtype=float)
    y = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0])
    m = confusion_metrics(p, y)
    assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 1, 5)
    assert m.sensitivity == 0.75 and m.f1 == 0.75
    assert m.specificity == pytest.approx(0.8333, abs=5e-5)
    assert m.balanced_accuracy == pytest.approx(0.7917, abs=5e-5)
    same = confusion_metrics(y.astype(float), y)
    assert (same.sensitivity, same.specificity, same.accuracy, same.f1, same.auc) == (1, 1, 1, 1, 1)
    allpos = confusion_metrics(np.ones(10), y)
    assert allpos.sensitivity == 1.0 and allpos.specificity == 0.0


def test_confusion_flags_undefined():
    m = confusion_metrics([0.1, 0.2], [0, 0])
    assert "no_positives" in m.flags and m.sensitivity == 0 and m.auc is None


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30), st.floats(0, 1))
def test_balanced_accuracy_exact(rows, thr):
    p, y = map(np.array, zip(*rows))
    m = confusion_metrics(p, y, thr)
    assert m.balanced_accuracy == (m.sensitivity + m.specificity) / 2
    assert all(0 <= v <= 1 for v in (m.sensitivity, m.specificity, m.accuracy, m.f1))


def test_mean_roc_examples():
    c = roc_auc([0.1, 0.4, 0.35, 0.8, 0.5], [0, 0, 1, 1, 0])
    m = mean_roc([c, c, c])
    assert m.auc_std == 0.0
    assert np.allclose(m.tpr, interpolate_tpr(c, m.fpr), atol=1e-9)
    a = RocCurve(np.array([0, 0.2, 1.0]), np.array([0, 0.6, 1]), np.array([np.inf, 1, 0]), 0.8)
    b = RocCurve(np.array([0, 0.1, 1.0]), np.array([0, 0.8, 1]), np.array([np.inf, 1, 0]), 0.9)
    mb = mean_roc([a, b])
    assert mb.auc_mean == pytest.approx(0.85, abs=1e-15)
    assert mb.auc_std == pytest.approx(0.05, abs=1e-15)
    assert mb.fpr.size == 101
    assert mb.label() == "AUC = 0.85 ± 0.05"
    with pytest.raises(MetricsError):
        mean_roc([])


def test_interpolation_takes_top_of_vertical_segment():
    c = RocCurve(np.array([0.0, 0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0, 1.0]), np.array([np.inf, 3, 2, 1]), 0.875)
    t = interpolate_tpr(c, [0.0, 0.25, 0.5, 1.0])
    assert np.allclose(t, [0.5, 0.75, 1.0, 1.0])


def test_upper_left_examples():
    perfect = roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    thr = upper_left_threshold(perfect)
    i = list(perfect.thresholds).index(thr)
    assert (perfect.fpr[i], perfect.tpr[i]) == (0, 1)
    pts = RocCurve(np.array([0.0, 0.2, 1.0]), np.array([0.0, 0.9, 1.0]), np.array([np.inf, 0.7, 0.1]), 0.0)
    assert upper_left_threshold(pts) == 0.7
    diag = RocCurve(np.array([0.0, 1.0]), np.array([1.0, 1.0]) * np.array([0.0, 1.0]), np.array([5.0, 1.0]), 0.5)
    assert upper_left_threshold(diag) == 5.0


def test_mann_whitney_examples():
    r = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert r.statistic in (0, 9) and r.p_value == pytest.approx(0.1, abs=1e-12) and r.method == "exact"
    assert mann_whitney_u([1, 2, 2, 3], [1, 2, 2, 3]).p_value == 1.0
    rng = np.random.default_rng(1)
    big = mann_whitney_u(rng.normal(1.5, 1, 100), rng.normal(0, 1, 100))
    assert big.method == "normal" and big.p_value < 1e-6


def exact_mw_oracle(a, b):
    pooled = np.r_[a, b]
    ranks = stats.rankdata(pooled)
    na = len(a)
    mean = na * len(b) / 2
    u_obs = ranks[:na].sum() - na * (na + 1) / 2
    us = [ranks[list(c)].sum() - na * (na + 1) / 2 for c in itertools.combinations(range(pooled.size), na)]
    return np.mean([abs(u - mean) >= abs(u_obs - mean) - 1e-9 for u in us])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=6), st.lists(st.integers(0, 5), min_size=1, max_size=6))
def test_mann_whitney_exact_matches_enumeration(a, b):
    r = mann_whitney_u(a, b)
    assert r.p_value == pytest.approx(exact_mw_oracle(np.array(a, float), np.array(b, float)), abs=1e-12)


def test_mann_whitney_normal_matches_scipy():
    rng = np.random.default_rng(3)
    a, b = rng.integers(0, 10, 40), rng.integers(0, 12, 50)
    ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    r = mann_whitney_u(a, b)
    assert r.statistic == ref.statistic and r.p_value == pytest.approx(ref.pvalue, rel=1e-10)


def test_friedman_examples():
    same = np.tile(np.arange(10.0)[:, None], (1, 3))
    r0 = friedman_test(same)
    assert r0.statistic == 0 and r0.p_value == 1
    rng = np.random.default_rng(2)
    M = rng.normal(size=(10, 3))
    M[:, 2] = M.max(axis=1) + 1
    M[:, 1] = M[:, 0] + 0.5
    r = friedman_test(M)
    assert r.statistic == pytest.approx(20.0, abs=1e-12)
    assert r.p_value == pytest.approx(math.exp(-10), rel=1e-12)  # chi2(2) tail is exp(-x/2)
    assert r.p_value == pytest.approx(4.5e-5, rel=0.02)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**20), st.integers(2, 40))
def test_friedman_two_treatments_is_sign_test(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, 2))
    wins = int((M[:, 1] > M[:, 0]).sum())
    assert friedman_test(M).statistic == pytest.approx((2 * wins - n) ** 2 / n, abs=1e-9)


def test_friedman_matches_scipy():
    M = np.random.default_rng(4).integers(0, 4, size=(15, 4)).astype(float)
    ref = stats.friedmanchisquare(*M.T)
    r = friedman_test(M)
    assert r.statistic == pytest.approx(ref.statistic, rel=1e-12) and r.p_value == pytest.approx(ref.pvalue, rel=1e-10)


def test_welch_examples():
    x = np.array([1.0, 2.0, 4.0])
    r = welch_t(x, x)
    assert r.statistic == 0 and r.p_value == 1
    rng = np.random.default_rng(5)
    a = rng.normal(size=100)
    b = rng.normal(size=100)
    a = (a - a.mean()) / a.std(ddof=1) + 1
    b = (b - b.mean()) / b.std(ddof=1)
    assert welch_t(a, b).statistic == pytest.approx(1 / math.sqrt(2 / 100), rel=1e-12)
    ab, ba = welch_t(a[:30], b[:50]), welch_t(b[:50], a[:30])
    assert ab.statistic == -ba.statistic and ab.p_value == ba.p_value
    ref = stats.ttest_ind(a[:30], b[:50], equal_var=False)
    assert ab.p_value == pytest.approx(ref.pvalue, rel=1e-10)
    c = welch_t([2.0, 2.0], [2.0, 2.0])
    assert c.statistic == 0 and c.p_value == 1
