"""Kaplan-Meier curves and the two-group log-rank test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .metrics import TestResult


class SurvivalError(ValueError):
    pass


def _check(time, event):
    t = np.asarray(time, dtype=float).ravel()
    e = np.asarray(event).ravel().astype(int)
    if t.size == 0:
        raise SurvivalError("survival data must be nonempty")
    if t.shape != e.shape:
        raise SurvivalError("time and event lengths differ")
    if not (np.isfinite(t).all() and (t > 0).all()):
        raise SurvivalError("survival times must be positive and finite")
    if not np.isin(e, (0, 1)).all():
        raise SurvivalError("event flags must be 0/1")
    return t, e


@dataclass(frozen=True)
class SurvivalData:
    time: np.ndarray
    event: np.ndarray
    group: np.ndarray

    def __post_init__(self):
        t, e = _check(self.time, self.event)
        g = np.asarray(self.group).astype(int)
        if g.shape != t.shape or not np.isin(g, (0, 1)).all():
            raise SurvivalError("group must be 0/1 per subject")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "event", e)
        object.__setattr__(self, "group", g)

    def select(self, group: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.group == group
        return self.time[m], self.event[m]


@dataclass(frozen=True)
class KmCurve:
    """Step function: ``survival[i]`` holds on [time[i], time[i+1]); time[0] = 0."""

    time: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    censored: np.ndarray

    def at(self, t) -> np.ndarray:
        idx = np.searchsorted(self.time, np.asarray(t, dtype=float), side="right") - 1
        return self.survival[np.maximum(idx, 0)]

    def to_csv(self) -> str:
        rows = ["time,survival,at_risk,events,censored"]
        rows += [f"{t!r},{s!r},{n},{d},{c}" for t, s, n, d, c in zip(
            self.time.tolist(), self.survival.tolist(), self.at_risk.tolist(),
            self.events.tolist(), self.censored.tolist())]
        return "\n".join(rows) + "\n"

    def to_json(self) -> dict:
        return {"time": self.time.tolist(), "survival": self.survival.tolist(),
                "at_risk": self.at_risk.tolist(), "events": self.events.tolist(),
                "censored": self.censored.tolist()}


def kaplan_meier(time, event) -> KmCurve:
    """Product-limit estimate.

    At a time shared by events and censorings the events are counted first,
    so the censored subjects are still in the risk set for that drop.
    """
    t, e = _check(time, event)
    uniq = np.unique(t)
    d = np.array([int(e[t == u].sum()) for u in uniq])
    c = np.array([int((t == u).sum()) for u in uniq]) - d
    n = t.size - np.r_[0, np.cumsum(d + c)[:-1]]
    # the running product of remaining/at-risk telescopes without censoring
    factors = (n - d) / n
    s = np.cumprod(factors)
    return KmCurve(np.r_[0.0, uniq], np.r_[1.0, s], np.r_[t.size, n], np.r_[0, d], np.r_[0, c])


@dataclass(frozen=True)
class LogRankResult(TestResult):
    observed: tuple[float, float] = (0.0, 0.0)
    expected: tuple[float, float] = (0.0, 0.0)

    def to_json(self) -> dict:
        doc = super().to_json()
        doc.update(chi2=self.statistic, observed=list(self.observed), expected=list(self.expected))
        return doc


def log_rank(time0, event0, time1, event1) -> LogRankResult:
    """One-degree-of-freedom log-rank test between two groups."""
    t0, e0 = _check(time0, event0)
    t1, e1 = _check(time1, event1)
    t = np.concatenate([t0, t1])
    e = np.concatenate([e0, e1])
    g = np.r_[np.zeros(t0.size, int), np.ones(t1.size, int)]
    if e.sum() == 0:
        raise SurvivalError("log-rank needs at least one event")
    event_times = np.unique(t[e == 1])
    o1 = e1_sum = var = 0.0
    for u in event_times:
        at_risk = t >= u
        n = float(at_risk.sum())
        n1 = float((at_risk & (g == 1)).sum())
        here = (t == u) & (e == 1)
        d = float(here.sum())
        o1 += float((here & (g == 1)).sum())
        e1_sum += d * n1 / n
        if n > 1:
            var += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    total_events = float(e.sum())
    observed = (total_events - o1, o1)
    expected = (total_events - e1_sum, e1_sum)
    if var <= 1e-300:
        return LogRankResult(0.0, 1.0, "log-rank", ("zero_variance",), observed, expected)
    chi2 = (o1 - e1_sum) ** 2 / var
    return LogRankResult(float(chi2), float(stats.chi2.sf(chi2, 1)), "log-rank", (), observed, expected)


def log_rank_data(data: SurvivalData) -> LogRankResult:
    if not ((data.group == 0).any() and (data.group == 1).any()):
        return LogRankResult(0.0, 1.0, "log-rank", ("single_group",))
    return log_rank(*data.select(0), *data.select(1))


def stratify_by_prediction(probabilities, threshold: float) -> np.ndarray:
    """Group 1 iff probability >= threshold."""
    p = np.asarray(probabilities, dtype=float)
    return (p >= threshold).astype(int)
