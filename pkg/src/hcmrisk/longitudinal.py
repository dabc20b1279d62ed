"""Per-patient predicted-risk trajectories over repeated exams and their OLS slopes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .cohort import Cohort, PatientExam
from .metrics import TestResult, welch_t

DAYS_PER_YEAR = 365.25


class LongitudinalError(ValueError):
    pass


def ols_slope(times, probs) -> float:
    """Least-squares slope of ``probs`` on ``times``."""
    t = np.asarray(times, dtype=float)
    p = np.asarray(probs, dtype=float)
    if t.size < 2 or t.size != p.size:
        raise LongitudinalError("slope needs at least two (time, value) points")
    dt = t - t.mean()
    sxx = float(dt @ dt)
    if sxx == 0.0:
        raise LongitudinalError("slope undefined: all times are equal")
    return float(dt @ (p - p.mean()) / sxx)


@dataclass(frozen=True)
class RiskTrajectory:
    patient_id: str
    times: np.ndarray          # years since the first exam
    probabilities: np.ndarray
    slope: float               # NaN when fewer than two distinct exam dates
    n_exams: int
    fold: int | None = None

    @property
    def abs_slope(self) -> float:
        return abs(self.slope)

    @property
    def has_slope(self) -> bool:
        return not math.isnan(self.slope)

    def to_json(self) -> dict:
        return {"patient_id": self.patient_id, "fold": self.fold, "n_exams": self.n_exams,
                "slope": None if not self.has_slope else self.slope,
                "abs_slope": None if not self.has_slope else self.abs_slope,
                "times": self.times.tolist(), "probabilities": self.probabilities.tolist()}


def trajectory(predict: Callable[[np.ndarray], np.ndarray], exams: Sequence[PatientExam],
               fold: int | None = None) -> RiskTrajectory:
    """Apply ``predict`` (raw schema rows -> probabilities) to every exam of one patient.

    Exams are sorted by date; exams sharing a date are averaged into one point.
    """
    if not exams:
        raise LongitudinalError("trajectory needs at least one exam")
    pid = exams[0].patient_id
    if any(ex.patient_id != pid for ex in exams):
        raise LongitudinalError("exams belong to more than one patient")
    ordered = sorted(exams, key=lambda ex: ex.exam_date)
    probs = np.asarray(predict(np.array([ex.values for ex in ordered], dtype=float)), dtype=float)
    first = ordered[0].exam_date
    days = np.array([(ex.exam_date - first).days for ex in ordered])
    uniq = np.unique(days)
    p = np.array([probs[days == d].mean() for d in uniq])
    t = uniq / DAYS_PER_YEAR
    slope = ols_slope(t, p) if t.size >= 2 else math.nan
    return RiskTrajectory(pid, t, p, slope, len(exams), fold)


def fold_trajectories(cohort: Cohort, folds, members) -> list[RiskTrajectory]:
    """Trajectories of each outer fold's test patients under that fold's own model.

    ``folds`` are FoldReports and ``members`` the matching EnsembleMembers.
    """
    by_pid = cohort.exams_by_patient()
    seen: set[str] = set()
    out = []
    for report, member in zip(folds, members):
        for pid in report.test_ids:
            if pid in seen:
                raise LongitudinalError(f"patient {pid} is a test patient in more than one fold")
            seen.add(pid)
            out.append(trajectory(member.predict, by_pid[pid], report.fold_index))
    return out


@dataclass(frozen=True)
class GroupStats:
    n: int
    slope_mean: float
    slope_std: float
    abs_slope_mean: float
    abs_slope_std: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SlopeSummary:
    event: GroupStats
    event_free: GroupStats
    slope_test: TestResult
    abs_slope_test: TestResult
    event_positive_fraction: float
    excluded: int             # patients without a defined slope

    def to_json(self) -> dict:
        return {"event": self.event.to_json(), "event_free": self.event_free.to_json(),
                "slope_welch": self.slope_test.to_json(), "abs_slope_welch": self.abs_slope_test.to_json(),
                "event_positive_slope_fraction": self.event_positive_fraction,
                "excluded_without_slope": self.excluded, "slope_units": "probability per year"}


def _stats(s: np.ndarray) -> GroupStats:
    a = np.abs(s)
    return GroupStats(int(s.size), float(s.mean()), float(s.std()), float(a.mean()), float(a.std()))


def slope_summary(trajectories: Sequence[RiskTrajectory], labels: Mapping[str, int]) -> SlopeSummary:
    """Population mean and std of slopes and |slopes| per outcome group, with Welch tests.

    Only trajectories with a defined slope (two or more exam dates) count.
    """
    with_slope = [tr for tr in trajectories if tr.has_slope]
    ev = np.array([tr.slope for tr in with_slope if labels[tr.patient_id] == 1])
    free = np.array([tr.slope for tr in with_slope if labels[tr.patient_id] == 0])
    if ev.size < 2 or free.size < 2:
        raise LongitudinalError(
            f"each outcome group needs two patients with slopes (event {ev.size}, event-free {free.size})")
    # sort so the result does not depend on patient order
    ev.sort()
    free.sort()
    return SlopeSummary(_stats(ev), _stats(free), welch_t(ev, free), welch_t(np.abs(ev), np.abs(free)),
                        float(np.mean(ev > 0)), len(trajectories) - len(with_slope))
