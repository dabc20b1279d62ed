from __future__ import annotations

from datetime import date

import numpy as np
import pytest

from hcmrisk.cohort import Cohort, FeatureEntry, FeatureSchema, Outcome, PatientExam


@pytest.fixture
def tiny_schema() -> FeatureSchema:
    return FeatureSchema((
        FeatureEntry("lvef_pct", "continuous", "echo", "%"),
        FeatureEntry("sam", "binary", "echo"),
        FeatureEntry("age_years", "continuous", "clinical", "years"),
    ))


def make_cohort(schema, rows, outcomes) -> Cohort:
    exams = tuple(PatientExam(pid, date.fromisoformat(d), tuple(float(v) for v in vals)) for pid, d, vals in rows)
    return Cohort(schema, exams, {p: Outcome(*o) for p, o in outcomes.items()})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
