"""Feature schema, cohort ingestion, endpoint labelling and inclusion filtering."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("continuous", "binary")
GROUPS = ("echo", "clinical", "medication")
OUTCOME_COLUMNS = ("patient_id", "exam_date", "followup_years", "event_time_years")


class CohortError(ValueError):
    """Malformed schema or cohort file."""


@dataclass(frozen=True)
class FeatureEntry:
    name: str
    kind: str = "continuous"
    group: str = "echo"
    unit: str = ""
    allow_missing: bool = True

    def __post_init__(self):
        if not self.name.isidentifier():
            raise CohortError(f"feature name {self.name!r} is not an identifier")
        if self.kind not in KINDS:
            raise CohortError(f"feature {self.name}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.group not in GROUPS:
            raise CohortError(f"feature {self.name}: group must be one of {GROUPS}, got {self.group!r}")


@dataclass(frozen=True)
class FeatureSchema:
    entries: tuple[FeatureEntry, ...]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise CohortError(f"duplicate feature names: {dupes}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self):
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise CohortError(f"unknown feature {name!r}") from None

    def group_counts(self) -> dict[str, int]:
        return {g: sum(e.group == g for e in self.entries) for g in GROUPS}

    def binary_mask(self) -> np.ndarray:
        return np.array([e.kind == "binary" for e in self.entries])

    def check_total(self, expected: int) -> None:
        if len(self) != expected:
            raise CohortError(f"schema has {len(self)} entries, expected {expected}")

    def to_json(self) -> dict:
        return {
            "version": 1,
            "entries": [
                {"name": e.name, "kind": e.kind, "group": e.group, "unit": e.unit,
                 "allow_missing": e.allow_missing}
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureSchema":
        try:
            entries = doc["entries"]
        except (KeyError, TypeError):
            raise CohortError("schema document needs an 'entries' list") from None
        return cls(tuple(FeatureEntry(**e) for e in entries))


def load_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_json(json.load(fh))


def save_schema(schema: FeatureSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_json(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class PatientExam:
    patient_id: str
    exam_date: date
    values: tuple[float, ...]  # NaN marks a missing value


@dataclass(frozen=True)
class Outcome:
    followup_years: float
    event_time_years: float | None = None

    def __post_init__(self):
        if not (self.followup_years >= 0):
            raise CohortError(f"followup_years must be nonnegative, got {self.followup_years}")
        if self.event_time_years is not None:
            if not (self.event_time_years >= 0):
                raise CohortError(f"event_time_years must be nonnegative, got {self.event_time_years}")
            if self.event_time_years > self.followup_years:
                raise CohortError(
                    f"event_time_years {self.event_time_years} exceeds followup {self.followup_years}")


@dataclass(frozen=True)
class EndpointSpec:
    horizon_years: float = 5.0

    def __post_init__(self):
        if not (self.horizon_years > 0):
            raise CohortError("horizon_years must be positive")


@dataclass(frozen=True)
class Cohort:
    schema: FeatureSchema
    exams: tuple[PatientExam, ...]
    outcomes: dict[str, Outcome]
    labels: dict[str, int] | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p = len(self.schema)
        binary = self.schema.binary_mask()
        for ex in self.exams:
            if len(ex.values) != p:
                raise CohortError(f"exam of {ex.patient_id}: {len(ex.values)} values, schema has {p}")
            if ex.patient_id not in self.outcomes:
                raise CohortError(f"patient {ex.patient_id} has no outcome record")
            v = np.asarray(ex.values, dtype=float)
            bv = v[binary]
            bad = ~(np.isnan(bv) | (bv == 0.0) | (bv == 1.0))
            if bad.any():
                name = np.array(self.schema.names)[binary][bad][0]
                raise CohortError(f"exam of {ex.patient_id}: binary feature {name} not in {{0,1,missing}}")
        if self.labels is not None and any(v not in (0, 1) for v in self.labels.values()):
            raise CohortError("labels must be 0 or 1")

    @property
    def patient_ids(self) -> list[str]:
        """Patients with at least one exam, in first-appearance order."""
        return list(dict.fromkeys(ex.patient_id for ex in self.exams))

    def exams_of(self, patient_id: str) -> list[PatientExam]:
        return [ex for ex in self.exams if ex.patient_id == patient_id]

    def exams_by_patient(self) -> dict[str, list[PatientExam]]:
        out: dict[str, list[PatientExam]] = {}
        for ex in self.exams:
            out.setdefault(ex.patient_id, []).append(ex)
        return out

    def label_vector(self, patient_ids: Sequence[str]) -> np.ndarray:
        if self.labels is None:
            raise CohortError("labels not derived; call derive_labels first")
        return np.array([self.labels[p] for p in patient_ids], dtype=int)

    def baseline_matrix(self) -> tuple[list[str], np.ndarray]:
        """Patient ids and the matrix of their baseline exams (NaN = missing)."""
        by_pid = self.exams_by_patient()
        pids = list(by_pid)
        X = np.array([_earliest(by_pid[p]).values for p in pids], dtype=float).reshape(len(pids), len(self.schema))
        return pids, X

    def survival_arrays(self, patient_ids: Sequence[str], horizon: float | None = None):
        """(time, event) per patient: event time when observed, else follow-up.

        With ``horizon`` set, events after it are treated as censored at the horizon.
        """
        times, events = [], []
        for p in patient_ids:
            o = self.outcomes[p]
            if o.event_time_years is not None and (horizon is None or o.event_time_years <= horizon):
                times.append(o.event_time_years)
                events.append(1)
            else:
                t = o.followup_years if horizon is None else min(o.followup_years, horizon)
                times.append(t)
                events.append(0)
        return np.array(times, dtype=float), np.array(events, dtype=int)


def _earliest(exams: Sequence[PatientExam]) -> PatientExam:
    # min() keeps the first of equal keys, i.e. file order on date ties
    return min(exams, key=lambda ex: ex.exam_date)


def baseline_exam(cohort: Cohort, patient_id: str) -> PatientExam:
    exams = cohort.exams_of(patient_id)
    if not exams:
        raise CohortError(f"unknown patient {patient_id!r}")
    return _earliest(exams)


def derive_labels(cohort: Cohort, spec: EndpointSpec = EndpointSpec()) -> Cohort:
    """Label 1 iff an event is recorded at or before the horizon."""
    labels = {
        pid: int(o.event_time_years is not None and o.event_time_years <= spec.horizon_years)
        for pid, o in cohort.outcomes.items()
    }
    return replace(cohort, labels=labels)


def apply_inclusion(cohort: Cohort, spec: EndpointSpec = EndpointSpec()) -> Cohort:
    """Keep patients with full follow-up over the horizon or an event inside it.

    Patients without any exam are dropped as well.
    """
    h = spec.horizon_years
    with_exams = {ex.patient_id for ex in cohort.exams}
    keep = {
        pid for pid, o in cohort.outcomes.items()
        if pid in with_exams
        and (o.followup_years >= h or (o.event_time_years is not None and o.event_time_years <= h))
    }
    exams = tuple(ex for ex in cohort.exams if ex.patient_id in keep)
    outcomes = {pid: o for pid, o in cohort.outcomes.items() if pid in keep}
    labels = None if cohort.labels is None else {p: v for p, v in cohort.labels.items() if p in keep}
    return replace(cohort, exams=exams, outcomes=outcomes, labels=labels)


def subset_patients(cohort: Cohort, patient_ids: Iterable[str]) -> Cohort:
    keep = set(patient_ids)
    exams = tuple(ex for ex in cohort.exams if ex.patient_id in keep)
    outcomes = {p: o for p, o in cohort.outcomes.items() if p in keep}
    labels = None if cohort.labels is None else {p: v for p, v in cohort.labels.items() if p in keep}
    return replace(cohort, exams=exams, outcomes=outcomes, labels=labels)


# --------------------------------------------------------------------------- CSV

def _parse_float(text: str, what: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise CohortError(f"non-numeric value {text!r} in {what}") from None
    if not math.isfinite(v):
        raise CohortError(f"non-finite value {text!r} in {what}")
    return v


def load_cohort(path, schema: FeatureSchema) -> Cohort:
    """Read the standard cohort CSV (one exam per row).

    Patients whose follow-up cell is empty are dropped with a warning; exams
    of the same patient must agree on the outcome columns.
    """
    exams: list[PatientExam] = []
    outcomes: dict[str, Outcome] = {}
    rejected: set[str] = set()
    seen: set[tuple[str, date]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file") from None
        if tuple(header[:4]) != OUTCOME_COLUMNS:
            raise CohortError(f"{path}: first columns must be {','.join(OUTCOME_COLUMNS)}")
        feature_cols = header[4:]
        unknown = [c for c in feature_cols if c not in schema._index]
        if unknown:
            raise CohortError(f"{path}: columns not in schema: {unknown}")
        if feature_cols != schema.names:
            missing = [n for n in schema.names if n not in feature_cols]
            raise CohortError(f"{path}: feature columns must match schema order; missing {missing}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CohortError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            pid, date_text, fu_text, ev_text = row[:4]
            try:
                exam_date = date.fromisoformat(date_text)
            except ValueError:
                raise CohortError(f"{path}:{lineno}: bad exam_date {date_text!r}") from None
            if (pid, exam_date) in seen:
                raise CohortError(f"{path}:{lineno}: duplicate exam ({pid}, {exam_date})")
            seen.add((pid, exam_date))
            if fu_text == "":
                rejected.add(pid)
                continue
            outcome = Outcome(
                _parse_float(fu_text, f"{path}:{lineno} followup_years"),
                None if ev_text == "" else _parse_float(ev_text, f"{path}:{lineno} event_time_years"),
            )
            if outcomes.setdefault(pid, outcome) != outcome:
                raise CohortError(f"{path}:{lineno}: outcome of {pid} differs from an earlier row")
            values = tuple(
                math.nan if cell == "" else _parse_float(cell, f"{path}:{lineno} column {name}")
                for cell, name in zip(row[4:], feature_cols)
            )
            exams.append(PatientExam(pid, exam_date, values))
    if rejected:
        log.warning("%d patient(s) without outcome data rejected", len(rejected))
        exams = [ex for ex in exams if ex.patient_id not in rejected]
        for pid in rejected:
            outcomes.pop(pid, None)
    return Cohort(schema, tuple(exams), outcomes)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def save_cohort(cohort: Cohort, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(OUTCOME_COLUMNS) + cohort.schema.names)
        for ex in cohort.exams:
            o = cohort.outcomes[ex.patient_id]
            ev = "" if o.event_time_years is None else repr(float(o.event_time_years))
            w.writerow([ex.patient_id, ex.exam_date.isoformat(), repr(float(o.followup_years)), ev]
                       + [_fmt(v) for v in ex.values])


# ------------------------------------------------------------------ demo schema

_ECHO_CONTINUOUS = [
    ("mwt_mm", "mm"), ("la_diameter_mm", "mm"), ("lvot_gradient_max_mmhg", "mmHg"),
    ("lvot_gradient_rest_mmhg", "mmHg"), ("lvef_pct", "%"), ("lvedv_ml", "mL"), ("lvesv_ml", "mL"),
    ("lvidd_mm", "mm"), ("lvids_mm", "mm"), ("ivs_mm", "mm"), ("pwt_mm", "mm"),
    ("sep_e_prime_cms", "cm/s"), ("lat_e_prime_cms", "cm/s"), ("e_wave_cms", "cm/s"),
    ("a_wave_cms", "cm/s"), ("e_a_ratio", ""), ("sep_e_e_prime", ""), ("lat_e_e_prime", ""),
    ("avg_e_e_prime", ""), ("decel_time_ms", "ms"), ("ivrt_ms", "ms"), ("la_area_cm2", "cm2"),
    ("la_volume_ml", "mL"), ("la_volume_index", "mL/m2"), ("ra_area_cm2", "cm2"),
    ("rvidd_mm", "mm"), ("tapse_mm", "mm"), ("rv_s_prime_cms", "cm/s"), ("pasp_mmhg", "mmHg"),
    ("tr_velocity_ms", "m/s"), ("mr_grade", "grade"), ("tr_grade", "grade"), ("ar_grade", "grade"),
    ("av_peak_velocity_ms", "m/s"), ("lv_mass_g", "g"), ("lv_mass_index", "g/m2"),
    ("rel_wall_thickness", ""), ("fs_pct", "%"), ("lvot_diameter_mm", "mm"),
    ("aortic_root_mm", "mm"), ("ascending_aorta_mm", "mm"), ("stroke_volume_ml", "mL"),
    ("cardiac_output_lmin", "L/min"), ("cardiac_index", "L/min/m2"), ("lvedv_index", "mL/m2"),
    ("lvesv_index", "mL/m2"), ("rv_wall_mm", "mm"), ("ivc_mm", "mm"), ("mv_annulus_mm", "mm"),
    ("anterior_leaflet_mm", "mm"), ("apical_wall_mm", "mm"), ("lateral_wall_mm", "mm"),
    ("inferior_wall_mm", "mm"), ("anterior_wall_mm", "mm"), ("sep_s_prime_cms", "cm/s"),
    ("lat_s_prime_cms", "cm/s"), ("mv_e_decel_slope", "cm/s2"),
]
_ECHO_BINARY = [
    "mitral_stenosis", "sam", "mid_cavity_obstruction", "apical_aneurysm",
    "pericardial_effusion", "papillary_muscle_abnormality",
]
_CLINICAL = [
    ("age_years", "continuous", "years"), ("sex_female", "binary", ""), ("height_cm", "continuous", "cm"),
    ("weight_kg", "continuous", "kg"), ("bmi", "continuous", "kg/m2"), ("sbp_mmhg", "continuous", "mmHg"),
    ("dbp_mmhg", "continuous", "mmHg"), ("heart_rate_bpm", "continuous", "bpm"),
    ("nyha_class", "continuous", "class"), ("fh_hcm", "binary", ""), ("fh_scd", "binary", ""),
    ("nsvt", "binary", ""), ("syncope", "binary", ""), ("atrial_fibrillation", "binary", ""),
]
_MEDICATION = ["beta_blocker", "calcium_channel_blocker", "raas_inhibitor", "diuretic", "antiarrhythmic"]

DEMO_TOTAL = 82
# ESC score inputs may not be missing
_ESC_CLINICAL = {"age_years", "fh_scd", "nsvt", "syncope"}


def demo_schema() -> FeatureSchema:
    """The 82-feature catalog (63 echo, 14 clinical, 5 medication) used by the synthetic presets."""
    entries = [FeatureEntry(n, "continuous", "echo", u) for n, u in _ECHO_CONTINUOUS]
    entries += [FeatureEntry(n, "binary", "echo") for n in _ECHO_BINARY]
    entries += [FeatureEntry(n, k, "clinical", u, allow_missing=n not in _ESC_CLINICAL) for n, k, u in _CLINICAL]
    entries += [FeatureEntry(n, "binary", "medication") for n in _MEDICATION]
    schema = FeatureSchema(tuple(entries))
    schema.check_total(DEMO_TOTAL)
    return schema

