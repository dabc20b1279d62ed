"""Synthetic cohorts with a known Gaussian risk structure and closed-form Bayes AUC."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from scipy.stats import norm

from ._common import derive_seed
from .cohort import Cohort, EndpointSpec, FeatureSchema, Outcome, PatientExam, derive_labels, save_cohort, save_schema
from .escscore import DEFAULT_COLUMNS

ESC_NAMES = frozenset(DEFAULT_COLUMNS.values())
DEFAULT_SIGNAL = ("lvef_pct", "lvidd_mm")

# location/scale in clinical units, keyed by unit; z-scores are mapped through these
_UNIT_SCALE = {
    "mm": (20.0, 5.0), "mL": (110.0, 25.0), "%": (60.0, 8.0), "cm/s": (8.0, 2.5), "ms": (200.0, 40.0),
    "mmHg": (30.0, 12.0), "grade": (1.5, 0.8), "cm2": (22.0, 5.0), "mL/m2": (45.0, 12.0),
    "m/s": (2.5, 0.6), "g": (200.0, 50.0), "g/m2": (110.0, 25.0), "L/min": (5.0, 1.0),
    "L/min/m2": (2.8, 0.5), "cm/s2": (400.0, 90.0), "cm": (170.0, 9.0), "kg": (75.0, 13.0),
    "kg/m2": (26.0, 4.0), "bpm": (68.0, 11.0), "class": (1.8, 0.7), "years": (48.0, 15.0),
}
_BINARY_RATE = {"fh_scd": 0.2, "nsvt": 0.2, "syncope": 0.15}


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    n_patients: int = 1201
    prevalence: float = 0.257
    signal_features: tuple[str, ...] = DEFAULT_SIGNAL
    effect_size: float = 1.0
    exams_per_patient: tuple[int, int] = (1, 1)
    drift_rate: float = 0.0
    missing_rate: float = 0.05
    seed: int = 0
    # covariate shift added (in SD units) to every non-ESC continuous base feature
    mean_shift: float = 0.0
    n_base_continuous: int = 16
    decoy_r: float = 0.9
    exam_noise: float = 0.3
    event_time_range: tuple[float, float] = (0.2, 5.0)
    exam_window_years: float = 12.0
    followup: str = "complete"          # "complete": event-free >= horizon; "short": gamma(2.3, 1.7)
    late_event_fraction: float = 0.2    # event-free patients with an event after the horizon
    all_missing: tuple[str, ...] = ()
    horizon_years: float = 5.0

    def __post_init__(self):
        if not 0 < self.prevalence < 1:
            raise SynthError("prevalence must lie in (0, 1)")
        if not 0 <= self.missing_rate < 1:
            raise SynthError("missing_rate must lie in [0, 1)")
        n_pos = round(self.n_patients * self.prevalence)
        if n_pos < 1 or n_pos > self.n_patients - 1:
            raise SynthError(f"{self.n_patients} patients at prevalence {self.prevalence} leave a class empty")
        lo, hi = self.exams_per_patient
        if lo < 1 or hi < lo:
            raise SynthError("exams_per_patient must satisfy 1 <= min <= max")
        if self.followup not in ("complete", "short"):
            raise SynthError("followup must be 'complete' or 'short'")
        if not -1 < self.decoy_r < 1:
            raise SynthError("decoy_r must lie in (-1, 1)")

    @property
    def bayes_auc(self) -> float:
        return bayes_auc(self.effect_size, len(self.signal_features))

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["signal_features"] = list(self.signal_features)
        doc["exams_per_patient"] = list(self.exams_per_patient)
        doc["event_time_range"] = list(self.event_time_range)
        doc["all_missing"] = list(self.all_missing)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "GeneratorSpec":
        doc = dict(doc)
        for k in ("signal_features", "exams_per_patient", "event_time_range", "all_missing"):
            if k in doc:
                doc[k] = tuple(doc[k])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SynthError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**doc)


def bayes_auc(effect_size: float, k: int) -> float:
    """AUC of the optimal score when k independent features shift by ``effect_size`` SDs."""
    return float(norm.cdf(effect_size * math.sqrt(k) / math.sqrt(2.0)))


def effect_for_auc(auc: float, k: int) -> float:
    """Per-feature shift giving Bayes AUC ``auc`` with k signal features."""
    return float(norm.ppf(auc) * math.sqrt(2.0) / math.sqrt(k))


def preset(name: str, seed: int = 0, **overrides) -> GeneratorSpec:
    """Named cohort shapes: florence-like, rennes-like, longitudinal."""
    k = len(overrides.get("signal_features", DEFAULT_SIGNAL))
    base = {"seed": seed, "effect_size": effect_for_auc(0.85, k)}
    if name == "florence-like":
        spec = {"n_patients": 1201, "prevalence": 0.257}
    elif name == "rennes-like":
        # attenuated signal plus mean shift: the external cohort is harder and shifted
        spec = {"n_patients": 382, "prevalence": 0.149, "mean_shift": 0.5,
                "effect_size": 0.7 * effect_for_auc(0.85, k), "followup": "short",
                "late_event_fraction": 0.0,
                "all_missing": ("mv_e_decel_slope", "lat_s_prime_cms", "sep_s_prime_cms",
                                "anterior_leaflet_mm", "mitral_stenosis")}
    elif name == "longitudinal":
        spec = {"n_patients": 200, "prevalence": 0.3, "exams_per_patient": (3, 8), "drift_rate": 0.5,
                "event_time_range": (3.0, 5.0), "exam_window_years": 3.0}
    else:
        raise SynthError(f"unknown preset {name!r}; expected florence-like, rennes-like or longitudinal")
    return GeneratorSpec(**{**base, **spec, **overrides})


# ------------------------------------------------------------------ layout

@dataclass(frozen=True)
class _Layout:
    bases: tuple[int, ...]
    decoys: dict = field(default_factory=dict)     # decoy index -> base index
    signal: tuple[int, ...] = ()
    esc: tuple[int, ...] = ()


def _layout(spec: GeneratorSpec, schema: FeatureSchema) -> _Layout:
    names = schema.names
    unknown = [n for n in spec.signal_features if n not in names]
    if unknown:
        raise SynthError(f"signal features not in schema: {unknown}")
    signal = tuple(schema.index(n) for n in spec.signal_features)
    for j in signal:
        if schema.entries[j].kind != "continuous" or names[j] in ESC_NAMES:
            raise SynthError(f"signal feature {names[j]} must be continuous and not an ESC input")
    esc = tuple(schema.index(n) for n in names if n in ESC_NAMES)
    cont = [j for j, e in enumerate(schema.entries) if e.kind == "continuous"]
    chosen = set(signal) | {j for j in esc if schema.entries[j].kind == "continuous"}
    for j in cont:
        if len(chosen) >= spec.n_base_continuous:
            break
        chosen.add(j)
    decoys = {}
    anchors = [j for j in sorted(chosen) if names[j] not in ESC_NAMES]
    turn = 0
    for j in cont:
        if j in chosen:
            continue
        earlier = [a for a in anchors if a < j]
        if not earlier:
            chosen.add(j)
            continue
        decoys[j] = earlier[turn % len(earlier)]
        turn += 1
    bases = tuple(sorted(chosen | {j for j, e in enumerate(schema.entries) if e.kind == "binary"}))
    return _Layout(bases, decoys, signal, esc)


def _to_units(name: str, unit: str, z):
    if name == "age_years":
        return np.clip(48.0 + 15.0 * z, 16.0, 80.0)
    if name == "mwt_mm":
        return np.clip(20.0 + 5.0 * z, 8.0, 35.0)
    if name == "la_diameter_mm":
        return np.clip(44.0 + 7.0 * z, 25.0, 70.0)
    if name == "lvot_gradient_max_mmhg":
        return 20.0 * np.exp(0.9 * z)
    if name == "lvef_pct":
        # risk rises as ejection fraction falls
        return np.clip(62.0 - 8.0 * z, 10.0, 85.0)
    loc, scale = _UNIT_SCALE.get(unit, (10.0, 3.0))
    return loc + scale * z


# ---------------------------------------------------------------- generator

def _labels(spec: GeneratorSpec, rng) -> np.ndarray:
    n_pos = round(spec.n_patients * spec.prevalence)
    y = np.zeros(spec.n_patients, dtype=int)
    y[:n_pos] = 1
    return rng.permutation(y)


def _outcomes(spec: GeneratorSpec, y, rng) -> tuple[np.ndarray, np.ndarray]:
    """Event time (NaN if none) and follow-up per patient."""
    n = y.size
    h = spec.horizon_years
    lo, hi = spec.event_time_range
    event = np.full(n, np.nan)
    follow = np.empty(n)
    pos = y == 1
    event[pos] = rng.uniform(lo, min(hi, h), pos.sum())
    if spec.followup == "complete":
        follow[pos] = event[pos] + rng.uniform(0.0, 12.0 - h, pos.sum())
        follow[~pos] = rng.uniform(h, 12.0, (~pos).sum())
        late = ~pos & (rng.random(n) < spec.late_event_fraction)
        event[late] = rng.uniform(h + 1e-3, follow[late])
    else:
        # gamma with mean 2.3 and sd 1.7
        shape = (2.3 / 1.7) ** 2
        scale = 1.7 ** 2 / 2.3
        follow[pos] = event[pos] + rng.gamma(shape, scale, pos.sum()) * 0.5
        follow[~pos] = np.maximum(rng.gamma(shape, scale, (~pos).sum()), 0.05)
    return event, follow


def _exam_times(spec: GeneratorSpec, window: float, rng) -> np.ndarray:
    lo, hi = spec.exams_per_patient
    count = int(rng.integers(lo, hi + 1))
    times = [0.0]
    while len(times) < count:
        t = times[-1] + rng.uniform(0.5, 2.0)
        if t >= window:
            break
        times.append(t)
    return np.array(times)


def generate_longitudinal(spec: GeneratorSpec, schema: FeatureSchema) -> Cohort:
    """Cohort with one or more exams per patient (see ``generate_cohort``)."""
    return generate_cohort(spec, schema)


def generate_cohort(spec: GeneratorSpec, schema: FeatureSchema) -> Cohort:
    """Draw a labeled cohort.

    Baseline signal features are N(label * effect_size, 1) in z units, other
    base features N(0, 1) or Bernoulli, and every remaining continuous
    feature is a decoy correlated ``decoy_r`` with an earlier base feature.
    ESC inputs carry no signal. Follow-up exams re-measure each patient with
    ``exam_noise`` and, for event patients, move the signal features by
    ``drift_rate`` SDs per year. Labels use ``horizon_years``.
    """
    layout = _layout(spec, schema)
    p = len(schema)
    n = spec.n_patients
    rng = np.random.default_rng(derive_seed(spec.seed, "synth"))
    y = _labels(spec, rng)
    event, follow = _outcomes(spec, y, rng)

    Z = rng.standard_normal((n, p))                     # latent baseline z-scores
    sig = np.array(layout.signal, dtype=int)
    Z[:, sig] += spec.effect_size * y[:, None]
    shift_cols = [j for j in layout.bases
                  if schema.entries[j].kind == "continuous" and j not in layout.esc]
    Z[:, shift_cols] += spec.mean_shift
    rho = spec.decoy_r
    for d, b in layout.decoys.items():
        Z[:, d] = rho * Z[:, b] + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
    B = np.zeros((n, p))
    for j, e in enumerate(schema.entries):
        if e.kind == "binary":
            B[:, j] = rng.random(n) < _BINARY_RATE.get(e.name, 0.3)

    # missingness: decoys and optional binary features only
    may_miss = np.zeros(p, dtype=bool)
    for j, e in enumerate(schema.entries):
        if e.allow_missing and e.name not in ESC_NAMES and (j in layout.decoys or e.kind == "binary"):
            may_miss[j] = True
    all_missing = np.array([schema.index(nm) for nm in spec.all_missing], dtype=int)

    start = date(2004, 1, 1)
    exams: list[PatientExam] = []
    outcomes: dict[str, Outcome] = {}
    width = max(4, len(str(n)))
    cont = np.array([e.kind == "continuous" for e in schema.entries])
    for i in range(n):
        pid = f"P{i + 1:0{width}d}"
        ev = None if math.isnan(event[i]) else float(event[i])
        outcomes[pid] = Outcome(float(follow[i]), ev)
        window = min(follow[i], spec.exam_window_years, ev if ev is not None else math.inf)
        times = _exam_times(spec, max(window, 1e-9), rng)
        day0 = start + timedelta(days=int(rng.integers(0, 3650)))
        days = np.rint(times * 365.25).astype(int)
        for k, dd in enumerate(days):
            t = dd / 365.25
            z = Z[i].copy()
            if k > 0:
                z[cont] += spec.exam_noise * rng.standard_normal(cont.sum())
                if y[i] == 1:
                    z[sig] += spec.drift_rate * t
                for dcol, bcol in layout.decoys.items():
                    # keep decoys tied to the remeasured base
                    z[dcol] = Z[i, dcol] + rho * (z[bcol] - Z[i, bcol])
            vals = np.where(cont, 0.0, B[i])
            for j in np.flatnonzero(cont):
                vals[j] = _to_units(schema.entries[j].name, schema.entries[j].unit, z[j])
            miss = may_miss & (rng.random(p) < spec.missing_rate)
            vals[miss] = np.nan
            vals[all_missing] = np.nan
            exams.append(PatientExam(pid, day0 + timedelta(days=int(dd)), tuple(float(v) for v in vals)))

    names = schema.names
    metadata = {
        "bayes_auc": spec.bayes_auc,
        "spec": spec.to_json(),
        "signal_features": list(spec.signal_features),
        "esc_inputs": [names[j] for j in layout.esc],
        "decoys": {names[d]: names[b] for d, b in sorted(layout.decoys.items())},
        "n_positive": int(y.sum()),
    }
    cohort = Cohort(schema, tuple(exams), outcomes, metadata=metadata)
    return derive_labels(cohort, EndpointSpec(spec.horizon_years))


def monte_carlo_bayes_auc(spec: GeneratorSpec, draws: int = 1_000_000, seed: int = 0) -> float:
    """Empirical AUC of the optimal score (sum of signal z-scores) on fresh draws."""
    from .metrics import auc_score

    rng = np.random.default_rng(seed)
    k = len(spec.signal_features)
    half = draws // 2
    neg = rng.standard_normal((half, k)).sum(axis=1)
    pos = (rng.standard_normal((draws - half, k)) + spec.effect_size).sum(axis=1)
    return auc_score(np.r_[neg, pos], np.r_[np.zeros(half, int), np.ones(draws - half, int)])


def write_cohort(cohort: Cohort, out_dir, stem: str = "cohort") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"cohort": out / f"{stem}.csv", "schema": out / "schema.json", "metadata": out / f"{stem}_metadata.json"}
    save_cohort(cohort, paths["cohort"])
    save_schema(cohort.schema, paths["schema"])
    paths["metadata"].write_text(json.dumps(cohort.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


__all__ = ["GeneratorSpec", "SynthError", "bayes_auc", "effect_for_auc", "generate_cohort",
           "generate_longitudinal", "monte_carlo_bayes_auc", "preset", "write_cohort"]
