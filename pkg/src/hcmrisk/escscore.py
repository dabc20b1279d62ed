"""The ESC HCM Risk-SCD five-year sudden-cardiac-death score."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import RocCurve, upper_left_threshold

# Prognostic-index coefficients of the published HCM Risk-SCD model
COEF_MWT = 0.15939858          # per mm
COEF_MWT_SQ = -0.00294271      # per mm^2
COEF_LA = 0.0259082            # per mm
COEF_LVOT = 0.00446131         # per mmHg (max of rest / Valsalva)
COEF_FH_SCD = 0.4583082
COEF_NSVT = 0.82639195
COEF_SYNCOPE = 0.71650361
COEF_AGE = -0.01799934         # per year
BASELINE_SURVIVAL_5Y = 0.998

AGE_RANGE = (16.0, 80.0)
MWT_MAX = 35.0

# Cohort-schema column for each input
DEFAULT_COLUMNS = {
    "age": "age_years",
    "mwt": "mwt_mm",
    "la_diameter": "la_diameter_mm",
    "max_lvot_gradient": "lvot_gradient_max_mmhg",
    "fh_scd": "fh_scd",
    "nsvt": "nsvt",
    "unexplained_syncope": "syncope",
}


class EscError(ValueError):
    pass


@dataclass(frozen=True)
class EscInputs:
    age: float
    mwt: float
    la_diameter: float
    max_lvot_gradient: float
    fh_scd: float
    nsvt: float
    unexplained_syncope: float

    def range_flags(self) -> tuple[str, ...]:
        flags = []
        if not AGE_RANGE[0] <= self.age <= AGE_RANGE[1]:
            flags.append("age_out_of_range")
        if not 0.0 < self.mwt <= MWT_MAX:
            flags.append("mwt_out_of_range")
        if self.max_lvot_gradient < 0:
            flags.append("negative_gradient")
        if self.la_diameter < 0:
            flags.append("negative_la_diameter")
        return tuple(flags)


def prognostic_index(mwt, la, lvot, fh_scd, nsvt, syncope, age):
    return (COEF_MWT * mwt + COEF_MWT_SQ * mwt * mwt + COEF_LA * la + COEF_LVOT * lvot
            + COEF_FH_SCD * fh_scd + COEF_NSVT * nsvt + COEF_SYNCOPE * syncope + COEF_AGE * age)


def _risk_from_pi(pi):
    # 1 - s0^exp(PI) written with expm1 so tiny risks keep full precision
    return -np.expm1(np.exp(pi) * math.log(BASELINE_SURVIVAL_5Y))


def esc_risk(inputs: EscInputs) -> float:
    """Five-year SCD probability; out-of-range inputs are scored, check ``range_flags``."""
    vals = (inputs.mwt, inputs.la_diameter, inputs.max_lvot_gradient, inputs.fh_scd,
            inputs.nsvt, inputs.unexplained_syncope, inputs.age)
    if not all(math.isfinite(v) for v in vals):
        raise EscError("ESC inputs must be finite")
    return float(_risk_from_pi(prognostic_index(*vals)))


def esc_risk_matrix(X, names, columns: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Scores for every row of ``X`` (raw clinical units) and a per-row out-of-range flag.

    Rows with a missing input get NaN.
    """
    columns = {**DEFAULT_COLUMNS, **(columns or {})}
    X = np.asarray(X, dtype=float)
    idx = {n: i for i, n in enumerate(names)}
    try:
        col = {k: X[:, idx[v]] for k, v in columns.items()}
    except KeyError as exc:
        raise EscError(f"cohort lacks ESC input column {exc.args[0]!r}") from None
    pi = prognostic_index(col["mwt"], col["la_diameter"], col["max_lvot_gradient"], col["fh_scd"],
                          col["nsvt"], col["unexplained_syncope"], col["age"])
    risk = _risk_from_pi(pi)
    with np.errstate(invalid="ignore"):
        out_of_range = ((col["age"] < AGE_RANGE[0]) | (col["age"] > AGE_RANGE[1])
                        | (col["mwt"] <= 0) | (col["mwt"] > MWT_MAX) | (col["max_lvot_gradient"] < 0))
    return risk, out_of_range


def esc_threshold_groups(scores, training_roc: RocCurve) -> tuple[np.ndarray, float, tuple[str, ...]]:
    """Groups (1 = high risk) from the training ROC's upper-left threshold."""
    thr = upper_left_threshold(training_roc)
    groups = (np.asarray(scores, dtype=float) >= thr).astype(int)
    flags = ()
    if groups.min() == groups.max():
        flags = ("single_group",)
    return groups, thr, flags
