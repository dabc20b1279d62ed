from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcmrisk.escscore import COEF_MWT, COEF_MWT_SQ, EscError, EscInputs, esc_risk, esc_risk_matrix, esc_threshold_groups
from hcmrisk.metrics import roc_auc

# (age, mwt, la, lvot, fh_scd, nsvt, syncope) -> risk, evaluated separately at 50-digit decimal precision
ORACLE = [
    ((40, 25, 45, 30, 1, 0, 0), 0.047176513077294801),
    ((16, 30, 50, 100, 1, 1, 1), 0.41437927447056423),
    ((80, 10, 30, 0, 0, 0, 0), 0.0037782823172590631),
    ((55, 21, 42, 12, 0, 1, 0), 0.040499572230608889),
    ((33, 35, 60, 150, 1, 1, 0), 0.23339633191030919),
]


def inputs(age, mwt, la, lvot, fh, nsvt, syn):
    return EscInputs(age, mwt, la, lvot, fh, nsvt, syn)


@pytest.mark.parametrize("row,expected", ORACLE)
def test_oracle_vector(row, expected):
    assert abs(esc_risk(inputs(*row)) - expected) <= 1e-9


def test_matrix_matches_scalar():
    names = ["age_years", "mwt_mm", "la_diameter_mm", "lvot_gradient_max_mmhg", "fh_scd", "nsvt", "syncope"]
    X = np.array([r for r, _ in ORACLE], dtype=float)
    risk, oor = esc_risk_matrix(X, names)
    assert np.allclose(risk, [e for _, e in ORACLE], atol=1e-9, rtol=0)
    assert not oor.any()
    X2 = np.r_[X, [[90, 20, 40, 10, 0, 0, 0]], [[50, np.nan, 40, 10, 0, 0, 0]]]
    risk2, oor2 = esc_risk_matrix(X2, names)
    assert oor2[-2] and np.isnan(risk2[-1])
    with pytest.raises(EscError):
        esc_risk_matrix(X[:, :6], names[:6])


def test_monotone_examples():
    base = (45, 20, 45, 20, 0, 0, 0)
    assert esc_risk(inputs(*base[:5], 1, 0)) > esc_risk(inputs(*base))
    assert esc_risk(inputs(60, *base[1:])) < esc_risk(inputs(*base))


def test_out_of_range_flagged_not_clamped():
    young = inputs(10, 20, 45, 20, 0, 0, 0)
    assert "age_out_of_range" in young.range_flags()
    assert esc_risk(young) > esc_risk(inputs(16, 20, 45, 20, 0, 0, 0))
    with pytest.raises(EscError):
        esc_risk(inputs(np.nan, 20, 45, 20, 0, 0, 0))


def test_partial_signs_on_valid_grid():
    ages = np.linspace(16, 80, 5)
    turn = -COEF_MWT / (2 * COEF_MWT_SQ)  # about 27.1 mm
    mwts = np.linspace(10, 26.5, 5)
    las = np.linspace(30, 60, 4)
    grads = np.linspace(0, 150, 4)
    for a, m, la, g, fh, ns, sy in itertools.product(ages, mwts, las, grads, (0, 1), (0, 1), (0, 1)):
        r = esc_risk(inputs(a, m, la, g, fh, ns, sy))
        assert 0 < r < 1
        assert esc_risk(inputs(a + 1, m, la, g, fh, ns, sy)) < r
        assert esc_risk(inputs(a, m + 0.5, la, g, fh, ns, sy)) > r
        assert esc_risk(inputs(a, turn + 1, la, g, fh, ns, sy)) > esc_risk(inputs(a, turn + 2, la, g, fh, ns, sy))
        assert esc_risk(inputs(a, m, la + 1, g, fh, ns, sy)) > r
        assert esc_risk(inputs(a, m, la, g + 1, fh, ns, sy)) > r
        if fh == 0:
            assert esc_risk(inputs(a, m, la, g, 1, ns, sy)) > r
        if ns == 0:
            assert esc_risk(inputs(a, m, la, g, fh, 1, sy)) > r
        if sy == 0:
            assert esc_risk(inputs(a, m, la, g, fh, ns, 1)) > r


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.floats(0, 40), st.floats(10, 80), st.floats(0, 200),
       st.integers(0, 1), st.integers(0, 1), st.integers(0, 1))
def test_output_in_open_unit_interval(age, mwt, la, lvot, fh, nsvt, syn):
    r = esc_risk(inputs(age, mwt, la, lvot, fh, nsvt, syn))
    assert 0 < r < 1


def test_threshold_groups():
    y = np.array([0, 0, 1, 1])
    s = np.array([0.01, 0.02, 0.08, 0.09])
    groups, thr, flags = esc_threshold_groups(s, roc_auc(s, y))
    assert groups.tolist() == y.tolist() and flags == ()
    low, _, f2 = esc_threshold_groups(np.array([0.001, 0.002]), roc_auc(s, y))
    assert low.tolist() == [0, 0] and f2 == ("single_group",)
