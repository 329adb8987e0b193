import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pptrial.data import LongitudinalDataset
from pptrial.errors import DataError, EstimationError
from pptrial.protocol import StrategyProtocol, evaluate_adherence
from pptrial.views import (COMPETING, DEVIATION, LTFU, MEASUREMENT, apply_missing_adherence_policy,
                           derive_analysis_view)

from fixtures import SCHEMA, competing_fixture, subject_rows

STATIC = StrategyProtocol.static()


def one(arm, treatment, outcomes=None, **kw):
    outcomes = outcomes or [0] * len(treatment)
    return LongitudinalDataset.from_records(subject_rows("s", arm, outcomes, treatment=treatment, **kw), SCHEMA)


def test_carry_forward_fills_short_gap():
    ds = apply_missing_adherence_policy(one(1, [1, "", 1]), "carry_forward", m=3)
    assert ds.treatment.tolist() == [1, 1, 1]
    assert not ds.measure_censor.any()


def test_carry_forward_censors_at_mth_missing_visit():
    ds = apply_missing_adherence_policy(one(1, [1, "", "", "", 1]), "carry_forward", m=3)
    assert ds.measure_censor.tolist() == [False, False, False, True, False]
    assert ds.treatment[:3].tolist() == [1, 1, 1]
    view = derive_analysis_view(ds)
    assert view.visit.tolist() == [0, 1, 2, 3]
    assert view.reason[-1] == MEASUREMENT


def test_assume_nonadherent():
    ds = apply_missing_adherence_policy(one(1, [1, ""]), "assume_nonadherent", protocol=STATIC)
    assert ds.treatment.tolist() == [1, 0]
    with pytest.raises(DataError):
        apply_missing_adherence_policy(one(1, [1, ""]), "assume_nonadherent")


def test_measurement_weighting_flags_first_gap():
    ds = apply_missing_adherence_policy(one(0, [0, "", 0, ""]), "measurement_weighting")
    assert ds.measure_censor.tolist() == [False, True, False, False]
    assert derive_analysis_view(ds).reason.tolist() == [0, MEASUREMENT]


def test_policy_errors():
    with pytest.raises(DataError, match="unknown"):
        apply_missing_adherence_policy(one(1, [1]), "impute")
    with pytest.raises(DataError, match="visit 0"):
        apply_missing_adherence_policy(one(1, ["", 1]), "carry_forward", m=2)


def reference_carry_forward(a, m):
    filled, flags, last, run = [], [], None, 0
    for x in a:
        if x is None:
            run += 1
            flags.append(run == m)
            filled.append(last if run < m else None)
        else:
            run, last = 0, x
            flags.append(False)
            filled.append(x)
    return filled, flags


@settings(max_examples=80, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(0, 1)), min_size=1, max_size=10), st.integers(1, 4))
def test_carry_forward_matches_scanner(a, m):
    a = [1] + a
    ds = apply_missing_adherence_policy(one(1, ["" if x is None else x for x in a]), "carry_forward", m=m)
    filled, flags = reference_carry_forward(a, m)
    got = [None if np.isnan(x) else int(x) for x in ds.treatment]
    assert got == filled
    assert ds.measure_censor.tolist() == flags


def test_itt_view_is_lossless():
    rows = subject_rows("a", 1, [0, 0, 1], treatment=[1, 0, 0]) + subject_rows("b", 0, [0, 0], ltfu_last=True)
    ds = LongitudinalDataset.from_records(rows, SCHEMA)
    v = derive_analysis_view(ds)
    assert np.array_equal(v.rows, np.arange(ds.n_rows))
    assert v.event.tolist() == [0, 0, 1, 0, 0]
    assert v.reason.tolist() == [0, 0, 0, 0, LTFU]


def test_per_protocol_view_stops_at_deviation():
    ds = one(1, [1, 1, 0, 0, 1], outcomes=[0, 0, 0, 0, 1])
    v = derive_analysis_view(ds, evaluate_adherence(ds, STATIC), censor_at_deviation=True)
    assert v.visit[v.at_risk].tolist() == [0, 1]
    assert v.reason_names()[-1] == "deviation"
    assert v.reason[-1] == DEVIATION
    assert not v.event.any()


def test_competing_views():
    ds = competing_fixture()
    total = derive_analysis_view(ds)
    composite = derive_analysis_view(ds, composite_outcome=True)
    direct = derive_analysis_view(ds, censor_at_competing=True)
    assert composite.event.sum() == total.event.sum() + total.competing.sum()
    assert not direct.competing.any()
    assert (direct.reason == COMPETING).sum() == total.competing.sum()
    with pytest.raises(EstimationError, match="contradictory"):
        derive_analysis_view(ds, composite_outcome=True, censor_at_competing=True)
    with pytest.raises(EstimationError):
        derive_analysis_view(ds, censor_at_deviation=True)
