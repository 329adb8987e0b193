import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import preset_data
from pptrial.balance import imbalance_report, standardized_mean_difference
from pptrial.diagnostics import (BootstrapPlan, bootstrap_ci, bootstrap_replicates, evalue, percentile_interval,
                                 weight_diagnostics)
from pptrial.errors import BootstrapError, EstimationError
from pptrial.itt import itt_unadjusted
from pptrial.views import derive_analysis_view
from pptrial.weights import WeightSeries


def itt(ds):
    return itt_unadjusted(derive_analysis_view(ds))


@pytest.fixture(scope="module")
def trial():
    return preset_data("S-NULL", 800, 3)[1]


def test_bootstrap_is_reproducible(trial):
    a = bootstrap_ci(itt, trial, BootstrapPlan(B=30, seed=9))
    b = bootstrap_ci(itt, trial, BootstrapPlan(B=30, seed=9, workers=2))
    for q in a.ci:
        np.testing.assert_array_equal(a.ci[q][0], b.ci[q][0])
        np.testing.assert_array_equal(a.ci[q][1], b.ci[q][1])
    lo, hi = a.ci["rd"]
    assert lo[-1] <= a.rd[-1] <= hi[-1]
    assert a.diagnostics["bootstrap"]["successes"] == 30


def test_bootstrap_failure_limit(trial):
    def flaky(ds):
        raise EstimationError("always fails")

    with pytest.raises(BootstrapError) as err:
        bootstrap_replicates(flaky, trial, BootstrapPlan(B=10))
    assert err.value.taxonomy == {"EstimationError": 10}
    with pytest.raises(EstimationError):
        BootstrapPlan(B=1)


def test_percentile_interval_order_statistics():
    lo, hi = percentile_interval(np.arange(1, 101, dtype=float), 0.90)
    assert (lo, hi) == (5.0, 95.0)


def test_evalue_known_values():
    assert evalue(1.0) == 1.0
    assert evalue(2.0) == pytest.approx(2 + math.sqrt(2))
    assert evalue(0.5) == pytest.approx(evalue(2.0))
    with pytest.raises(EstimationError):
        evalue(0.0)


@given(st.floats(1.0, 50.0))
def test_evalue_is_at_least_rr(rr):
    assert evalue(rr) >= rr
    assert evalue(1 / rr) == pytest.approx(evalue(rr))


def test_drift_flag_is_per_arm():
    visit = np.tile([0, 1], 4)
    arm = np.repeat([0, 1], 4)
    # pooled mean per visit is 1.0, but each arm drifts in opposite directions
    w = np.where(arm == 0, 1.3, 0.7) * (visit == 1) + (visit == 0)
    ws = WeightSeries(np.arange(8), visit, np.ones(8, bool), {"adherence": w}, group=arm)
    flags = weight_diagnostics(ws).flags
    assert flags and flags[0].startswith("drift") and "arm 0, visit 1" in flags[0]
    pooled = WeightSeries(np.arange(8), visit, np.ones(8, bool), {"adherence": w})
    assert not weight_diagnostics(pooled).flags


def test_smd_and_imbalance_report():
    _, ds = preset_data("S-IMBAL", 4000, 1)
    smd = standardized_mean_difference(ds, "B")
    b, z = ds.baseline("B"), ds.subject_arm
    p1, p0 = b[z == 1].mean(), b[z == 0].mean()
    assert smd == pytest.approx((p1 - p0) / math.sqrt((p1 * (1 - p1) + p0 * (1 - p0)) / 2))
    rows = imbalance_report(ds, ["B"], threshold=0.1)
    assert any(r.covariate == "B" and r.flagged for r in rows)
