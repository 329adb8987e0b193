import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pptrial.errors import EstimationError
from pptrial.estimate import EffectEstimate, arm_curves, cumulative_incidence
from pptrial.views import derive_analysis_view

from fixtures import competing_fixture


def test_competing_fixture_curve():
    v = derive_analysis_view(competing_fixture())
    c = arm_curves(v.visit, v.arm, v.at_risk, v.event, v.competing, v.horizon)
    np.testing.assert_allclose(c[1].risk, [0.05, 0.14, 0.17], atol=1e-15)
    np.testing.assert_allclose(c[0].competing_risk, [0.05, 0.06, 0.06], atol=1e-15)


def test_no_competing_reduces_to_kaplan_meier():
    n = np.array([100.0, 80, 60])
    y = np.array([10.0, 8, 3])
    c = cumulative_incidence(n, y, np.zeros(3))
    np.testing.assert_allclose(c.risk, 1 - np.cumprod(1 - y / n))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 1000), st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=12))
def test_probabilities_partition(rows):
    n = np.array([r[0] for r in rows])
    y = np.array([r[0] * r[1] * 0.5 for r in rows])
    d = np.array([r[0] * r[2] * 0.5 for r in rows])
    c = cumulative_incidence(n, y, d)
    np.testing.assert_allclose(c.risk + c.competing_risk + c.survival, 1.0, atol=1e-12)
    assert (np.diff(c.risk) >= -1e-15).all()


def test_effect_estimate_quantities():
    e = EffectEstimate("x", {0: [0.0, 0.2], 1: [0.1, 0.3]})
    np.testing.assert_allclose(e.rd, [0.1, 0.1])
    assert np.isnan(e.rr[0]) and e.rr[1] == pytest.approx(1.5)
    d = e.to_dict()
    assert d["rr"][0] is None and d["rr_defined"] == [False, True]
    assert list(e.curve_rows())[0] == (0, 0, 0.0)
    with pytest.raises(EstimationError):
        EffectEstimate("x", {1: [0.1]})
