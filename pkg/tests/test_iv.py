import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import preset_data
from pptrial.errors import DataError, EstimationError, InstrumentViolationError, WeakInstrumentError
from pptrial.iv import (IVSummary, balke_pearl, check_instrument, iv_bounds, iv_falsification, iv_wald,
                        natural_bounds, wald_ratio)

RESPONSE = [(0, 0), (0, 1), (1, 0), (1, 1)]  # potential value under 0 and under 1


def table(weights):
    """P[z, a, y] implied by a distribution over (compliance type, outcome type)."""
    p = np.zeros((2, 2, 2))
    for w, (c, r) in zip(weights, itertools.product(range(4), range(4))):
        for z in (0, 1):
            a = RESPONSE[c][z]
            p[z, a, RESPONSE[r][a]] += w
    return p


def true_ate(weights):
    return sum(w * (RESPONSE[r][1] - RESPONSE[r][0]) for w, (_, r) in zip(weights, itertools.product(range(4), range(4))))


mixtures = st.lists(st.floats(0, 1), min_size=16, max_size=16).filter(lambda w: sum(w) > 1e-3)


@settings(max_examples=200, deadline=None)
@given(mixtures)
def test_bounds_contain_truth_and_nest(w):
    w = np.array(w) / sum(w)
    p = table(w)
    lo, hi = balke_pearl(p)
    nlo, nhi = natural_bounds(p)
    ate = true_ate(w)
    assert lo - 1e-9 <= ate <= hi + 1e-9
    assert nlo - 1e-9 <= lo <= hi <= nhi + 1e-9
    assert -1 <= lo and hi <= 1


def test_wald_exact():
    assert wald_ratio(0.10, 0.50) == pytest.approx(0.20)
    with pytest.raises(WeakInstrumentError):
        wald_ratio(0.1, 0.001)


def test_wald_from_summary_matches_hand_ratio():
    w = np.full(16, 0.02)
    w[4:8] = 0.17  # mostly compliers
    s = IVSummary(table(w / w.sum()))
    est = iv_wald(s)
    expected = (s.p_y1(1) - s.p_y1(0)) / (s.p_a1(1) - s.p_a1(0))
    assert est.extras["wald"] == pytest.approx(expected)
    with pytest.raises(EstimationError):
        iv_wald(s, assumption="exchangeability")


def test_violation_raises():
    p = np.zeros((2, 2, 2))
    p[0, 0, 0], p[0, 1, 1] = 0.9, 0.1
    p[1, 0, 1], p[1, 1, 1] = 0.9, 0.1
    with pytest.raises(InstrumentViolationError):
        iv_bounds(IVSummary(p))
    assert iv_bounds(IVSummary(p), method="natural").width <= 2


def test_summary_validation():
    with pytest.raises(DataError):
        IVSummary(np.zeros((2, 2)))
    with pytest.raises(DataError):
        IVSummary.from_counts(np.zeros((2, 2, 2)))
    s = IVSummary.from_counts(np.arange(1, 9).reshape(2, 2, 2))
    assert s.p.sum() == pytest.approx(2.0)


def test_instrument_checks_on_preset():
    _, ds = preset_data("S-IV", 3000, 6)
    s = IVSummary.from_dataset(ds)
    rep = check_instrument(s, ds, ["B"])
    assert rep.relevance_holds
    assert rep.strength_ci[0] <= rep.strength <= rep.strength_ci[1]
    with pytest.raises(EstimationError, match="justification"):
        iv_falsification(ds, s, justification="")
