import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pptrial.data import LongitudinalDataset
from pptrial.errors import ProtocolError
from pptrial.protocol import ArmStrategy, Predicate, StrategyProtocol, evaluate_adherence

SCHEMA = [{"name": "L", "kind": "continuous"}, {"name": "tox", "kind": "binary"}]


def dataset(subjects):
    """``subjects``: list of (arm, treatments, L values or None, tox values or None)."""
    rows = []
    for i, (arm, a, L, tox) in enumerate(subjects):
        for k, ak in enumerate(a):
            rows.append({"subject_id": f"s{i}", "visit": k, "arm": arm, "treatment": ak, "outcome": 0,
                         "competing": 0, "ltfu": 0, "L": 0.0 if L is None else L[k],
                         "tox": 0 if tox is None else tox[k]})
    return LongitudinalDataset.from_records(rows, SCHEMA)


TOX = Predicate("tox", "==", 1, label="toxicity")


def test_static_deviation_dated_at_first_departure():
    ds = dataset([(1, [1, 1, 0, 1], None, None), (0, [0, 0, 0, 0], None, None)])
    tr = evaluate_adherence(ds, StrategyProtocol.static())
    assert tr.deviation("s0") == 2
    assert tr.deviation("s1") is None


def test_toxicity_excuse_prevents_deviation():
    ds = dataset([(1, [1, 1, 0, 0], None, [0, 1, 1, 1])])
    tr = evaluate_adherence(ds, StrategyProtocol.static(excused=(TOX,)))
    assert tr.deviation("s0") is None
    assert tr.excused_events("s0")[0] == (1, "toxicity")


def test_clinician_discretion_requires_flag():
    schema = [{"name": "discretion", "kind": "binary"}]
    rows = [{"subject_id": "s", "visit": k, "arm": 1, "treatment": a, "outcome": 0, "competing": 0, "ltfu": 0,
             "discretion": d} for k, (a, d) in enumerate([(1, 0), (0, 1)])]
    ds = LongitudinalDataset.from_records(rows, schema)
    assert evaluate_adherence(ds, StrategyProtocol.static()).deviation("s") == 1
    loose = StrategyProtocol.static(allow_clinician_discretion=True)
    assert evaluate_adherence(ds, loose).deviation("s") is None


def dynamic(grace):
    trig = Predicate("L", ">", 120)
    return StrategyProtocol("start-when-high", {1: ArmStrategy(1, trig), 0: ArmStrategy(0)}, grace_period=grace)


@pytest.mark.parametrize("start, expected", [(4, None), (5, 5), (2, None)])
def test_dynamic_trigger_with_grace(start, expected):
    L = [100, 110, 130, 125, 125, 125, 125]
    a = [0] * start + [1] * (7 - start)
    ds = dataset([(1, a, L, None)])
    assert evaluate_adherence(ds, dynamic(2)).deviation("s0") == expected


def test_dynamic_pre_trigger_requirement():
    ds = dataset([(1, [0, 1, 1], [100, 100, 130], None)])
    assert evaluate_adherence(ds, dynamic(0)).deviation("s0") is None
    strict = StrategyProtocol("wait", {1: ArmStrategy(1, Predicate("L", ">", 120), pre_trigger=0), 0: ArmStrategy(0)})
    assert evaluate_adherence(ds, strict).deviation("s0") == 1
    from_json = StrategyProtocol.from_json(dynamic(0).to_json() | {"arms": {
        "1": {"value": 1, "initiate_when": {"covariate": "L", "op": ">", "value": 120}}, "0": 0}})
    assert evaluate_adherence(ds, from_json).deviation("s0") == 1


def test_unknown_covariate_and_arm():
    bad = StrategyProtocol.static(excused=(Predicate("missing", ">", 1),))
    with pytest.raises(ProtocolError, match="unknown covariates"):
        evaluate_adherence(dataset([(1, [1], None, None)]), bad)
    with pytest.raises(ProtocolError, match="no strategy for arm"):
        evaluate_adherence(dataset([(0, [0], None, None)]), StrategyProtocol("one", {1: ArmStrategy(1)}))
    with pytest.raises(ProtocolError):
        Predicate("L", "~", 1)
    with pytest.raises(ProtocolError):
        StrategyProtocol.static(grace_period=-1)


def test_json_round_trip():
    p = StrategyProtocol("x", {1: ArmStrategy(1, Predicate("L", ">=", 3.5)), 0: ArmStrategy(0)},
                         excused=(TOX,), grace_period=2, description="d")
    assert StrategyProtocol.from_json(p.to_json()) == p
    with pytest.raises(ProtocolError, match="malformed"):
        StrategyProtocol.from_json({"arms": {}})


treatments = st.lists(st.lists(st.integers(0, 1), min_size=1, max_size=8), min_size=1, max_size=12)


@settings(max_examples=60, deadline=None)
@given(treatments, st.lists(st.integers(0, 1), min_size=12, max_size=12))
def test_zero_grace_matches_brute_force(traj, arms):
    ds = dataset([(arms[i], a, None, None) for i, a in enumerate(traj)])
    tr = evaluate_adherence(ds, StrategyProtocol.static())
    for i, a in enumerate(traj):
        expect = next((k for k, ak in enumerate(a) if ak != arms[i]), None)
        assert tr.deviation(f"s{i}") == expect


@settings(max_examples=60, deadline=None)
@given(treatments)
def test_deviation_never_earlier_with_longer_grace(traj):
    ds = dataset([(1, a, None, None) for a in traj])
    previous = None
    for g in range(4):
        t = evaluate_adherence(ds, StrategyProtocol.static(grace_period=g)).deviation_time
        t = np.where(t < 0, 10 ** 6, t)
        if previous is not None:
            assert (t >= previous).all()
        previous = t
