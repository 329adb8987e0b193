import numpy as np
import pytest

from conftest import preset_data
from pptrial.data import LongitudinalDataset
from pptrial.errors import EstimationError, PositivityError
from pptrial.itt import itt_unadjusted
from pptrial.point import PointPPConfig, biased_comparator, initiated, negative_control_outcome, pp_point_adjusted
from pptrial.views import derive_analysis_view

from fixtures import SCHEMA, subject_rows


def toy(adherent_events):
    """Arm 1 has 10 subjects, arm 0 has 10; ``adherent_events`` = (adherers, events among them) per arm."""
    rows = []
    for arm, (n_adh, n_ev, n_ev_non) in enumerate(adherent_events):
        for i in range(10):
            adh = i < n_adh
            ev = (i < n_ev) if adh else (i - n_adh < n_ev_non)
            a = arm if adh else 1 - arm
            rows += subject_rows(f"{arm}-{i}", arm, [0, int(ev)], treatment=[a, a], B=i % 2)
    return LongitudinalDataset.from_records(rows, SCHEMA)


def test_full_adherence_returns_itt_contrast():
    ds = toy([(10, 3, 0), (10, 1, 0)])
    est = pp_point_adjusted(ds, PointPPConfig(confounders=("B",)))
    np.testing.assert_allclose(est.rd, itt_unadjusted(derive_analysis_view(ds)).rd)
    assert est.kind == "per-protocol"


def test_naive_pp_by_hand():
    ds = toy([(8, 4, 0), (5, 1, 2)])
    naive = biased_comparator(ds, "naive_pp")
    assert naive.risk[0][-1] == pytest.approx(4 / 8)
    assert naive.risk[1][-1] == pytest.approx(1 / 5)
    at = biased_comparator(ds, "as_treated")
    # received A=1: 5 adherent arm-1 subjects (1 event) + 2 crossovers from arm 0 (0 events)
    assert at.risk[1][-1] == pytest.approx(1 / 7)
    assert at.kind == "biased-comparator"
    with pytest.raises(AttributeError):
        naive.label = "per-protocol"
    with pytest.raises(EstimationError):
        biased_comparator(ds, "per_protocol")


def test_no_adherers_in_an_arm():
    with pytest.raises(PositivityError):
        pp_point_adjusted(toy([(5, 1, 0), (0, 0, 2)]))


def test_saturated_methods_agree():
    cfg, ds = preset_data("S-POINT", 4000, 8)
    kw = dict(values=cfg.protocol_values, confounders=("B",), saturated=True)
    ipw = pp_point_adjusted(ds, PointPPConfig(method="ipw", **kw))
    std = pp_point_adjusted(ds, PointPPConfig(method="standardization", **kw))
    np.testing.assert_allclose(ipw.risk[0], std.risk[0], atol=1e-12)
    np.testing.assert_allclose(ipw.risk[1], std.risk[1], atol=1e-12)


def test_initiated_and_config_checks():
    ds = toy([(8, 0, 0), (5, 0, 0)])
    assert initiated(ds).sum() == 13
    with pytest.raises(EstimationError):
        PointPPConfig(values=(0, 2))
    with pytest.raises(EstimationError):
        PointPPConfig(method="matching")


def test_negative_control_outcome_dataset():
    schema = SCHEMA + [{"name": "nc", "kind": "binary"}]
    rows = subject_rows("a", 1, [0, 0, 0]) + subject_rows("b", 0, [0, 1])
    for r, v in zip(rows, [0, 1, 0, 0, 0]):
        r["nc"] = v
    ds = LongitudinalDataset.from_records(rows, schema)
    nc = negative_control_outcome(ds, "nc")
    assert nc.outcome.tolist() == [0, 1, 0, 0]
    assert nc.ltfu.tolist() == [0, 0, 0, 1]
