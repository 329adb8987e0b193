import numpy as np
import pytest

from conftest import preset_data
from pptrial.data import LongitudinalDataset
from pptrial.errors import EstimationError
from pptrial.itt import (competing_effect, itt_ipcw, itt_ipw_baseline, itt_standardized, itt_unadjusted,
                         subgroup_effects)
from pptrial.views import derive_analysis_view

from fixtures import SCHEMA, competing_fixture, subject_rows


def small(name="S-IMBAL", n=3000, seed=4):
    return preset_data(name, n, seed)[1]


def test_unadjusted_on_fixture():
    est = itt_unadjusted(derive_analysis_view(competing_fixture()))
    np.testing.assert_allclose(est.rd, 0.0, atol=1e-15)
    np.testing.assert_allclose(est.risk[1], [0.05, 0.14, 0.17], atol=1e-15)
    assert est.competing_risk is not None


def test_pseudo_itt_label_under_dropout():
    rows = subject_rows("a", 1, [0, 0], ltfu_last=True) + subject_rows("b", 0, [0, 1])
    rows += subject_rows("c", 1, [0, 1]) + subject_rows("d", 0, [0, 0])
    est = itt_unadjusted(derive_analysis_view(LongitudinalDataset.from_records(rows, SCHEMA)))
    assert "pseudo" in est.label.lower()


def test_saturated_standardization_equals_saturated_ipw():
    v = derive_analysis_view(small())
    std = itt_standardized(v, ["B"], saturated=True)
    ipw = itt_ipw_baseline(v, ["B"], saturated=True, truncate=None)
    np.testing.assert_allclose(std.risk[0], ipw.risk[0], atol=1e-12)
    np.testing.assert_allclose(std.risk[1], ipw.risk[1], atol=1e-12)


def test_adjustment_without_covariates_is_unadjusted():
    v = derive_analysis_view(small())
    np.testing.assert_allclose(itt_standardized(v, [], saturated=True).rd, itt_unadjusted(v).rd, atol=1e-12)


def test_ipcw_without_dropout_matches_unadjusted():
    ds = small("S-NULL", 2000, 2)
    if ds.ltfu.any():
        pytest.skip("preset has dropout")
    np.testing.assert_allclose(itt_ipcw(ds, ["L"], ["B"]).rd, itt_unadjusted(derive_analysis_view(ds)).rd,
                               atol=1e-12)


def test_competing_estimands_differ_and_require_justification():
    ds = small("S-COMPETE", 3000, 5)
    total = competing_effect(derive_analysis_view(ds), "total")
    comp = competing_effect(derive_analysis_view(ds, composite_outcome=True), "composite")
    assert comp.risk[0][-1] >= total.risk[0][-1]
    with pytest.raises(EstimationError):
        competing_effect(derive_analysis_view(ds, censor_at_competing=True), "direct", ["L"], ["B"])
    direct = competing_effect(derive_analysis_view(ds, censor_at_competing=True), "direct", ["L"], ["B"],
                              justification="mechanism")
    # removing competitors from the risk set can only raise the outcome risk
    assert direct.risk[0][-1] > total.risk[0][-1]
    np.testing.assert_array_equal(direct.competing_risk[0], total.competing_risk[0])


def test_subgroups_report_absolute_risks_per_stratum():
    v = derive_analysis_view(small())
    res = subgroup_effects(v, "B")
    d = res.to_dict()
    assert len(d["strata"]) == 2
    assert d["scale"].startswith("additive")
    for est in d["strata"].values():
        assert set(est["risks"]) == {"0", "1"} and len(est["rd"]) == len(est["times"])
