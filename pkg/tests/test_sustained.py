import numpy as np
import pytest

from conftest import preset_data
from pptrial.errors import EstimationError
from pptrial.gformula import GFormulaSpec, parametric_gformula
from pptrial.sustained import gestimate_snmm, pp_baseline_regression, pp_ipw_sustained

from fixtures import snmm_fixture


@pytest.fixture(scope="module")
def sustained():
    return preset_data("S-SUSTAINED", 4000, 12)


def test_ipw_weights_and_labels(sustained):
    cfg, ds = sustained
    est = pp_ipw_sustained(ds, cfg.protocol(), ["L"], ["B", "L0"])
    assert est.kind == "per-protocol"
    w = est.diagnostics["weights"]
    assert w["truncation"]["percentile"] == 99.5
    assert (np.diff(est.risk[0]) >= -1e-12).all()


def test_gformula_deterministic_and_natural_course(sustained):
    cfg, ds = sustained
    spec = GFormulaSpec.default(ds, ["L"], ["B", "L0"], protocol=cfg.protocol(), n_mc=2000, seed=4)
    a = parametric_gformula(ds, spec)
    b = parametric_gformula(ds, spec)
    np.testing.assert_array_equal(a.estimate.rd, b.estimate.rd)
    assert a.max_natural_course_z() < 4
    assert {r["covariate"] for r in a.covariate_means} == {"L"}
    with pytest.raises(EstimationError):
        GFormulaSpec.default(ds, ["L"], ["B"], protocol=cfg.protocol(), n_mc=1)


def test_methods_agree_roughly(sustained):
    cfg, ds = sustained
    pr = cfg.protocol()
    ipw = pp_ipw_sustained(ds, pr, ["L"], ["B", "L0"]).final()
    gest = gestimate_snmm(ds, pr, ["L"], baseline_covariates=["B", "L0"])[1].final()
    assert abs(ipw - gest) < 0.05
    assert pp_baseline_regression(ds, pr, ["B", "L0"]).kind == "comparator"


def test_snmm_recovers_blip_and_interval():
    r, _ = gestimate_snmm(snmm_fixture(n=3000, seed=3), None, ["L"], outcome="Y")
    assert abs(r.psi_refined - 0.3) < 0.06
    lo, hi = r.ci
    assert lo < r.psi_refined < hi
