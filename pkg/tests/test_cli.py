import json

import pytest

from pptrial.cli import main
from pptrial.errors import PlanError
from pptrial.report import AnalysisPlan


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "S-COMPETE", "600", "7", str(out), "--n-mc", "2000"]) == 0
    return out / "S-COMPETE_n600_s7.csv", out / "S-COMPETE_n600_s7.truth.json"


def plan_file(tmp_path, simulated, requests, **extra):
    csv_path, truth = simulated
    doc = json.loads(truth.read_text())
    plan = {"dataset": str(csv_path), "schema": doc["schema"], "protocols": {"p": doc["protocol"]},
            "requests": requests, **extra}
    p = tmp_path / "plan.json"
    p.write_text(json.dumps(plan))
    return p


ITT = {"id": "itt", "estimator": "itt_unadjusted"}
PP = {"id": "pp", "estimator": "pp_ipw_sustained", "protocol": "p", "covariates": ["B"],
      "timevarying_covariates": ["L"]}


def test_simulate_is_deterministic(tmp_path, simulated):
    assert main(["simulate", "S-COMPETE", "600", "7", str(tmp_path), "--n-mc", "2000"]) == 0
    assert (tmp_path / "S-COMPETE_n600_s7.csv").read_bytes() == simulated[0].read_bytes()
    assert (tmp_path / "S-COMPETE_n600_s7.truth.json").read_bytes() == simulated[1].read_bytes()


def test_unknown_preset(tmp_path, capsys):
    assert main(["simulate", "S-NOPE", "--out", str(tmp_path)]) == 1
    assert "S-NULL" in capsys.readouterr().err


def test_validate(simulated, tmp_path, capsys):
    assert main(["validate", str(simulated[0]), "--schema", str(simulated[1])]) == 0
    assert "600 subjects" in capsys.readouterr().out
    bad = tmp_path / "bad.csv"
    bad.write_text(simulated[0].read_text().replace("\n", "\nzz,0,1,1,1,0,0\n", 1))
    assert main(["validate", str(bad), "--schema", str(simulated[1])]) == 1


def test_estimate_writes_paired_bundle(tmp_path, simulated):
    plan = plan_file(tmp_path, simulated, [ITT, PP])
    out = tmp_path / "out"
    assert main(["estimate", "--plan", str(plan), "--out", str(out), "--seed", "3"]) == 0
    report = json.loads((out / "report.json").read_text())
    cats = {r["id"]: r["category"] for r in report["results"]}
    assert cats == {"itt": "itt", "pp": "per-protocol"}
    assert (out / "pp_curves.csv").read_text().startswith("time,arm,risk")
    first = (out / "report.json").read_bytes()
    assert main(["estimate", "--plan", str(plan), "--out", str(out), "--seed", "3"]) == 0
    assert (out / "report.json").read_bytes() == first


def test_per_protocol_only_plan_rejected(tmp_path, simulated, capsys):
    plan = plan_file(tmp_path, simulated, [PP])
    assert main(["estimate", "--plan", str(plan), "--out", str(tmp_path / "o")]) == 2
    assert "intention-to-treat" in capsys.readouterr().err
    with pytest.raises(PlanError):
        AnalysisPlan.load(plan)


def test_malformed_plan_names_first_error(tmp_path, simulated, capsys):
    plan = plan_file(tmp_path, simulated, [{"id": "x", "estimator": "magic"}])
    assert main(["estimate", "--plan", str(plan)]) == 2
    assert "magic" in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["estimate", "--plan", str(broken)]) == 2


def test_estimation_failure_exit_code(tmp_path, simulated):
    failing = {"id": "direct", "estimator": "competing_effect", "competing": {"estimand": "direct",
                                                                              "justification": "why"}}
    plan = plan_file(tmp_path, simulated, [ITT, failing])
    out = tmp_path / "o"
    assert main(["estimate", "--plan", str(plan), "--out", str(out)]) == 3
    assert not (out / "report.json").exists()
    assert main(["estimate", "--plan", str(plan), "--out", str(out), "--allow-partial"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert {r["id"]: r["status"] for r in report["results"]} == {"itt": "ok", "direct": "error"}


def test_diagnose(tmp_path, simulated):
    plan = plan_file(tmp_path, simulated, [ITT, PP], diagnostics={"imbalance_covariates": ["B"]})
    out = tmp_path / "d"
    assert main(["diagnose", "--plan", str(plan), "--out", str(out)]) == 0
    rep = json.loads((out / "diagnostics.json").read_text())
    assert rep["imbalance"][0]["covariate"] == "B"
    assert "pp" in rep["weights"]
