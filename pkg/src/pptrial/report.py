"""Analysis plans, request execution and JSON report bundles."""
from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .data import CovariateSchema, load_dataset, validate_dataset
from .errors import PlanError, PPTrialError
from .protocol import StrategyProtocol

ITT_ESTIMATORS = ("itt_unadjusted", "itt_standardized", "itt_ipw_baseline", "itt_ipcw", "competing_effect")
PP_ESTIMATORS = ("pp_point_adjusted", "pp_ipw_sustained", "parametric_gformula", "gestimate_snmm",
                 "iv_wald", "iv_bounds")
BIASED_ESTIMATORS = ("biased_comparator", "pp_baseline_regression")
NEEDS_PROTOCOL = ("pp_point_adjusted", "pp_ipw_sustained", "parametric_gformula", "gestimate_snmm",
                  "pp_baseline_regression", "biased_comparator")
VIEW_ESTIMATORS = ("itt_unadjusted", "itt_standardized", "itt_ipw_baseline")
PAIRING_MESSAGE = ("a per-protocol estimate must be reported together with the intention-to-treat estimate; "
                   "add an ITT request (e.g. itt_unadjusted) to the plan")


def category(estimator: str) -> str:
    if estimator in ITT_ESTIMATORS:
        return "itt"
    if estimator in BIASED_ESTIMATORS:
        return "biased-comparator"
    return "per-protocol"


def load_schema(name: str) -> dict:
    text = resources.files("pptrial").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _schema_errors(instance, name):
    validator = jsonschema.Draft202012Validator(load_schema(name))
    return sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))


def _first_error(errors) -> str:
    e = errors[0]
    where = "/".join(str(p) for p in e.absolute_path) or "<root>"
    return f"{where}: {e.message}"


def validate_report(bundle: dict) -> None:
    errs = _schema_errors(bundle, "report")
    if errs:
        raise PlanError(f"report does not match its schema: {_first_error(errs)}")


@dataclass
class EstimandRequest:
    id: str
    estimator: str
    label: str | None = None
    protocol: str | None = None
    covariates: list = field(default_factory=list)
    timevarying_covariates: list = field(default_factory=list)
    competing: dict | None = None
    subgroups: dict | None = None
    bootstrap: dict | None = None
    options: dict = field(default_factory=dict)

    @property
    def category(self) -> str:
        return category(self.estimator)


@dataclass
class AnalysisPlan:
    dataset: Path
    requests: list
    schema: CovariateSchema
    protocols: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    missing_adherence_policy: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    output: str | None = None
    source: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "AnalysisPlan":
        path = Path(path)
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise PlanError(f"plan file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise PlanError(f"plan is not valid JSON: {exc}") from None
        return cls.from_json(d, base=path.parent)

    @classmethod
    def from_json(cls, d, base=".") -> "AnalysisPlan":
        """Schema validation, then semantic checks (protocol references and
        the rule that per-protocol requests come with an ITT request)."""
        errs = _schema_errors(d, "plan")
        if errs:
            raise PlanError(f"plan schema violation at {_first_error(errs)}")
        base = Path(base)
        resolve = lambda p: Path(p) if Path(p).is_absolute() else base / p  # noqa: E731
        meta = dict(d.get("meta", {}))
        schema_src = d.get("schema", [])
        if isinstance(schema_src, str):
            with open(resolve(schema_src)) as fh:
                side = json.load(fh)
            schema_src = side.get("schema", side) if isinstance(side, dict) else side
            if isinstance(side, dict):
                meta = {**side.get("meta", {}), **meta}
        schema = CovariateSchema.coerce(schema_src)
        protocols = {}
        for name, p in d.get("protocols", {}).items():
            if isinstance(p, str):
                with open(resolve(p)) as fh:
                    p = json.load(fh)
            perrs = _schema_errors(p, "protocol")
            if perrs:
                raise PlanError(f"protocol {name!r} schema violation at {_first_error(perrs)}")
            protocols[name] = StrategyProtocol.from_json(p)
        requests = [EstimandRequest(**r) for r in d["requests"]]
        ids = [r.id for r in requests]
        if len(set(ids)) != len(ids):
            raise PlanError("request ids must be unique")
        for r in requests:
            if r.estimator in NEEDS_PROTOCOL and r.protocol not in protocols:
                raise PlanError(f"request {r.id!r}: estimator {r.estimator} needs a protocol defined in 'protocols'")
            if r.subgroups is not None and r.estimator not in VIEW_ESTIMATORS:
                raise PlanError(f"request {r.id!r}: subgroups are supported for {', '.join(VIEW_ESTIMATORS)}")
            if r.estimator == "competing_effect" and r.competing is None:
                raise PlanError(f"request {r.id!r}: competing_effect needs a 'competing' block")
        if any(r.category != "itt" for r in requests) and not any(r.category == "itt" for r in requests):
            raise PlanError(PAIRING_MESSAGE)
        pol = d.get("missing_adherence_policy")
        if pol is not None and pol["kind"] == "assume_nonadherent" and pol.get("protocol") not in protocols:
            raise PlanError("assume_nonadherent needs 'protocol' naming a plan protocol")
        return cls(resolve(d["dataset"]), requests, schema, protocols, meta, pol, d.get("diagnostics", {}),
                   d.get("output"), d)

    def load_dataset(self):
        from .views import apply_missing_adherence_policy

        ds = load_dataset(self.dataset, self.schema, meta=self.meta)
        if self.missing_adherence_policy:
            pol = self.missing_adherence_policy
            prot = self.protocols.get(pol.get("protocol")) if pol.get("protocol") else None
            ds = apply_missing_adherence_policy(ds, pol, protocol=prot)
        return ds


def _estimator_for(req: EstimandRequest, plan: AnalysisPlan, seed: int):
    """``(fn(ds) -> EffectEstimate, extras(ds) -> dict)`` for a request."""
    from . import gformula, itt, iv, point, sustained
    from .views import derive_analysis_view

    o = dict(req.options)
    bl, tv = list(req.covariates), list(req.timevarying_covariates)
    prot = plan.protocols.get(req.protocol) if req.protocol else None
    e = req.estimator
    extra = {}

    if e == "itt_unadjusted":
        return lambda ds: itt.itt_unadjusted(derive_analysis_view(ds)), extra
    if e == "itt_standardized":
        return lambda ds: itt.itt_standardized(derive_analysis_view(ds), bl, o.get("saturated", False)), extra
    if e == "itt_ipw_baseline":
        return lambda ds: itt.itt_ipw_baseline(derive_analysis_view(ds), bl, o.get("saturated", False)), extra
    if e == "itt_ipcw":
        return lambda ds: itt.itt_ipcw(ds, tv, bl), extra
    if e == "competing_effect":
        c = req.competing
        return (lambda ds: itt.competing_effect(derive_analysis_view(ds), c["estimand"], tv, bl,
                                                c.get("justification"))), extra
    if e == "pp_point_adjusted":
        cfg = point.PointPPConfig.from_protocol(prot, confounders=tuple(bl), method=o.get("method", "ipw"),
                                                saturated=o.get("saturated", False))
        return lambda ds: point.pp_point_adjusted(ds, cfg), extra
    if e == "biased_comparator":
        values = (prot.arms[0].value, prot.arms[1].value)
        return lambda ds: point.biased_comparator(ds, o.get("mode", "naive_pp"), values), extra
    if e == "pp_ipw_sustained":
        return lambda ds: sustained.pp_ipw_sustained(ds, prot, tv, bl), extra
    if e == "pp_baseline_regression":
        return lambda ds: sustained.pp_baseline_regression(ds, prot, bl), extra
    if e == "parametric_gformula":
        def gf(ds):
            spec = gformula.GFormulaSpec.default(ds, tv, bl, protocol=prot, n_mc=int(o.get("n_mc", 10_000)),
                                                 seed=int(o.get("seed", seed)), direct=bool(o.get("direct", False)))
            res = gformula.parametric_gformula(ds, spec)
            extra["natural_course"] = res.covariate_means
            return res.estimate
        return gf, extra

    if e == "gestimate_snmm":
        def ge(ds):
            res, est = sustained.gestimate_snmm(ds, prot, tv, baseline_covariates=bl)
            extra["g_estimation"] = res.to_dict()
            return est
        return ge, extra
    if e == "iv_wald":
        return (lambda ds: iv.iv_wald(iv.IVSummary.from_dataset(ds, o.get("horizon")),
                                      o.get("assumption", "monotonicity"))), extra
    raise PlanError(f"unsupported estimator {e!r}")


def run_request(req: EstimandRequest, plan: AnalysisPlan, ds, seed: int = 0) -> dict:
    """One result entry; estimation failures become ``status: error``."""
    from .diagnostics import BootstrapPlan, bootstrap_ci

    out = {"id": req.id, "estimator": req.estimator, "category": req.category}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if req.estimator == "iv_bounds":
                from .iv import IVSummary, iv_bounds

                s = IVSummary.from_dataset(ds, req.options.get("horizon"))
                out["bounds"] = iv_bounds(s, req.options.get("method", "balke_pearl")).to_json()
                out["bounds"]["table"] = s.to_json()
                out["status"] = "ok"
                return out
            fn, extra = _estimator_for(req, plan, seed)
            est = fn(ds)
            if req.bootstrap:
                bp = dict(req.bootstrap)
                bp.setdefault("seed", seed)
                est = bootstrap_ci(fn, ds, BootstrapPlan(**bp), point=est)
            if req.label:
                try:
                    est.label = f"{req.label}: {est.label}"
                except AttributeError:
                    pass
            if req.subgroups:
                from . import itt
                from .views import derive_analysis_view

                base = {"itt_unadjusted": itt.itt_unadjusted,
                        "itt_standardized": lambda v: itt.itt_standardized(v, req.covariates),
                        "itt_ipw_baseline": lambda v: itt.itt_ipw_baseline(v, req.covariates)}[req.estimator]
                sg = itt.subgroup_effects(derive_analysis_view(ds), req.subgroups["covariate"], base,
                                          pre_specified=req.subgroups["pre_specified"])
                out["subgroups"] = sg.to_dict()
        for w in caught:
            msg = str(w.message)
            if msg not in est.warnings:
                est.warnings.append(msg)
        out["estimate"] = est.to_dict()
        if "g_estimation" in extra:
            out["g_estimation"] = extra["g_estimation"]
        out["status"] = "ok"
        out["_estimate"] = est
        out["_extra"] = extra
    except (PPTrialError, np.linalg.LinAlgError, FloatingPointError) as exc:
        out["status"] = "error"
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def run_plan(plan: AnalysisPlan, seed: int = 0, ds=None, workers: int = 1) -> dict:
    """Run every request and assemble the bundle (deterministic order)."""
    from . import __version__

    ds = plan.load_dataset() if ds is None else ds
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda r: run_request(r, plan, ds, seed), plan.requests))
    else:
        results = [run_request(r, plan, ds, seed) for r in plan.requests]
    itt_ok = [r["id"] for r in results if r["category"] == "itt" and r["status"] == "ok"]
    if not itt_ok:
        # never emit a per-protocol estimate without its ITT companion
        for r in results:
            if r["category"] != "itt" and r["status"] == "ok":
                for k in ("estimate", "bounds", "subgroups", "g_estimation", "_estimate", "_extra"):
                    r.pop(k, None)
                r["status"] = "error"
                r["error"] = "withheld: " + PAIRING_MESSAGE
    bundle = {
        "tool": "pptrial",
        "version": __version__,
        "seed": seed,
        "dataset": {"path": str(plan.dataset), "n_subjects": int(ds.n_subjects), "n_rows": int(ds.n_rows),
                    "horizon": int(ds.horizon)},
        "pairing": {"itt": itt_ok,
                    "per_protocol": [r["id"] for r in results if r["category"] != "itt" and r["status"] == "ok"]},
        "results": results,
    }
    return bundle


def public(bundle: dict) -> dict:
    """Bundle without the in-memory helper fields."""
    out = dict(bundle)
    out["results"] = [{k: v for k, v in r.items() if not k.startswith("_")} for r in bundle["results"]]
    return out


def write_bundle(bundle: dict, out_dir) -> Path:
    """``report.json`` plus ``<id>_curves.csv`` (``time,arm,risk``) per estimate."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clean = public(bundle)
    validate_report(clean)
    path = out_dir / "report.json"
    with open(path, "w") as fh:
        json.dump(clean, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")
    for r in bundle["results"]:
        est = r.get("_estimate")
        if est is None:
            continue
        with open(out_dir / f"{r['id']}_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "arm", "risk"])
            for k, a, risk in est.curve_rows():
                w.writerow([k, a, repr(risk)])
        nc = r.get("_extra", {}).get("natural_course")
        if nc:
            _write_natural_course(out_dir / f"{r['id']}_natural_course.csv", nc)
    return path


def _write_natural_course(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["visit", "covariate", "observed_mean", "simulated_mean"])
        for x in rows:
            w.writerow([x["visit"], x["covariate"], repr(x["observed_mean"]), repr(x["simulated_mean"])])


def run_diagnostics(plan: AnalysisPlan, seed: int = 0, ds=None) -> tuple[dict, dict]:
    """Dataset checks, covariate balance, weight and g-formula diagnostics and
    the negative controls configured in the plan. Returns ``(report, csv_tables)``."""
    from .balance import imbalance_report
    from .diagnostics import BootstrapPlan, placebo_adherence_control
    from .point import PointPPConfig, negative_control_check

    ds = plan.load_dataset() if ds is None else ds
    cfg = plan.diagnostics
    rep = {"validation": [asdict(i) for i in validate_dataset(ds)]}
    rep["imbalance"] = [r.to_dict() for r in imbalance_report(ds, cfg.get("imbalance_covariates", []),
                                                              cfg.get("imbalance_threshold", 0.1))]
    tables = {}
    weights, natural = {}, {}
    for req in plan.requests:
        r = run_request(req, plan, ds, seed)
        est = r.get("_estimate")
        if est is None:
            weights[req.id] = {"error": r.get("error")}
            continue
        if "weights" in est.diagnostics:
            weights[req.id] = est.diagnostics["weights"]
            rows = []
            for kind, d in est.diagnostics["weights"]["kinds"].items():
                for v, m in zip(d["visits"], d["mean_by_visit"]):
                    rows.append([kind, v, m])
            tables[f"{req.id}_weights.csv"] = (["component", "visit", "mean_weight"], rows)
        nc = r.get("_extra", {}).get("natural_course")
        if nc:
            z = [abs(x["observed_mean"] - x["simulated_mean"]) / x["mc_se"] for x in nc if x["mc_se"] > 0]
            natural[req.id] = {"max_abs_z": float(max(z)) if z else 0.0, "rows": nc}
            tables[f"{req.id}_natural_course.csv"] = (
                ["visit", "covariate", "observed_mean", "simulated_mean"],
                [[x["visit"], x["covariate"], x["observed_mean"], x["simulated_mean"]] for x in nc])
    rep["weights"] = weights
    rep["natural_course"] = natural
    boot = BootstrapPlan(**{"seed": seed, **cfg.get("bootstrap", {"B": 200})})
    if cfg.get("negative_control_outcome"):
        point_req = next((r for r in plan.requests if r.estimator == "pp_point_adjusted"), None)
        if point_req is None:
            raise PlanError("negative_control_outcome needs a pp_point_adjusted request to mirror")
        pc = PointPPConfig.from_protocol(plan.protocols[point_req.protocol], confounders=tuple(point_req.covariates),
                                         method=point_req.options.get("method", "ipw"))
        try:
            est, verdict = negative_control_check(ds, pc, cfg["negative_control_outcome"], boot)
            rep["negative_control"] = {"verdict": verdict, "estimate": est.to_dict()}
        except PPTrialError as exc:
            rep["negative_control"] = {"error": f"{type(exc).__name__}: {exc}"}
    if cfg.get("placebo_adherence"):
        req = next((r for r in plan.requests if r.estimator in ("pp_ipw_sustained", "pp_point_adjusted")), None)
        if req is None:
            raise PlanError("placebo_adherence needs a per-protocol request whose protocol and covariates to reuse")
        try:
            est, verdict = placebo_adherence_control(ds, plan.protocols[req.protocol], req.timevarying_covariates,
                                                     req.covariates, boot)
            rep["placebo_adherence"] = {"verdict": verdict, "estimate": est.to_dict()}
        except PPTrialError as exc:
            rep["placebo_adherence"] = {"error": f"{type(exc).__name__}: {exc}"}
    return rep, tables
