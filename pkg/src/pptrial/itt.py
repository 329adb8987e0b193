"""Intention-to-treat estimators.

All estimators return discrete-time risk curves per arm (pooled-logistic
or nonparametric hazards); hazard ratios are never the primary output.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .design import Terms
from .errors import DataError, EstimationError, PositivityError
from .estimate import ARMS, EffectEstimate, arm_curves, cumulative_incidence, estimate_from_curves
from .glm import fit_glm, predict
from .views import COMPETING, DEVIATION, LTFU, MEASUREMENT, NONE, AnalysisView, derive_analysis_view
from .weights import (DEFAULT_TRUNCATION, WeightSeries, baseline_assignment_weights, censoring_weights,
                      unit_weights)


def _check_arms(view: AnalysisView):
    arms = view.ds.subject_arm[np.unique(view.subj)]
    for a in ARMS:
        if not (arms == a).any():
            raise EstimationError(f"arm {a} is empty")


def _require_baseline(ds, covariates):
    for c in covariates:
        if c not in ds.schema:
            raise DataError(f"unknown covariate {c!r}")
        if not ds.schema.get(c).baseline:
            raise DataError(f"covariate {c!r} is time-varying; baseline covariates required")


def weighted_estimate(view: AnalysisView, weights=None, label=None, kind="itt", **kw) -> EffectEstimate:
    w = None if weights is None else (weights.combined if isinstance(weights, WeightSeries) else weights)
    curves = arm_curves(view.visit, view.arm, view.at_risk, view.event, view.competing, view.horizon, w)
    return estimate_from_curves(label or view.label, curves, kind=kind, **kw)


def itt_unadjusted(view: AnalysisView) -> EffectEstimate:
    """Observed risk per arm from pooled event/at-risk counts.

    With loss-to-follow-up censoring in the view the label is downgraded to
    pseudo-ITT: the contrast is unbiased only if dropout is non-informative.
    """
    if view.has_reason(DEVIATION) or view.has_reason(MEASUREMENT):
        raise EstimationError("view censors person-time at protocol deviation; not an intention-to-treat view")
    _check_arms(view)
    label = view.label
    warn = []
    if view.has_reason(LTFU):
        label = f"pseudo-{label} (unadjusted)"
        warn.append("losses to follow-up are censored without adjustment (pseudo-ITT)")
    return weighted_estimate(view, label=label, method={"estimator": "itt_unadjusted"}, warnings=warn)


def _saturated_cells(view: AnalysisView, covariates):
    X = np.column_stack([view.ds.baseline(c) for c in covariates])
    _, cell = np.unique(X, axis=0, return_inverse=True)
    return cell.ravel()


def itt_standardized(view: AnalysisView, baseline_covariates: Sequence[str] = (),
                     saturated: bool = False) -> EffectEstimate:
    """Outcome-model standardisation over the trial's baseline distribution.

    Parametric: pooled logistic hazard with arm x visit terms plus the
    covariates; each subject's curve is predicted under both arms and the
    curves averaged. ``saturated=True`` (discrete covariates) uses
    stratum-specific nonparametric hazards instead, the exact MLE of the
    fully interacted model.
    """
    baseline_covariates = list(baseline_covariates)
    _require_baseline(view.ds, baseline_covariates)
    _check_arms(view)
    method = {"estimator": "itt_standardized", "covariates": baseline_covariates, "saturated": saturated}
    if not baseline_covariates:
        est = itt_unadjusted(view)
        est.method = method
        return est
    ds = view.ds
    K = view.horizon
    if saturated:
        cell_sub = _saturated_cells(view, baseline_covariates)
        n_cells = cell_sub.max() + 1
        share = np.bincount(cell_sub, minlength=n_cells) / ds.n_subjects
        risk = {a: np.zeros(K + 1) for a in ARMS}
        crisk = {a: np.zeros(K + 1) for a in ARMS}
        cell_rows = cell_sub[view.subj]
        for c in range(n_cells):
            m = cell_rows == c
            arms_here = ds.subject_arm[cell_sub == c]
            for a in ARMS:
                if not (arms_here == a).any():
                    raise PositivityError(f"stratum {c} of {baseline_covariates} has no subjects in arm {a}")
            curves = arm_curves(view.visit[m], view.arm[m], view.at_risk[m], view.event[m],
                                view.competing[m], K)
            for a in ARMS:
                risk[a] += share[c] * curves[a].risk
                crisk[a] += share[c] * curves[a].competing_risk
        comp = crisk if any(crisk[a].any() for a in ARMS) else None
        return EffectEstimate(view.label + " (standardized)", risk, competing_risk=comp, method=method)

    terms = ["visit_cat", "arm", "arm:visit_cat"] + baseline_covariates
    from .design import RowFrame

    at = view.at_risk
    frame = RowFrame(ds, view.rows[at])
    t_y = Terms(terms).fit_levels(frame)
    try:
        m_y = fit_glm(t_y.matrix(frame), view.event[at].astype(float), "logit")
        m_d = None
        if view.competing.any():
            keep = ~view.event[at]
            sub = RowFrame(ds, view.rows[at][keep])
            t_d = Terms(terms).fit_levels(sub)
            m_d = (t_d, fit_glm(t_d.matrix(sub), view.competing[at][keep].astype(float), "logit"))
    except EstimationError as exc:
        raise EstimationError(f"outcome model failed with covariates {baseline_covariates}: {exc}") from exc
    method["outcome_model"] = m_y.coef()
    n = ds.n_subjects
    base = {c: ds.baseline(c) for c in baseline_covariates}
    risk, crisk = {}, {}
    for a in ARMS:
        surv = np.ones(n)
        r = np.zeros((K + 1,))
        cr = np.zeros((K + 1,))
        acc_r = np.zeros(n)
        acc_c = np.zeros(n)
        for k in range(K + 1):
            fr = dict(base)
            fr["visit"] = np.full(n, float(k))
            fr["arm"] = np.full(n, float(a))
            hy = predict(m_y, t_y.matrix(fr, n=n)) if k in t_y.visit_levels else np.zeros(n)
            hd = np.zeros(n)
            if m_d is not None and k in m_d[0].visit_levels:
                hd = (1 - hy) * predict(m_d[1], m_d[0].matrix(fr, n=n))
            acc_r += surv * hy
            acc_c += surv * hd
            surv = surv * (1 - hy - hd)
            r[k] = acc_r.mean()
            cr[k] = acc_c.mean()
        risk[a], crisk[a] = r, cr
    comp = crisk if m_d is not None else None
    return EffectEstimate(view.label + " (standardized)", risk, competing_risk=comp, method=method)


def itt_ipw_baseline(view: AnalysisView, baseline_covariates: Sequence[str] = (), saturated: bool = False,
                     truncate: float | None = DEFAULT_TRUNCATION) -> EffectEstimate:
    """Weighted contrast with weights P(Z=z) / P(Z=z | baseline covariates)."""
    from .diagnostics import weight_diagnostics

    baseline_covariates = list(baseline_covariates)
    _require_baseline(view.ds, baseline_covariates)
    _check_arms(view)
    w_subj, ps, warn = baseline_assignment_weights(view.ds, baseline_covariates, saturated)
    ws = WeightSeries(view.rows, view.visit, view.at_risk, {"assignment": w_subj[view.subj]}, group=view.arm)
    ws.truncate(truncate if baseline_covariates else None)
    est = weighted_estimate(view, ws, label=view.label + " (baseline IPW)",
                            method={"estimator": "itt_ipw_baseline", "covariates": baseline_covariates,
                                    "saturated": saturated, "truncation": ws.truncation},
                            warnings=warn)
    est.diagnostics["weights"] = weight_diagnostics(ws).to_dict()
    return est


def itt_ipcw(ds, timevarying_covariates: Sequence[str] = (), baseline_covariates: Sequence[str] = (),
             truncate: float | None = DEFAULT_TRUNCATION, weight_cap: float = 20.0,
             view: AnalysisView | None = None) -> EffectEstimate:
    """ITT risks with loss to follow-up re-weighted (IPCW).

    Censoring model: P(remaining under follow-up at visit k | arm, visit,
    baseline, current time-varying covariates), fit within arm; numerator
    P(remaining | arm, visit). Cumulative products are truncated at the
    ``truncate`` percentile.
    """
    import warnings as _w
    from .diagnostics import weight_diagnostics
    from .errors import WeightWarning

    if view is None:
        view = derive_analysis_view(ds)
    _check_arms(view)
    for a in ARMS:
        subj_a = np.unique(view.subj[view.arm == a])
        cens = np.unique(view.subj[(view.arm == a) & (view.reason == LTFU)])
        if len(subj_a) and len(cens) == len(subj_a):
            raise EstimationError(f"every subject in arm {a} is lost to follow-up")
    ws = censoring_weights(view, timevarying_covariates, baseline_covariates)
    warn = []
    umax = float(ws.unstabilized["censoring"][view.at_risk].max()) if view.at_risk.any() else 1.0
    if umax > weight_cap:
        msg = f"unstabilized censoring weight {umax:.1f} exceeds cap {weight_cap} before truncation"
        _w.warn(msg, WeightWarning, stacklevel=2)
        warn.append(msg)
    ws.truncate(truncate if view.has_reason(LTFU) else None)
    est = weighted_estimate(view, ws, label="ITT (IPCW)",
                            method={"estimator": "itt_ipcw", "covariates": list(timevarying_covariates),
                                    "baseline_covariates": list(baseline_covariates),
                                    "truncation": ws.truncation},
                            warnings=warn,
                            assumptions=["loss to follow-up non-informative given the measured covariates"])
    est.diagnostics["weights"] = weight_diagnostics(ws).to_dict()
    est.extras_weights = ws  # for callers wanting the raw series
    return est


def competing_effect(view: AnalysisView, estimand: str = "total", covariates: Sequence[str] = (),
                     baseline_covariates: Sequence[str] = (), justification: str | None = None,
                     truncate: float | None = DEFAULT_TRUNCATION) -> EffectEstimate:
    """Competing-event estimands.

    * ``total``: competing events remove subjects from the risk set
      (Aalen-Johansen cumulative incidence);
    * ``direct``: competing events are censored and re-weighted with IPCW
      on ``covariates``; needs a justification string;
    * ``composite``: the first of outcome or competing event.

    The competing-event risk per arm (from the total-effect analysis) is
    always attached.
    """
    ds = view.ds
    _check_arms(view)
    base = derive_analysis_view(ds, label="ITT")
    ltfu_w = None
    if base.has_reason(LTFU) and (covariates or baseline_covariates):
        ltfu_w = censoring_weights(base, covariates, baseline_covariates).truncate(truncate)
    total = weighted_estimate(base, ltfu_w, label="ITT (total effect)")
    comp_risk = {a: (total.competing_risk[a] if total.competing_risk is not None
                     else np.zeros(ds.horizon + 1)) for a in ARMS}
    method = {"estimator": "competing_effect", "estimand": estimand, "covariates": list(covariates)}
    if estimand == "total":
        total.competing_risk = comp_risk
        total.method = method
        return total
    if estimand == "composite":
        v = derive_analysis_view(ds, composite_outcome=True, label="ITT (composite outcome)")
        w = None
        if v.has_reason(LTFU) and (covariates or baseline_covariates):
            w = censoring_weights(v, covariates, baseline_covariates).truncate(truncate)
        est = weighted_estimate(v, w, method=method)
        est.competing_risk = comp_risk
        return est
    if estimand == "direct":
        if not covariates and not baseline_covariates:
            raise EstimationError("the direct effect censors competing events and needs covariates to "
                                  "adjust for their shared predictors (IPCW); none were given")
        if not justification:
            raise EstimationError("the direct effect requires an explicit justification string")
        v = derive_analysis_view(ds, censor_at_competing=True, label="ITT (direct effect, competing censored)")
        wc = censoring_weights(v, covariates, baseline_covariates, reason=COMPETING, name="competing")
        if v.has_reason(LTFU):
            wc = wc.merge(censoring_weights(v, covariates, baseline_covariates))
        wc.truncate(truncate if (v.has_reason(COMPETING) or v.has_reason(LTFU)) else None)
        method["justification"] = justification
        method["truncation"] = wc.truncation
        est = weighted_estimate(v, wc, method=method,
                                assumptions=["competing events non-informative given the measured covariates"])
        est.competing_risk = comp_risk
        return est
    raise EstimationError(f"unknown competing-event estimand {estimand!r}")


@dataclass
class SubgroupResult:
    estimates: dict
    heterogeneity: list
    ratios: list
    pre_specified: bool
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "scale": "additive (risk difference)",
            "pre_specified": self.pre_specified,
            "warnings": list(self.warnings),
            "strata": {k: v.to_dict() for k, v in self.estimates.items()},
            "heterogeneity": self.heterogeneity,
            "secondary_ratio_scale": self.ratios,
        }


def subgroup_effects(view: AnalysisView, strata, base_estimator: Callable = itt_unadjusted,
                     pre_specified: bool = True, bootstrap=None) -> SubgroupResult:
    """Per-stratum estimates and pairwise risk-difference contrasts.

    ``strata`` is a baseline covariate name (one stratum per observed
    value) or a mapping ``label -> Predicate`` on baseline covariates.
    Ratio-scale summaries are reported as secondary only.
    """
    from .protocol import Predicate

    ds = view.ds
    if isinstance(strata, str):
        _require_baseline(ds, [strata])
        x = ds.baseline(strata)
        groups = {f"{strata}={v:g}": x == v for v in np.unique(x)}
    else:
        groups = {}
        for label, pred in strata.items():
            if not isinstance(pred, Predicate):
                pred = Predicate(**pred)
            _require_baseline(ds, [pred.covariate])
            groups[label] = pred(ds.baseline(pred.covariate))
    estimates = {}
    for label, mask in groups.items():
        sub = view.restrict_subjects(mask, label=f"{view.label} [{label}]")
        arms = ds.subject_arm[mask]
        for a in ARMS:
            if not (arms == a).any():
                raise EstimationError(f"stratum {label!r} has no subjects in arm {a}")
        estimates[label] = base_estimator(sub)
    warn = [] if pre_specified else ["ad-hoc subgroup: not part of the pre-specified analysis plan"]
    labels = list(estimates)
    het, ratios = [], []
    cis = {}
    if bootstrap is not None:
        from .diagnostics import bootstrap_replicates

        def contrast(ds_b):
            vb = derive_analysis_view(ds_b, censor_at_competing=view.flags.get("censor_at_competing", False),
                                      composite_outcome=view.flags.get("composite_outcome", False))
            res = subgroup_effects(vb, strata, base_estimator, pre_specified)
            return {f"{h['a']} - {h['b']}": h["rd_difference"] for h in res.heterogeneity}

        reps = bootstrap_replicates(contrast, ds, bootstrap)
        for key in reps[0]:
            vals = np.array([r[key] for r in reps])
            lo, hi = np.quantile(vals, [0.025, 0.975], method="inverted_cdf")
            cis[key] = [float(lo), float(hi)]
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            a, b = labels[i], labels[j]
            diff = float(estimates[a].rd[-1] - estimates[b].rd[-1])
            key = f"{a} - {b}"
            het.append({"a": a, "b": b, "rd_difference": diff, "ci": cis.get(key)})
            ra, rb = estimates[a].rr[-1], estimates[b].rr[-1]
            ratios.append({"a": a, "b": b, "rr_ratio": float(ra / rb) if np.isfinite(ra) and np.isfinite(rb) and rb
                           else None, "label": "secondary"})
    return SubgroupResult(estimates, het, ratios, pre_specified, warn)
