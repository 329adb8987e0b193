"""Per-protocol effects of sustained strategies: IPW and g-estimation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .design import RowFrame, Terms
from .diagnostics import weight_diagnostics
from .errors import DataError, EstimationError
from .estimate import ARMS, EffectEstimate
from .glm import fit_glm, predict
from .itt import _check_arms, weighted_estimate
from .protocol import StrategyProtocol, evaluate_adherence
from .views import LTFU, MEASUREMENT, NONE, derive_analysis_view
from .weights import DEFAULT_TRUNCATION, adherence_weights, censoring_weights, measurement_weights

PP_LABEL = "per-protocol"


def _require_history(ds, covariates):
    for c in covariates:
        if c not in ds.schema:
            raise DataError(f"unknown covariate {c!r}")


def pp_ipw_sustained(ds, protocol: StrategyProtocol, timevarying_covariates: Sequence[str] = (),
                     baseline_covariates: Sequence[str] = (), truncate: float | None = DEFAULT_TRUNCATION,
                     by_arm: bool = True, measurement_covariates: Sequence[str] | None = None,
                     adherence_terms: Sequence[str] = (),
                     adherence_model: Sequence[str] | None = None) -> EffectEstimate:
    """Censor at the first unexcused deviation and re-weight.

    Weights multiply (before truncation) three stabilized components:
    adherence (denominator: visit, baseline and current time-varying
    covariates plus ``adherence_terms``, or ``adherence_model`` verbatim;
    numerator: visit), loss to follow-up when
    present, and adherence measurement when the dataset's missing-adherence
    policy censors unmeasured visits.
    """
    tv, bl = list(timevarying_covariates), list(baseline_covariates)
    _require_history(ds, tv + bl)
    protocol.check_schema(ds.schema.names)
    if ds.policy is None and np.isnan(ds.treatment).any():
        raise DataError("treatment has missing values; apply a missing-adherence policy first")
    trace = evaluate_adherence(ds, protocol)
    view = derive_analysis_view(ds, trace, censor_at_deviation=True, label=f"{PP_LABEL} ({protocol.label})")
    _check_arms(view)
    ws = adherence_weights(view, trace, tv, bl, by_arm=by_arm, extra_terms=adherence_terms,
                           denominator_terms=adherence_model)
    components = ["adherence"]
    if view.has_reason(LTFU):
        ws = ws.merge(censoring_weights(view, tv, bl, by_arm=by_arm))
        components.append("censoring")
    if view.has_reason(MEASUREMENT):
        mc = tv if measurement_covariates is None else list(measurement_covariates)
        ws = ws.merge(measurement_weights(view, mc, bl, by_arm=by_arm))
        components.append("measurement")
    ws.truncate(truncate)
    est = weighted_estimate(
        view, ws, kind="per-protocol",
        method={"estimator": "pp_ipw_sustained", "protocol": protocol.to_json(),
                "timevarying_covariates": tv, "baseline_covariates": bl, "weight_components": components,
                "truncation": ws.truncation, "missing_adherence_policy": ds.policy},
        assumptions=["no unmeasured confounding of adherence given the covariates",
                     "correctly specified adherence, censoring and measurement models", "positivity"],
    )
    diag = weight_diagnostics(ws)
    est.diagnostics["weights"] = diag.to_dict()
    est.warnings.extend(diag.flags)
    est.arm_labels = {a: f"arm {a}: A={protocol.arms[a].value}" for a in ARMS if a in protocol.arms}
    return est


def pp_baseline_regression(ds, protocol: StrategyProtocol, baseline_covariates: Sequence[str] = ()) -> EffectEstimate:
    """Censor at deviation and standardize over baseline covariates only.

    A conventional comparator: it adjusts for baseline prognosis but not
    for post-randomization confounders affected by earlier treatment.
    """
    from .itt import itt_standardized

    trace = evaluate_adherence(ds, protocol)
    view = derive_analysis_view(ds, trace, censor_at_deviation=True)
    est = itt_standardized(view, baseline_covariates)
    est.label = "per-protocol, baseline-only outcome regression (conventional comparator)"
    est.kind = "comparator"
    est.method["estimator"] = "pp_baseline_regression"
    est.warnings.append("ignores time-varying confounding; biased under treatment-confounder feedback")
    return est


@dataclass
class GEstimationResult:
    psi_hat: float
    psi_refined: float
    grid: np.ndarray
    statistic: np.ndarray
    ci: tuple
    interior: bool
    boundary: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "psi_hat": self.psi_hat, "psi_refined": self.psi_refined,
            "search_interval": [float(self.grid[0]), float(self.grid[-1])], "grid_points": len(self.grid),
            "ci": [None if not np.isfinite(c) else float(c) for c in self.ci],
            "interior": self.interior, "boundary": self.boundary, "diagnostics": self.diagnostics,
        }


CHI2_95 = 3.841458820694124


def gestimate_snmm(ds, protocol: StrategyProtocol | None = None, covariates: Sequence[str] = (),
                   psi_grid=None, baseline_covariates: Sequence[str] = (), outcome: str | None = None,
                   treatment_terms: Sequence[str] | None = None, ipcw_covariates: Sequence[str] | None = None,
                   strict: bool = True):
    """One-parameter additive SNMM by g-estimation.

    Blip model: each treated visit adds ``psi`` to the end-of-follow-up
    outcome (binary: outcome by the last visit; or a continuous column
    named by ``outcome``, read at each subject's last visit). With
    ``H_k(psi) = Y - psi * (treated visits from k on)``, the estimating
    function is ``U(psi) = sum_rows (A_k - p_k) H_k(psi)`` where ``p_k`` is
    the fitted treatment model ``A_k ~ arm + visit + lag1_A + covariates``.
    The score statistic ``U^2 / V`` (``V``: subject-clustered variance) is
    evaluated on ``psi_grid`` (default 1001 points on [-5, 5]); its grid
    argmin is ``psi_hat``, refined by a parabola through the neighbours,
    and the 95% interval is ``{psi: U^2/V < 3.84}``. With loss to
    follow-up, uncensored subjects are weighted by their cumulative IPCW.

    Returns ``(GEstimationResult, EffectEstimate)``; the estimate compares
    always-treat with never-treat (arms follow ``protocol`` values).
    """
    grid = np.linspace(-5, 5, 1001) if psi_grid is None else np.asarray(psi_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 3 or not np.isfinite(grid).all():
        raise EstimationError("psi grid needs at least 3 finite points")
    grid = np.sort(grid)
    cov, bl = list(covariates), list(baseline_covariates)
    _require_history(ds, cov + bl)
    if np.isnan(ds.treatment).any():
        raise DataError("g-estimation needs treatment measured at every visit")
    K = ds.horizon
    # end-of-follow-up outcome per subject
    last = ds.last_rows
    censored = ds.ltfu[last].astype(bool) & ~ds.outcome[last].astype(bool)
    if outcome is None:
        y_subj = np.zeros(ds.n_subjects)
        ev = np.flatnonzero(ds.outcome == 1)
        y_subj[ds.subj[ev]] = 1.0
        binary = True
    else:
        if outcome not in ds.schema:
            raise DataError(f"unknown outcome column {outcome!r}")
        y_subj = ds.covariates[outcome][last]
        binary = False
        if np.isnan(y_subj[~censored]).any():
            raise DataError(f"outcome {outcome!r} missing at the last visit")
    # weights for subjects with a known outcome
    w_subj = np.ones(ds.n_subjects)
    if censored.any():
        v = derive_analysis_view(ds)
        ipc = censoring_weights(v, cov if ipcw_covariates is None else ipcw_covariates, bl)
        cw = ipc.unstabilized["censoring"]
        # weight of a completer: cumulative inverse probability at its last row
        w_last = np.ones(ds.n_subjects)
        w_last[v.subj] = cw  # rows are sorted; the last assignment per subject wins
        w_subj = np.where(censored, 0.0, w_last)
    rows_keep = w_subj[ds.subj] > 0
    rows = np.flatnonzero(rows_keep)
    A = ds.treatment[rows]
    subj = ds.subj[rows]
    terms = list(treatment_terms) if treatment_terms is not None else (["arm", "visit_cat", "lag1_A"] + bl + cov)
    frame = RowFrame(ds, rows)
    t = Terms(terms).fit_levels(frame)
    X = t.matrix(frame, n=len(rows))
    model = fit_glm(X, A, "logit", weights=w_subj[subj])
    p = model.fitted
    # treated visits from k onwards (within subject): reverse cumulative sum
    N_after = _reverse_cumsum_within(A, subj)
    r = (A - p) * w_subj[subj]
    Y = y_subj[subj]
    # U(psi) = sum r (Y - psi N); cluster sums are linear in psi
    n_s = ds.n_subjects
    a_i = np.bincount(subj, weights=r * Y, minlength=n_s)
    b_i = np.bincount(subj, weights=r * N_after, minlength=n_s)
    U = a_i.sum() - grid * b_i.sum()
    V = ((a_i[:, None] - grid[None, :] * b_i[:, None]) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(V > 0, U ** 2 / V, np.inf)
    j = int(np.argmin(stat))
    psi_hat = float(grid[j])
    interior = 0 < j < len(grid) - 1
    boundary = None
    refined = psi_hat
    if interior:
        x0, x1, x2 = grid[j - 1:j + 2]
        y0, y1, y2 = stat[j - 1:j + 2]
        denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
        a_ = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
        b_ = (x2 ** 2 * (y0 - y1) + x1 ** 2 * (y2 - y0) + x0 ** 2 * (y1 - y2)) / denom
        if a_ > 0:
            refined = float(np.clip(-b_ / (2 * a_), x0, x2))
    else:
        boundary = "lower" if j == 0 else "upper"
        msg = (f"score statistic minimised at the {boundary} end of the psi grid "
               f"[{grid[0]:g}, {grid[-1]:g}]: no interior minimum")
        if strict:
            raise EstimationError(msg)
        warnings.warn(msg, stacklevel=2)
    inside = stat < CHI2_95
    ci = (float(grid[inside].min()) if inside.any() else np.nan,
          float(grid[inside].max()) if inside.any() else np.nan)
    if inside.any() and (inside[0] or inside[-1]):
        ci = (-np.inf if inside[0] else ci[0], np.inf if inside[-1] else ci[1])
    res = GEstimationResult(psi_hat, refined, grid, stat, ci, interior, boundary,
                            {"treatment_model": model.coef(), "n_subjects_used": int((w_subj > 0).sum()),
                             "outcome": "binary (event by last visit)" if binary else outcome})
    est = _snmm_effect(ds, protocol, refined, w_subj, y_subj, binary)
    est.extras["psi_hat"] = refined
    est.diagnostics["g_estimation"] = res.to_dict()
    return res, est


def _reverse_cumsum_within(x, subj):
    rev = x[::-1]
    s = subj[::-1]
    cs = np.cumsum(rev)
    start = np.concatenate([[True], s[1:] != s[:-1]])
    first = np.flatnonzero(start)
    counts = np.diff(np.concatenate([first, [len(rev)]]))
    base = np.repeat(cs[first] - rev[first], counts)
    return (cs - base)[::-1]


def _snmm_effect(ds, protocol, psi, w_subj, y_subj, binary) -> EffectEstimate:
    """Risk curves for always- versus never-treat implied by ``psi``.

    The never-treat risk by visit ``k`` is the weighted mean of the
    blipped-down outcome ``1{event by k} - psi * (treated visits up to k)``;
    under always-treat each visit alive adds ``psi``. This translation is
    exact for the additive blip model and approximate for a survival
    outcome whose effect is not additive.
    """
    K = ds.horizon
    values = {0: 0, 1: 1} if protocol is None else {a: protocol.arms[a].value for a in ARMS}
    w = w_subj
    risk0 = np.zeros(K + 1)
    keep = w > 0
    for k in range(K + 1):
        upto = ds.visit <= k
        ev = np.zeros(ds.n_subjects)
        if binary:
            m = upto & (ds.outcome == 1)
            ev[ds.subj[m]] = 1.0
        else:
            ev = y_subj
        n_treated = np.bincount(ds.subj[upto], weights=ds.treatment[upto], minlength=ds.n_subjects)
        h = ev - psi * n_treated
        risk0[k] = np.sum(w[keep] * h[keep]) / np.sum(w[keep])
    if binary:
        risk0 = np.clip(np.maximum.accumulate(np.clip(risk0, 0, 1)), 0, 1)
    # always-treat: psi per visit spent alive, risk1(k) = risk0(k) + psi * sum_j<=k (1 - risk1(j-1))
    risk_treat = np.zeros(K + 1)
    acc, prev = 0.0, 0.0
    for k in range(K + 1):
        acc += psi * ((1 - prev) if binary else 1.0)
        risk_treat[k] = risk0[k] + acc
        if binary:
            risk_treat[k] = min(max(risk_treat[k], 0.0), 1.0)
        prev = risk_treat[k]
    never = risk0
    curves = {a: (risk_treat if values[a] == 1 else never) for a in ARMS}
    return EffectEstimate(
        "per-protocol (g-estimation of a structural nested mean model)", curves, kind="per-protocol",
        method={"estimator": "gestimate_snmm", "psi": psi, "blip": "additive, per treated visit"},
        assumptions=["no unmeasured confounding of treatment given the covariates",
                     "correct blip model (constant additive effect per treated visit)",
                     "correctly specified treatment model"],
        arm_labels={a: f"A={values[a]} every visit" for a in ARMS},
    )
