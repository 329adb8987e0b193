"""Inverse-probability weights over person-time.

Each component (adherence, censoring, measurement) is a cumulative product
of per-visit probability ratios for *remaining* uncensored. Components are
multiplied first and truncated afterwards.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .design import RowFrame, Terms
from .errors import EstimationError, PositivityError, WeightWarning
from .glm import fit_glm, predict
from .views import DEVIATION, LTFU, MEASUREMENT, NONE, AnalysisView

DEFAULT_TRUNCATION = 99.5
POSITIVITY_FLOOR = 0.01


@dataclass
class WeightSeries:
    """Per view-row weights, one cumulative array per component."""
    rows: np.ndarray
    visit: np.ndarray
    at_risk: np.ndarray
    components: dict
    unstabilized: dict = field(default_factory=dict)
    stabilized: bool = True
    truncation: dict = field(default_factory=dict)
    combined: np.ndarray | None = None
    combined_raw: np.ndarray | None = None
    group: np.ndarray | None = None  # arm of each row; stabilization holds within arm

    def __post_init__(self):
        if self.combined_raw is None:
            raw = np.ones(len(self.rows))
            for v in self.components.values():
                raw = raw * v
            self.combined_raw = raw
        if self.combined is None:
            self.combined = self.combined_raw.copy()
        if (self.combined_raw <= 0).any() or not np.isfinite(self.combined_raw).all():
            raise EstimationError("weights must be positive and finite")

    def truncate(self, percentile: float | None = DEFAULT_TRUNCATION) -> "WeightSeries":
        """Cap the combined weight at a percentile of its at-risk distribution."""
        if percentile is None:
            self.truncation = {"percentile": None, "threshold": None, "count": 0}
            self.combined = self.combined_raw.copy()
            return self
        base = self.combined_raw[self.at_risk] if self.at_risk.any() else self.combined_raw
        thr = float(np.percentile(base, percentile))
        over = self.combined_raw > thr
        self.combined = np.minimum(self.combined_raw, thr)
        self.truncation = {"percentile": percentile, "threshold": thr, "count": int((over & self.at_risk).sum())}
        return self

    def merge(self, other: "WeightSeries") -> "WeightSeries":
        if not np.array_equal(self.rows, other.rows):
            raise EstimationError("cannot merge weight series over different rows")
        comps = dict(self.components)
        comps.update(other.components)
        unst = dict(self.unstabilized)
        unst.update(other.unstabilized)
        return WeightSeries(self.rows, self.visit, self.at_risk, comps, unst, self.stabilized and other.stabilized,
                            group=self.group)


def unit_weights(view: AnalysisView) -> WeightSeries:
    return WeightSeries(view.rows, view.visit, view.at_risk, {}, group=view.arm)


def _cumprod_within(values: np.ndarray, subj: np.ndarray) -> np.ndarray:
    """Cumulative product restarting at each new subject (rows sorted)."""
    logs = np.log(values)
    cs = np.cumsum(logs)
    start = np.concatenate([[True], subj[1:] != subj[:-1]])
    first = np.flatnonzero(start)
    counts = np.diff(np.concatenate([first, [len(values)]]))
    offset = np.repeat(cs[first] - logs[first], counts)
    return np.exp(cs - offset)


def fit_stay_probability(frame, stay: np.ndarray, terms: Sequence[str], arm: np.ndarray,
                         by_arm: bool = True) -> tuple[np.ndarray, list]:
    """Fitted P(stay) on model rows; separate fits per arm when ``by_arm``.

    Returns probabilities aligned with ``stay`` and the fitted models.
    """
    p = np.ones(len(stay))
    models = []
    groups = [np.flatnonzero(arm == a) for a in (0, 1)] if by_arm else [np.arange(len(stay))]
    for idx in groups:
        if len(idx) == 0:
            continue
        if "visit_cat" in terms:
            # visits without any event have P(stay) = 1 exactly; fitting them would separate
            v = frame["visit"][idx]
            eventful = np.isin(v, np.unique(v[~stay[idx]]))
            idx = idx[eventful]
        if len(idx) == 0 or stay[idx].all():
            models.append(None)
            continue
        sub = _SubFrame(frame, idx)
        t = Terms(terms).fit_levels(sub)
        X = t.matrix(sub, n=len(idx))
        m = fit_glm(X, stay[idx].astype(float), "logit")
        p[idx] = m.fitted
        models.append((t, m))
    return p, models


class _SubFrame:
    def __init__(self, frame, idx):
        self.frame, self.idx = frame, idx

    def __getitem__(self, name):
        return self.frame[name][self.idx]

    def __len__(self):
        return len(self.idx)


def _stay_component(view: AnalysisView, model_rows: np.ndarray, stay: np.ndarray,
                    den_terms, num_terms, by_arm=True, floor=None, what="censoring", lag=0):
    """Cumulative stabilized and unstabilized ratio over view rows."""
    frame = RowFrame(view.ds, view.rows[model_rows])
    arm = view.arm[model_rows]
    den, _ = fit_stay_probability(frame, stay, den_terms, arm, by_arm)
    num, _ = fit_stay_probability(frame, stay, num_terms, arm, by_arm)
    if floor is not None:
        low = stay & (den < floor)
        if low.any():
            raise PositivityError(
                f"estimated {what} probability below {floor} for {int(low.sum())} subject-visits "
                f"(first at row {int(view.rows[model_rows][np.flatnonzero(low)[0]])})")
    ratio = np.ones(len(view.rows))
    inv = np.ones(len(view.rows))
    m_idx = np.flatnonzero(model_rows)
    ok = stay
    ratio[m_idx[ok]] = num[ok] / den[ok]
    inv[m_idx[ok]] = 1.0 / den[ok]
    subj = view.subj
    if lag:
        # the factor applies from the visit after the deciding one
        same = np.concatenate([[False], subj[1:] == subj[:-1]])
        ratio = np.where(same, np.concatenate([[1.0], ratio[:-1]]), 1.0)
        inv = np.where(same, np.concatenate([[1.0], inv[:-1]]), 1.0)
    return _cumprod_within(ratio, subj), _cumprod_within(inv, subj)


def censoring_weights(view: AnalysisView, covariates: Sequence[str] = (), baseline: Sequence[str] = (),
                      reason=LTFU, by_arm=True, name="censoring") -> WeightSeries:
    """Stabilized inverse probability of remaining uncensored (for ``reason``).

    Denominator: visit indicators + baseline + current time-varying
    covariates; numerator: visit indicators (both fit within arm).
    """
    model_rows = (view.reason == NONE) | (view.reason == reason)
    stay = view.reason[model_rows] != reason
    if stay.all():
        one = np.ones(len(view.rows))
        return WeightSeries(view.rows, view.visit, view.at_risk, {name: one}, {name: one}, group=view.arm)
    den_terms = ["visit_cat"] + list(baseline) + list(covariates)
    num_terms = ["visit_cat"]
    sw, uw = _stay_component(view, model_rows, stay, den_terms, num_terms, by_arm)
    return WeightSeries(view.rows, view.visit, view.at_risk, {name: sw}, {name: uw}, group=view.arm)


def measurement_weights(view: AnalysisView, covariates: Sequence[str] = (), baseline: Sequence[str] = (),
                        by_arm=True, floor=POSITIVITY_FLOOR) -> WeightSeries:
    """Inverse probability of adherence being measured.

    Rows censored for unmeasured adherence (``measurement_weighting`` or
    ``carry_forward`` policies) are the events; fully measured data give
    unit weights.
    """
    # measurement is settled first at each visit, so every row reaching the visit is modelled
    model_rows = np.ones(len(view.rows), dtype=bool)
    stay = view.reason != MEASUREMENT
    if stay.all():
        one = np.ones(len(view.rows))
        return WeightSeries(view.rows, view.visit, view.at_risk, {"measurement": one}, {"measurement": one}, group=view.arm)
    den_terms = ["visit_cat"] + list(baseline) + list(covariates)
    sw, uw = _stay_component(view, model_rows, stay, den_terms, ["visit_cat"], by_arm, floor, "measurement")
    return WeightSeries(view.rows, view.visit, view.at_risk, {"measurement": sw}, {"measurement": uw}, group=view.arm)


def adherence_weights(view: AnalysisView, trace, covariates: Sequence[str] = (), baseline: Sequence[str] = (),
                      by_arm=True, floor=POSITIVITY_FLOOR, extra_terms: Sequence[str] = (),
                      denominator_terms: Sequence[str] | None = None) -> WeightSeries:
    """Stabilized inverse probability of not deviating from protocol.

    Fit on rows where a deviation was possible (grace exhausted, not
    excused); the event is the treatment that settles a deviation.
    Denominator: visit indicators + baseline + time-varying covariates
    (or ``denominator_terms`` verbatim); numerator: visit indicators.
    """
    possible = trace.row_at_risk_of_deviation[view.rows]
    ok_reason = (view.reason == NONE) | ((view.reason == DEVIATION) & (trace.lag == 0))
    model_rows = possible & ok_reason
    stay = ~trace.row_decision[view.rows][model_rows]
    if stay.all():
        one = np.ones(len(view.rows))
        return WeightSeries(view.rows, view.visit, view.at_risk, {"adherence": one}, {"adherence": one}, group=view.arm)
    if denominator_terms is None:
        den_terms = ["visit_cat"] + list(baseline) + list(covariates) + list(extra_terms)
    else:
        den_terms = list(denominator_terms)
    num_terms = ["visit_cat"]
    sw, uw = _stay_component(view, model_rows, stay, den_terms, num_terms, by_arm, floor, "adherence",
                             lag=trace.lag)
    return WeightSeries(view.rows, view.visit, view.at_risk, {"adherence": sw}, {"adherence": uw}, group=view.arm)


def baseline_assignment_weights(ds, covariates: Sequence[str], saturated: bool = False):
    """Per-subject stabilized weights P(Z=z) / P(Z=z | baseline covariates)."""
    from .errors import PositivityWarning

    z = ds.subject_arm.astype(float)
    marg = z.mean()
    warn = []
    if not covariates:
        return np.ones(ds.n_subjects), np.full(ds.n_subjects, marg), warn
    X = np.column_stack([ds.baseline(c) for c in covariates])
    if saturated:
        _, cell = np.unique(X, axis=0, return_inverse=True)
        cell = cell.ravel()
        ps = (np.bincount(cell, weights=z) / np.bincount(cell))[cell]
    else:
        from .glm import DesignMatrix
        from .errors import SeparationError

        D = DesignMatrix.from_columns({c: ds.baseline(c) for c in covariates})
        try:
            ps = fit_glm(D, z, "logit").fitted
        except SeparationError:
            _, cell = np.unique(X, axis=0, return_inverse=True)
            cell = cell.ravel()
            ps = (np.bincount(cell, weights=z) / np.bincount(cell))[cell]
            warn.append("propensity model separated; using stratum proportions")
    bad = (ps < POSITIVITY_FLOOR) | (ps > 1 - POSITIVITY_FLOOR)
    if bad.any():
        rows = np.flatnonzero(bad)
        msg = (f"positivity: estimated assignment probability outside [0.01, 0.99] for "
               f"{len(rows)} subjects (e.g. {list(ds.subject_ids[rows[:5]])})")
        warnings.warn(msg, PositivityWarning, stacklevel=3)
        warn.append(msg)
    with np.errstate(divide="ignore"):
        w = np.where(z == 1, marg / ps, (1 - marg) / (1 - ps))
    return w, ps, warn
