"""Missing-adherence policies and estimand-specific person-time views."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LongitudinalDataset
from .errors import DataError, EstimationError
from .protocol import AdherenceTrace, StrategyProtocol

# artificial-censoring reasons
NONE, LTFU, DEVIATION, COMPETING, MEASUREMENT = 0, 1, 2, 3, 4
REASONS = {NONE: None, LTFU: "ltfu", DEVIATION: "deviation", COMPETING: "competing", MEASUREMENT: "measurement"}

POLICIES = ("assume_nonadherent", "carry_forward", "measurement_weighting")


@dataclass(frozen=True)
class MissingAdherencePolicy:
    kind: str
    m: int | None = None

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise DataError(f"unknown missing-adherence policy {self.kind!r}; choose from {POLICIES}")
        if self.kind == "carry_forward" and (self.m is None or self.m < 1):
            raise DataError("carry_forward requires m >= 1")

    @classmethod
    def coerce(cls, policy, m=None):
        if isinstance(policy, cls):
            return policy
        if isinstance(policy, dict):
            return cls(policy["kind"], policy.get("m"))
        if policy == "carry_forward_censor_after":
            policy = "carry_forward"
        return cls(policy, m)


def apply_missing_adherence_policy(ds: LongitudinalDataset, policy, protocol: StrategyProtocol | None = None,
                                   m: int | None = None) -> LongitudinalDataset:
    """Resolve unmeasured treatment values.

    * ``assume_nonadherent``: missing treatment becomes the arm's
      non-protocol value (needs ``protocol``).
    * ``carry_forward`` (``m``): runs of fewer than ``m`` missing visits are
      filled with the last observed value; the ``m``-th consecutive missing
      visit is flagged for measurement censoring.
    * ``measurement_weighting``: values stay missing; the first missing visit
      per subject is flagged for censoring, to be re-weighted by
      :func:`pptrial.weights.measurement_weights`.
    """
    policy = MissingAdherencePolicy.coerce(policy, m)
    a = ds.treatment.copy()
    miss = np.isnan(a)
    flag = np.zeros(ds.n_rows, dtype=bool)
    if policy.kind == "assume_nonadherent":
        if protocol is None:
            raise DataError("assume_nonadherent needs a protocol to know the non-protocol value")
        a[miss] = protocol.nonprotocol_value(ds.arm[miss])
    elif policy.kind == "carry_forward":
        if miss[ds.starts].any():
            s = int(np.flatnonzero(miss[ds.starts])[0])
            raise DataError(f"treatment missing at visit 0 for subject {ds.subject_ids[s]}: nothing to carry forward")
        run = _missing_run_length(miss, ds.starts)
        fill = miss & (run < policy.m)
        flag = miss & (run == policy.m)
        # forward-fill from the last observed value
        idx = np.where(~miss, np.arange(ds.n_rows), 0)
        idx = np.maximum.accumulate(idx)
        a[fill] = a[idx[fill]]
    else:
        cs = np.cumsum(miss)
        within = cs - np.repeat(cs[ds.starts] - miss[ds.starts], ds.counts)
        flag = miss & (within == 1)
    # only the first flagged row per subject matters; later rows are dropped by the view
    return ds.replace(treatment=a, measure_censor=flag, policy=policy.kind)


def _missing_run_length(miss: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Length of the current run of consecutive missing values at each row."""
    run = np.zeros(len(miss), dtype=np.int64)
    is_start = np.zeros(len(miss), dtype=bool)
    is_start[starts] = True
    count = 0
    for i in range(len(miss)):
        if is_start[i]:
            count = 0
        count = count + 1 if miss[i] else 0
        run[i] = count
    return run


@dataclass
class AnalysisView:
    """Person-time rows for one estimand.

    Rows run from visit 0 to each subject's last at-risk visit, plus the row
    at which the subject is censored (``reason`` non-zero, not at risk).
    ``event`` and ``competing`` are only ever set on at-risk rows.
    """
    label: str
    ds: LongitudinalDataset
    rows: np.ndarray
    reason: np.ndarray
    event: np.ndarray
    competing: np.ndarray
    flags: dict

    @property
    def subj(self):
        return self.ds.subj[self.rows]

    @property
    def visit(self):
        return self.ds.visit[self.rows]

    @property
    def arm(self):
        return self.ds.arm[self.rows]

    @property
    def treatment(self):
        return self.ds.treatment[self.rows]

    @property
    def at_risk(self):
        return self.reason == NONE

    @property
    def horizon(self) -> int:
        return self.ds.horizon

    def covariate(self, name, fill=True):
        return self.ds.covariate(name, fill=fill)[self.rows]

    def baseline(self, name):
        return self.ds.baseline(name)[self.subj]

    def reason_names(self):
        return [REASONS[int(r)] for r in self.reason]

    def has_reason(self, code) -> bool:
        return bool((self.reason == code).any())

    def __len__(self):
        return len(self.rows)

    def restrict_subjects(self, keep_subjects: np.ndarray, label=None) -> "AnalysisView":
        """View over a subject subset (boolean mask over dataset subjects)."""
        keep = np.asarray(keep_subjects, dtype=bool)[self.subj]
        return AnalysisView(label or self.label, self.ds, self.rows[keep], self.reason[keep],
                            self.event[keep], self.competing[keep], dict(self.flags))


def derive_analysis_view(ds: LongitudinalDataset, trace: AdherenceTrace | None = None, *,
                         censor_at_deviation: bool = False, censor_at_competing: bool = False,
                         composite_outcome: bool = False, label: str | None = None) -> AnalysisView:
    """Person-time for ITT, per-protocol, composite or direct-effect analyses.

    Censoring at deviation and measurement censoring act at the start of the
    visit (the row is not at risk); loss to follow-up acts after any outcome
    or competing event recorded at the same visit.
    """
    if composite_outcome and censor_at_competing:
        raise EstimationError("composite_outcome and censor_at_competing are contradictory estimands")
    if censor_at_deviation and trace is None:
        raise EstimationError("censor_at_deviation requires an adherence trace")
    y = ds.outcome.astype(bool)
    d = ds.competing.astype(bool) & ~y
    c = ds.ltfu.astype(bool) & ~y & ~d
    reason = np.zeros(ds.n_rows, dtype=np.int8)
    reason[c] = LTFU
    if censor_at_competing:
        reason[d] = COMPETING
    if censor_at_deviation:
        reason[trace.row_deviation] = DEVIATION
    reason[ds.measure_censor] = MEASUREMENT
    event = y | (d if composite_outcome else False)
    competing = d & ~composite_outcome & ~censor_at_competing

    # keep rows up to and including the first non-at-risk row per subject
    stop = reason != NONE
    prior = np.cumsum(stop) - stop
    base = np.repeat(prior[ds.starts], ds.counts)
    keep = (prior - base) == 0
    rows = np.flatnonzero(keep)
    reason = reason[rows]
    at_risk = reason == NONE
    event = event[rows] & at_risk
    competing = competing[rows] & at_risk
    if label is None:
        if censor_at_deviation:
            label = "per-protocol"
        elif composite_outcome:
            label = "ITT (composite)"
        elif censor_at_competing:
            label = "ITT (direct, competing censored)"
        else:
            label = "ITT"
    flags = dict(censor_at_deviation=censor_at_deviation, censor_at_competing=censor_at_competing,
                 composite_outcome=composite_outcome, missing_policy=ds.policy)
    return AnalysisView(label, ds, rows, reason, event.astype(bool), competing.astype(bool), flags)
