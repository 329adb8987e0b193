"""Machine-readable treatment strategies and adherence evaluation.

A :class:`StrategyProtocol` assigns each arm an :class:`ArmStrategy`
(static, or dynamic with a covariate trigger), plus trial-wide excused
conditions, a grace period and optional clinician discretion.

:class:`StrategyEngine` steps a population through visits and is the single
implementation of the adherence rules: observed-data adherence
(:func:`evaluate_adherence`) and forced-treatment simulation (g-formula,
simulator ground truth) both drive it.

Rules, per subject and visit ``k``:

* once any excused predicate holds (or clinician discretion is recorded)
  the subject is excused for the rest of follow-up;
* a dynamic arm's requirement starts at the first visit its trigger holds
  and never switches off; before that, ``pre_trigger`` applies;
* an unexcused visit whose observed treatment differs from the requirement
  extends a non-adherent run. Missing treatment neither extends nor resets
  a run. With no grace period the first non-adherent visit is the
  deviation. With a grace period ``g`` the requirement may be met anywhere
  in the window ``[s, s + g]`` (``s``: first visit of the run); a run of
  ``g + 1`` visits makes the subject a deviator at the first visit past the
  window, unless excused by then.
"""
from __future__ import annotations

import json
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ProtocolError

_OPS = {
    ">": operator.gt, ">=": operator.ge, "<": operator.lt, "<=": operator.le,
    "==": operator.eq, "!=": operator.ne,
}


@dataclass(frozen=True)
class Predicate:
    covariate: str
    op: str
    value: float
    label: str | None = None

    def __post_init__(self):
        if self.op not in _OPS:
            raise ProtocolError(f"unknown predicate operator {self.op!r}")

    @property
    def name(self) -> str:
        return self.label or f"{self.covariate}{self.op}{self.value:g}"

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        with np.errstate(invalid="ignore"):
            return _OPS[self.op](values, self.value) & ~np.isnan(values)

    @classmethod
    def from_json(cls, d) -> "Predicate":
        return cls(d["covariate"], d["op"], float(d["value"]), d.get("label"))

    def to_json(self) -> dict:
        out = {"covariate": self.covariate, "op": self.op, "value": self.value}
        if self.label:
            out["label"] = self.label
        return out


@dataclass(frozen=True)
class ArmStrategy:
    """Required treatment for one arm.

    ``value`` is required at every visit once the strategy is active. A
    static strategy is active from visit 0; a dynamic one from the first
    visit ``initiate_when`` holds. Before activation ``pre_trigger`` is
    required (``None``: unrestricted).
    """
    value: int
    initiate_when: Predicate | None = None
    pre_trigger: int | None = None

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ProtocolError("strategy treatment value must be 0 or 1")

    @classmethod
    def from_json(cls, d) -> "ArmStrategy":
        if isinstance(d, int):
            return cls(d)
        trig = d.get("initiate_when")
        pre = d.get("pre_trigger", None if trig is None else 1 - int(d["value"]))
        return cls(int(d["value"]), Predicate.from_json(trig) if trig else None, pre)

    def to_json(self) -> dict:
        out: dict = {"value": self.value}
        if self.initiate_when is not None:
            out["initiate_when"] = self.initiate_when.to_json()
            out["pre_trigger"] = self.pre_trigger
        return out


@dataclass(frozen=True)
class StrategyProtocol:
    label: str
    arms: Mapping[int, ArmStrategy]
    excused: tuple[Predicate, ...] = ()
    grace_period: int = 0
    allow_clinician_discretion: bool = False
    discretion_covariate: str = "discretion"
    description: str = ""

    def __post_init__(self):
        if self.grace_period < 0:
            raise ProtocolError("grace period must be >= 0")
        if not self.arms:
            raise ProtocolError("protocol defines no arm strategies")
        object.__setattr__(self, "arms", {int(k): v for k, v in self.arms.items()})

    @classmethod
    def static(cls, label="always-vs-never", treated=1, control=0, **kw) -> "StrategyProtocol":
        return cls(label, {1: ArmStrategy(treated), 0: ArmStrategy(control)}, **kw)

    def referenced_covariates(self) -> set[str]:
        names = {p.covariate for p in self.excused}
        names |= {a.initiate_when.covariate for a in self.arms.values() if a.initiate_when is not None}
        if self.allow_clinician_discretion:
            names.add(self.discretion_covariate)
        return names

    def check_schema(self, schema_names) -> None:
        missing = self.referenced_covariates() - set(schema_names)
        if missing:
            raise ProtocolError(f"protocol {self.label!r} references unknown covariates: {sorted(missing)}")

    def nonprotocol_value(self, arm: np.ndarray) -> np.ndarray:
        return np.array([1 - self.arms[int(a)].value for a in (0, 1)])[np.asarray(arm, dtype=int)]

    @classmethod
    def from_json(cls, d) -> "StrategyProtocol":
        if isinstance(d, (str, Path)):
            with open(d) as fh:
                d = json.load(fh)
        try:
            return cls(
                label=d["label"],
                arms={int(k): ArmStrategy.from_json(v) for k, v in d["arms"].items()},
                excused=tuple(Predicate.from_json(p) for p in d.get("excused", [])),
                grace_period=int(d.get("grace_period", 0)),
                allow_clinician_discretion=bool(d.get("allow_clinician_discretion", False)),
                discretion_covariate=d.get("discretion_covariate", "discretion"),
                description=d.get("description", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed protocol: {exc}") from None

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "arms": {str(k): v.to_json() for k, v in sorted(self.arms.items())},
            "excused": [p.to_json() for p in self.excused],
            "grace_period": self.grace_period,
            "allow_clinician_discretion": self.allow_clinician_discretion,
            "discretion_covariate": self.discretion_covariate,
            "description": self.description,
        }


class StrategyEngine:
    """Vectorised adherence state for a population following ``protocol``.

    Per visit: call :meth:`observe` with the visit's covariates, read
    :meth:`requirement` / :meth:`grace_exhausted`, then :meth:`advance` with
    the treatment actually taken. ``sel`` restricts every call to a subset
    of the population (subjects still under follow-up).
    """

    def __init__(self, protocol: StrategyProtocol, arms):
        self.protocol = protocol
        arms = np.asarray(arms, dtype=int)
        n = len(arms)
        for a in np.unique(arms):
            if int(a) not in protocol.arms:
                raise ProtocolError(f"protocol {protocol.label!r} has no strategy for arm {a}")
        self.arms = arms
        vals = {a: s.value for a, s in protocol.arms.items()}
        self.value = np.array([vals.get(int(a), 0) for a in arms], dtype=float)
        pre = {a: (np.nan if s.pre_trigger is None else s.pre_trigger) for a, s in protocol.arms.items()}
        self.pre = np.array([pre.get(int(a), np.nan) for a in arms], dtype=float)
        dynamic = {a: s.initiate_when is not None for a, s in protocol.arms.items()}
        self.triggered = np.array([not dynamic.get(int(a), False) for a in arms])
        self.excused = np.zeros(n, dtype=bool)
        self.run = np.zeros(n, dtype=np.int64)
        self.deviated = np.zeros(n, dtype=bool)
        self.pending = np.zeros(n, dtype=bool)
        self.deviation_time = np.full(n, -1, dtype=np.int64)

    def observe(self, k: int, covariates: Mapping[str, np.ndarray], sel=None):
        """Update triggers and excuses from visit-``k`` covariates.

        Returns a list of ``(positions, predicate name)`` excuse matches.
        """
        sel = np.arange(len(self.arms)) if sel is None else sel
        p = self.protocol
        matches = []
        hit = np.zeros(len(sel), dtype=bool)
        for pred in p.excused:
            m = pred(covariates[pred.covariate])
            if m.any():
                matches.append((sel[m], pred.name))
            hit |= m
        if p.allow_clinician_discretion:
            m = np.asarray(covariates[p.discretion_covariate], dtype=float) == 1
            if m.any():
                matches.append((sel[m], "clinician discretion"))
            hit |= m
        self.excused[sel] |= hit & ~self.deviated[sel]
        for a, strat in p.arms.items():
            if strat.initiate_when is None:
                continue
            in_arm = self.arms[sel] == a
            fire = in_arm & strat.initiate_when(covariates[strat.initiate_when.covariate])
            self.triggered[sel[fire]] = True
        return matches

    def requirement(self, sel=None) -> np.ndarray:
        """Required treatment at the current visit (NaN: unrestricted)."""
        sel = np.arange(len(self.arms)) if sel is None else sel
        req = np.where(self.triggered[sel], self.value[sel], self.pre[sel])
        return np.where(self.excused[sel] | self.deviated[sel], np.nan, req)

    def grace_exhausted(self, sel=None) -> np.ndarray:
        """True where a non-adherent treatment now would be a deviation."""
        sel = np.arange(len(self.arms)) if sel is None else sel
        req = self.requirement(sel)
        return ~np.isnan(req) & ~self.pending[sel] & (self.run[sel] >= self.protocol.grace_period)

    @property
    def lag(self) -> int:
        """Visits between the deciding treatment and the deviation date."""
        return 0 if self.protocol.grace_period == 0 else 1

    def advance(self, k: int, treatment: np.ndarray, sel=None):
        """Record visit-``k`` treatment.

        Returns ``(deviating, deciding)`` masks over ``sel``: subjects whose
        deviation is dated at ``k``, and subjects whose visit-``k`` treatment
        exhausted the grace window (the same set when there is no grace).
        """
        sel = np.arange(len(self.arms)) if sel is None else sel
        due = self.pending[sel] & ~self.excused[sel]
        self.pending[sel] = False
        self.deviated[sel[due]] = True
        self.deviation_time[sel[due]] = k
        a = np.asarray(treatment, dtype=float)
        req = self.requirement(sel)
        known = ~np.isnan(a) & ~np.isnan(req)
        off = known & (a != req)
        on = known & (a == req)
        run = self.run[sel]
        run = np.where(off, run + 1, np.where(on | np.isnan(req), 0, run))
        self.run[sel] = run
        decide = off & (run == self.protocol.grace_period + 1)
        if self.lag == 0:
            self.deviated[sel[decide]] = True
            self.deviation_time[sel[decide]] = k
            return decide, decide
        self.pending[sel[decide]] = True
        return due, decide


@dataclass
class AdherenceTrace:
    """Per-subject deviation times (``-1``: none) plus per-row bookkeeping.

    ``row_at_risk_of_deviation`` marks rows where a non-adherent treatment
    would have been a deviation (the rows an adherence model is fit on);
    ``row_deviation`` marks the deviating row itself and ``row_decision``
    the row whose treatment made the deviation certain; ``lag`` visits
    separate the two (0 without a grace period, else 1).
    """
    protocol: StrategyProtocol
    deviation_time: np.ndarray
    excused_subject: np.ndarray
    excused_visit: np.ndarray
    excused_predicate: list
    row_at_risk_of_deviation: np.ndarray
    row_deviation: np.ndarray
    row_required: np.ndarray
    row_decision: np.ndarray = None
    lag: int = 0
    subject_ids: np.ndarray = field(repr=False, default=None)

    def deviation(self, subject_id) -> int | None:
        i = int(np.flatnonzero(self.subject_ids == subject_id)[0])
        t = int(self.deviation_time[i])
        return None if t < 0 else t

    def excused_events(self, subject_id) -> list[tuple[int, str]]:
        i = int(np.flatnonzero(self.subject_ids == subject_id)[0])
        idx = np.flatnonzero(self.excused_subject == i)
        return [(int(self.excused_visit[j]), self.excused_predicate[j]) for j in idx]


def evaluate_adherence(ds, protocol: StrategyProtocol) -> AdherenceTrace:
    """First unexcused protocol deviation per subject."""
    protocol.check_schema(ds.schema.names)
    engine = StrategyEngine(protocol, ds.subject_arm)
    at_risk = np.zeros(ds.n_rows, dtype=bool)
    dev_row = np.zeros(ds.n_rows, dtype=bool)
    dec_row = np.zeros(ds.n_rows, dtype=bool)
    required = np.full(ds.n_rows, np.nan)
    ex_s, ex_v, ex_p = [], [], []
    needed = protocol.referenced_covariates()
    for k in range(ds.horizon + 1):
        rows = np.flatnonzero(ds.visit == k)
        sel = ds.subj[rows]
        covs = {c: ds.covariates[c][rows] for c in needed}
        for who, name in engine.observe(k, covs, sel):
            # excused events after a deviation are irrelevant
            keep = ~engine.deviated[who]
            ex_s.extend(who[keep].tolist())
            ex_v.extend([k] * int(keep.sum()))
            ex_p.extend([name] * int(keep.sum()))
        required[rows] = engine.requirement(sel)
        at_risk[rows] = engine.grace_exhausted(sel)
        new, decide = engine.advance(k, ds.treatment[rows], sel)
        dev_row[rows[new]] = True
        dec_row[rows[decide]] = True
    return AdherenceTrace(
        protocol=protocol,
        deviation_time=engine.deviation_time.copy(),
        excused_subject=np.asarray(ex_s, dtype=np.int64),
        excused_visit=np.asarray(ex_v, dtype=np.int64),
        excused_predicate=ex_p,
        row_at_risk_of_deviation=at_risk,
        row_deviation=dev_row,
        row_required=required,
        row_decision=dec_row,
        lag=engine.lag,
        subject_ids=ds.subject_ids,
    )
