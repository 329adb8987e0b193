"""Randomization as an instrument for a binary point treatment.

Everything works from the table ``P(A=a, Y=y | Z=z)`` at a fixed horizon:
``Y`` is the outcome by that visit, ``A`` the treatment taken at visit 0
and ``Z`` the randomized arm.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .balance import DEFAULT_THRESHOLD, imbalance_report
from .errors import DataError, EstimationError, InstrumentViolationError, WeakInstrumentError
from .estimate import EffectEstimate

WEAK_FLOOR = 0.01
TOL = 1e-12
ASSUMPTION_LABELS = {"homogeneity": "per-protocol (homogeneity)", "monotonicity": "LATE (monotonicity)"}


@dataclass(frozen=True)
class IVSummary:
    """Joint proportions ``p[z, a, y]`` (and the counts behind them)."""
    p: np.ndarray
    n: np.ndarray | None = None
    horizon: int | None = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (2, 2, 2):
            raise DataError("IV summary needs a 2x2x2 table indexed [z, a, y]")
        if not np.isfinite(p).all():
            raise DataError("IV summary has non-finite proportions")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_counts(cls, counts, horizon=None) -> "IVSummary":
        c = np.asarray(counts, dtype=float)
        if c.shape != (2, 2, 2) or (c < 0).any():
            raise DataError("counts must be a non-negative 2x2x2 table indexed [z, a, y]")
        tot = c.sum(axis=(1, 2))
        if (tot == 0).any():
            raise DataError("each arm needs at least one subject")
        return cls(c / tot[:, None, None], c, horizon)

    @classmethod
    def from_dataset(cls, ds, horizon: int | None = None) -> "IVSummary":
        """Tabulate ``(Z, A at visit 0, Y by horizon)``; subjects lost before
        the horizon without an outcome are not allowed."""
        K = ds.horizon if horizon is None else int(horizon)
        z = ds.subject_arm.astype(int)
        a = ds.treatment[ds.starts]
        if np.isnan(a).any():
            raise DataError("treatment must be observed at visit 0")
        if not np.isin(a, (0, 1)).all():
            raise DataError("instrumental analysis needs a binary treatment")
        ev = (ds.outcome == 1) & (ds.visit <= K)
        y = np.zeros(ds.n_subjects, dtype=int)
        y[ds.subj[ev]] = 1
        last = ds.last_rows
        stopped = ds.visit[last] < K
        lost = stopped & (y == 0) & ~((ds.competing[last] == 1) & (ds.visit[last] <= K))
        if lost.any():
            raise DataError(f"{int(lost.sum())} subjects leave follow-up before visit {K} without an outcome; "
                            "the instrumental table needs complete outcomes")
        counts = np.zeros((2, 2, 2))
        np.add.at(counts, (z, a.astype(int), y), 1)
        return cls.from_counts(counts, K)

    def p_a1(self, z) -> float:
        return float(self.p[z, 1].sum())

    def p_y1(self, z) -> float:
        return float(self.p[z, :, 1].sum())

    def check(self) -> None:
        if (self.p < -TOL).any():
            raise InstrumentViolationError("negative implied probabilities in the IV summary")
        if np.any(np.abs(self.p.sum(axis=(1, 2)) - 1) > 1e-12):
            raise InstrumentViolationError("IV summary proportions do not sum to 1 within an arm")

    def to_json(self) -> dict:
        return {"horizon": self.horizon, "p_zay": self.p.tolist(),
                "counts_zay": None if self.n is None else self.n.tolist()}


@dataclass
class InstrumentReport:
    strength: float
    strength_ci: tuple
    relevance_holds: bool
    balance: list
    balance_warning: bool
    exclusion_note: str
    blinded: object = None
    comparator: object = None

    def to_json(self) -> dict:
        return {"condition_1": {"strength": self.strength, "ci": list(self.strength_ci),
                                "holds": self.relevance_holds},
                "condition_2": {"balance": [r.to_dict() for r in self.balance], "warning": self.balance_warning,
                                "note": "guaranteed by randomization; covariate balance reported"},
                "condition_3": {"testable": False, "note": self.exclusion_note, "blinded": self.blinded,
                                "comparator_arm": self.comparator}}


def check_instrument(summary: IVSummary, ds=None, covariates: Sequence[str] = (),
                     threshold: float = DEFAULT_THRESHOLD, level: float = 0.95) -> InstrumentReport:
    """Relevance (tested), randomization (balance shown), exclusion (untestable)."""
    summary.check()
    p1, p0 = summary.p_a1(1), summary.p_a1(0)
    strength = p1 - p0
    if summary.n is not None:
        n1, n0 = summary.n[1].sum(), summary.n[0].sum()
        se = np.sqrt(p1 * (1 - p1) / n1 + p0 * (1 - p0) / n0)
    else:
        se = 0.0
    zq = norm.ppf(0.5 + level / 2)
    ci = (strength - zq * se, strength + zq * se)
    holds = bool(ci[0] > 0 or ci[1] < 0)
    rows, warn = [], False
    blinded = comparator = None
    if ds is not None:
        rows = imbalance_report(ds, covariates, threshold)
        warn = any(r.flagged for r in rows)
        blinded = ds.meta.get("blinded")
        comparator = ds.meta.get("comparator_arm")
    note = "exclusion restriction cannot be tested from data"
    if blinded is False:
        note += "; the trial is unblinded, so assignment may affect the outcome other than through treatment"
    if ds is not None and ds.meta.get("active_comparator"):
        note += "; an active comparator weakens the exclusion restriction"
    return InstrumentReport(float(strength), (float(ci[0]), float(ci[1])), holds, rows, warn, note,
                            blinded, comparator)


def wald_ratio(itt_outcome: float, itt_treatment: float, floor: float = WEAK_FLOOR) -> float:
    """ITT risk difference on the outcome over the ITT difference in uptake."""
    if abs(itt_treatment) < floor:
        raise WeakInstrumentError(
            f"weak instrument: assignment changes treatment uptake by {itt_treatment:.4f} (< {floor}); "
            "the Wald ratio is unstable, report iv_bounds instead")
    return itt_outcome / itt_treatment


def iv_wald(summary: IVSummary, assumption: str = "monotonicity", floor: float = WEAK_FLOOR) -> EffectEstimate:
    """ITT effect on the outcome divided by the ITT effect on treatment.

    The number is the same under either fourth condition; ``assumption``
    only selects the label (average effect under homogeneity, complier
    effect under monotonicity). Risks are the complier risks under each
    treatment implied by the table.
    """
    if assumption not in ASSUMPTION_LABELS:
        raise EstimationError(f"assumption must be one of {sorted(ASSUMPTION_LABELS)}")
    summary.check()
    p = summary.p
    itt_a = summary.p_a1(1) - summary.p_a1(0)
    itt_y = summary.p_y1(1) - summary.p_y1(0)
    wald = wald_ratio(itt_y, itt_a, floor)
    risk1 = (p[1, 1, 1] - p[0, 1, 1]) / itt_a
    risk0 = (p[0, 0, 1] - p[1, 0, 1]) / itt_a
    est = EffectEstimate(
        ASSUMPTION_LABELS[assumption], {0: [risk0], 1: [risk1]}, kind="instrumental",
        method={"estimator": "iv_wald", "itt_outcome": itt_y, "itt_treatment": itt_a,
                "horizon": summary.horizon, "assumption": assumption},
        assumptions=["assignment predicts treatment", "randomized assignment",
                     "assignment affects the outcome only through treatment",
                     "effect homogeneity" if assumption == "homogeneity" else "monotonicity (no defiers)"],
        arm_labels={0: "A=0", 1: "A=1"},
    )
    est.extras["wald"] = wald
    return est


@dataclass(frozen=True)
class BoundsEstimate:
    lower: float
    upper: float
    method: str
    assumptions: tuple = ()

    def __post_init__(self):
        if self.lower > self.upper + 1e-12:
            raise InstrumentViolationError(f"empty bounds [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= value <= self.upper + tol

    def to_json(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "width": self.width, "method": self.method,
                "assumptions": list(self.assumptions)}


def _q(p):
    """``q[y, a, z] = P(Y=y, A=a | Z=z)``."""
    return {(y, a, z): p[z, a, y] for z in (0, 1) for a in (0, 1) for y in (0, 1)}


def balke_pearl(p) -> tuple[float, float]:
    """Sharp bounds on the average treatment effect under the instrumental conditions."""
    p = np.asarray(p, dtype=float)
    if p[0, 1].sum() == 0 and p[1, 0].sum() == 0:
        # perfect compliance identifies the effect; skip the vertex arithmetic so the bounds meet exactly
        rd = float(p[1, 1, 1] - p[0, 0, 1])
        return rd, rd
    q = _q(p)
    p00_0, p00_1 = q[0, 0, 0], q[0, 0, 1]
    p01_0, p01_1 = q[0, 1, 0], q[0, 1, 1]
    p10_0, p10_1 = q[1, 0, 0], q[1, 0, 1]
    p11_0, p11_1 = q[1, 1, 0], q[1, 1, 1]
    lower = max(
        p11_1 + p00_0 - 1,
        p11_0 + p00_1 - 1,
        p11_0 - p11_1 - p10_1 - p01_0 - p10_0,
        p11_1 - p11_0 - p10_0 - p01_1 - p10_1,
        -p01_1 - p10_1,
        -p01_0 - p10_0,
        p00_1 - p01_1 - p10_1 - p01_0 - p00_0,
        p00_0 - p01_0 - p10_0 - p01_1 - p00_1,
    )
    upper = min(
        1 - p01_1 - p10_0,
        1 - p01_0 - p10_1,
        -p01_0 + p01_1 + p00_1 + p11_0 + p00_0,
        -p01_1 + p11_1 + p00_1 + p01_0 + p00_0,
        p11_1 + p00_1,
        p11_0 + p00_0,
        -p10_1 + p11_1 + p00_1 + p11_0 + p10_0,
        -p10_0 + p11_0 + p00_0 + p11_1 + p10_1,
    )
    return float(lower), float(upper)


def natural_bounds(p) -> tuple[float, float]:
    """Worst-case bounds using only independence of assignment and outcomes.

    Each potential risk lies between its observed share and that share
    plus the untreated (or treated) fraction within each arm; the arms'
    intervals are intersected.
    """
    p = np.asarray(p, dtype=float)
    lo1 = max(p[z, 1, 1] for z in (0, 1))
    hi1 = min(p[z, 1, 1] + p[z, 0].sum() for z in (0, 1))
    lo0 = max(p[z, 0, 1] for z in (0, 1))
    hi0 = min(p[z, 0, 1] + p[z, 1].sum() for z in (0, 1))
    return float(lo1 - hi0), float(hi1 - lo0)


def instrumental_inequality(p) -> dict:
    """``sum_y max_z P(y, a | z)`` for each ``a`` (must not exceed 1)."""
    p = np.asarray(p, dtype=float)
    return {a: float(sum(max(p[z, a, y] for z in (0, 1)) for y in (0, 1))) for a in (0, 1)}


def iv_bounds(summary: IVSummary, method: str = "balke_pearl") -> BoundsEstimate:
    summary.check()
    if method == "balke_pearl":
        ineq = instrumental_inequality(summary.p)
        bad = {a: v for a, v in ineq.items() if v > 1 + 1e-12}
        if bad:
            raise InstrumentViolationError(f"instrumental inequality violated (sum_y max_z P(y,a|z) = {bad}); "
                                           "no response-type distribution fits the table")
        lo, hi = balke_pearl(summary.p)
        assumptions = ("assignment predicts treatment", "randomized assignment",
                       "assignment affects the outcome only through treatment")
    elif method == "natural":
        lo, hi = natural_bounds(summary.p)
        assumptions = ("randomized assignment (independent of potential outcomes)",)
    else:
        raise EstimationError("method must be 'balke_pearl' or 'natural'")
    lo, hi = max(lo, -1.0), min(hi, 1.0)
    return BoundsEstimate(lo, hi, method, assumptions)


@dataclass
class ComplierProfile:
    complier_share: float
    always_taker_share: float
    never_taker_share: float
    complier_means: dict = field(default_factory=dict)
    population_means: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"complier_share": self.complier_share, "always_taker_share": self.always_taker_share,
                "never_taker_share": self.never_taker_share, "complier_means": dict(self.complier_means),
                "population_means": dict(self.population_means)}


def complier_profile(ds, summary: IVSummary | None = None, covariates: Sequence[str] = ()) -> ComplierProfile:
    """Shares of compliers, always- and never-takers and complier covariate means.

    Complier mean of ``X``: ``(E[X A | Z=1] - E[X A | Z=0]) / p_c``.
    """
    summary = summary or IVSummary.from_dataset(ds)
    p1, p0 = summary.p_a1(1), summary.p_a1(0)
    pc = p1 - p0
    if pc <= 0:
        raise EstimationError(f"complier share {pc:.4f} is not positive: relevance or monotonicity fails")
    z = ds.subject_arm
    a = ds.treatment[ds.starts]
    means, pop = {}, {}
    for c in covariates:
        if c not in ds.schema or not ds.schema.get(c).baseline:
            raise DataError(f"{c!r} is not a baseline covariate")
        x = ds.baseline(c)
        means[c] = float(((x * a)[z == 1].mean() - (x * a)[z == 0].mean()) / pc)
        pop[c] = float(x.mean())
    return ComplierProfile(float(pc), float(p0), float(1 - p1), means, pop)


@dataclass
class FalsificationReport:
    covariate_checks: list
    covariates_pass: bool
    inequality: dict
    inequality_pass: bool
    justification: str

    @property
    def passed(self) -> bool:
        return self.covariates_pass and self.inequality_pass

    def to_json(self) -> dict:
        return {"covariate_associations": [r.to_dict() for r in self.covariate_checks],
                "covariates_pass": self.covariates_pass, "instrumental_inequality": self.inequality,
                "inequality_pass": self.inequality_pass, "exclusion_justification": self.justification,
                "passed": self.passed}


def iv_falsification(ds, summary: IVSummary | None = None, justification: str | None = None,
                     covariates: Sequence[str] = (), threshold: float = DEFAULT_THRESHOLD) -> FalsificationReport:
    """Checks that can refute (never confirm) the instrumental conditions."""
    if not justification or not str(justification).strip():
        raise EstimationError("an exclusion-restriction justification is required")
    summary = summary or IVSummary.from_dataset(ds)
    covs = list(covariates) or list(ds.schema.baseline_names)
    rows = imbalance_report(ds, covs, threshold)
    ineq = instrumental_inequality(summary.p)
    ok_ineq = all(v <= 1 + 1e-12 for v in ineq.values()) and bool((summary.p >= -TOL).all())
    return FalsificationReport(rows, not any(r.flagged for r in rows), ineq, ok_ineq, str(justification))
