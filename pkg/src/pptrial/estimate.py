"""Risk curves and the effect-estimate container."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError

ARMS = (0, 1)
BIASED_LABEL = "biased comparator: not a valid per-protocol estimate under confounded adherence"


@dataclass
class ArmCurves:
    """Discrete-time Aalen-Johansen quantities for one arm."""
    risk: np.ndarray
    competing_risk: np.ndarray
    survival: np.ndarray
    hazard: np.ndarray
    competing_hazard: np.ndarray
    at_risk: np.ndarray  # weighted


def cumulative_incidence(at_risk_w: np.ndarray, events_w: np.ndarray, competing_w: np.ndarray) -> ArmCurves:
    """Cumulative incidence from per-visit (weighted) at-risk and event totals.

    ``CI_Y(k) = sum_j hY(j) S(j-1)`` with ``S`` all-cause survival; with no
    competing events this is ``1 - prod(1 - h)``.
    """
    n = np.asarray(at_risk_w, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        hy = np.where(n > 0, events_w / n, 0.0)
        hd = np.where(n > 0, competing_w / n, 0.0)
    surv = np.cumprod(1.0 - hy - hd)
    prev = np.concatenate([[1.0], surv[:-1]])
    risk = np.cumsum(hy * prev)
    crisk = np.cumsum(hd * prev)
    return ArmCurves(risk, crisk, surv, hy, hd, n)


def arm_curves(visit, arm, at_risk, event, competing, horizon: int, weights=None) -> dict[int, ArmCurves]:
    """Per-arm curves from person-time rows (weighted if ``weights``)."""
    visit = np.asarray(visit, dtype=np.int64)
    arm = np.asarray(arm, dtype=np.int64)
    w = np.ones(len(visit)) if weights is None else np.asarray(weights, dtype=float)
    m = np.asarray(at_risk, dtype=bool)
    K = horizon + 1
    idx = arm[m] * K + visit[m]
    wm = w[m]
    n = np.bincount(idx, weights=wm, minlength=2 * K)
    y = np.bincount(idx, weights=wm * np.asarray(event, dtype=float)[m], minlength=2 * K)
    d = np.bincount(idx, weights=wm * np.asarray(competing, dtype=float)[m], minlength=2 * K)
    out = {}
    for a in ARMS:
        sl = slice(a * K, (a + 1) * K)
        out[a] = cumulative_incidence(n[sl], y[sl], d[sl])
    return out


@dataclass
class EffectEstimate:
    """Estimand-labelled risks per arm (or strategy) over visits.

    ``risk[1] - risk[0]`` is the risk difference at every visit; the risk
    ratio is undefined (NaN) wherever ``risk[0] == 0``.
    """
    label: str
    risk: dict
    kind: str = "itt"
    competing_risk: dict | None = None
    method: dict = field(default_factory=dict)
    assumptions: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    ci: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    arm_labels: dict = field(default_factory=lambda: {0: "arm 0", 1: "arm 1"})

    def __post_init__(self):
        self.risk = {int(k): np.asarray(v, dtype=float) for k, v in self.risk.items()}
        if set(self.risk) != set(ARMS):
            raise EstimationError("an effect estimate needs risks for arms 0 and 1")
        if self.competing_risk is not None:
            self.competing_risk = {int(k): np.asarray(v, dtype=float) for k, v in self.competing_risk.items()}

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.risk[1]))

    @property
    def rd(self) -> np.ndarray:
        return self.risk[1] - self.risk[0]

    @property
    def rr_defined(self) -> np.ndarray:
        return self.risk[0] != 0

    @property
    def rr(self) -> np.ndarray:
        out = np.full(len(self.risk[0]), np.nan)
        ok = self.rr_defined
        out[ok] = self.risk[1][ok] / self.risk[0][ok]
        return out

    def final(self, quantity="rd") -> float:
        return float(self.quantities()[quantity][-1])

    def quantities(self) -> dict[str, np.ndarray]:
        q = {"risk0": self.risk[0], "risk1": self.risk[1], "rd": self.rd, "rr": self.rr}
        if self.competing_risk is not None:
            q["competing_risk0"] = self.competing_risk[0]
            q["competing_risk1"] = self.competing_risk[1]
        for k, v in self.extras.items():
            q[k] = np.atleast_1d(np.asarray(v, dtype=float))
        return q

    def to_dict(self) -> dict:
        def arr(x):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(x, dtype=float)]

        out = {
            "estimand_label": self.label,
            "kind": self.kind,
            "times": self.times.tolist(),
            "arms": {str(k): v for k, v in self.arm_labels.items()},
            "risks": {str(a): arr(self.risk[a]) for a in ARMS},
            "rd": arr(self.rd),
            "rr": arr(self.rr),
            "rr_defined": self.rr_defined.tolist(),
            "competing_risks": None if self.competing_risk is None
            else {str(a): arr(self.competing_risk[a]) for a in ARMS},
            "ci": {name: {"lower": arr(lo), "upper": arr(hi)} for name, (lo, hi) in self.ci.items()},
            "method": _jsonable(self.method),
            "assumptions": list(self.assumptions),
            "warnings": list(self.warnings),
            "diagnostics": _jsonable(self.diagnostics),
            "extras": _jsonable(self.extras),
        }
        return out

    def curve_rows(self):
        """``(time, arm, risk)`` rows for CSV export."""
        for a in ARMS:
            for k, r in enumerate(self.risk[a]):
                yield k, a, float(r)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "to_json"):
        return obj.to_json()
    return obj


def estimate_from_curves(label: str, curves: dict[int, ArmCurves], kind="itt", **kw) -> EffectEstimate:
    comp = None
    if any(c.competing_risk.any() for c in curves.values()):
        comp = {a: curves[a].competing_risk for a in ARMS}
    return EffectEstimate(label, {a: curves[a].risk for a in ARMS}, kind=kind, competing_risk=comp, **kw)
