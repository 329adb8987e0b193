"""Bootstrap inference, weight diagnostics, e-values and negative controls."""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BootstrapError, EstimationError, PPTrialError
from .estimate import EffectEstimate
from .rng import CounterRNG

PERCENTILES = (1, 50, 99, 99.5, 100)
DRIFT_TOLERANCE = 0.1


@dataclass(frozen=True)
class BootstrapPlan:
    """Subject-level percentile bootstrap.

    Replicate ``b`` resamples subjects with indices drawn from the counter
    generator at ``(slot, b)`` under ``seed``, so each replicate is a pure
    function of ``(seed, b)``.
    """
    B: int = 200
    seed: int = 0
    level: float = 0.95
    workers: int = 1
    max_failure_rate: float = 0.05
    unit: str = "subject"
    method: str = "percentile"

    def __post_init__(self):
        if self.B < 2:
            raise EstimationError("bootstrap needs B >= 2")
        if self.unit != "subject" or self.method != "percentile":
            raise EstimationError("only subject-level percentile bootstrap is supported")
        if not 0 < self.level < 1:
            raise EstimationError("confidence level must lie in (0, 1)")

    def indices(self, n: int, rep: int) -> np.ndarray:
        return CounterRNG(self.seed).integers(n, np.arange(n), rep, "bootstrap")

    @classmethod
    def from_json(cls, d) -> "BootstrapPlan":
        return cls(**d)

    def to_json(self) -> dict:
        return {"B": self.B, "seed": self.seed, "level": self.level, "workers": self.workers,
                "unit": self.unit, "method": self.method}


def _run_replicates(fn: Callable, ds, plan: BootstrapPlan, sampler=None):
    sampler = sampler or (lambda data, rep: plan.indices(data.n_subjects, rep))

    def one(rep):
        idx = sampler(ds, rep)
        try:
            return rep, fn(ds.take_subjects(idx, relabel=True)), None
        except (PPTrialError, FloatingPointError, np.linalg.LinAlgError, ZeroDivisionError) as exc:
            return rep, None, exc

    reps = range(plan.B)
    if plan.workers > 1:
        with ThreadPoolExecutor(plan.workers) as pool:
            out = list(pool.map(one, reps))
    else:
        out = [one(r) for r in reps]
    out.sort(key=lambda t: t[0])
    failures = [(r, e) for r, _, e in out if e is not None]
    taxonomy = dict(Counter(type(e).__name__ for _, e in failures))
    if len(failures) > plan.max_failure_rate * plan.B:
        first = failures[0][1]
        raise BootstrapError(
            f"{len(failures)} of {plan.B} bootstrap replicates failed (limit {plan.max_failure_rate:.0%}); "
            f"first failure: {first}", taxonomy)
    return [v for _, v, e in out if e is None], failures, taxonomy


def bootstrap_replicates(fn: Callable, ds, plan: BootstrapPlan, sampler=None) -> list:
    """Raw replicate outputs of ``fn`` (failures dropped, within the limit)."""
    return _run_replicates(fn, ds, plan, sampler)[0]


def percentile_interval(values: np.ndarray, level: float = 0.95):
    """Order-statistic percentile interval along axis 0 (NaNs ignored)."""
    a = (1 - level) / 2
    values = np.asarray(values, dtype=float)
    with np.errstate(invalid="ignore"):
        lo = np.nanquantile(values, a, axis=0, method="inverted_cdf")
        hi = np.nanquantile(values, 1 - a, axis=0, method="inverted_cdf")
    return lo, hi


def bootstrap_ci(estimator: Callable[..., EffectEstimate], ds, plan: BootstrapPlan,
                 point: EffectEstimate | None = None, sampler=None) -> EffectEstimate:
    """Attach percentile CIs for every reported quantity of ``estimator``.

    The whole pipeline (weights included) is rerun on each resampled
    dataset. ``sampler(ds, rep) -> subject indices`` overrides resampling.
    """
    import warnings as _w

    if point is None:
        point = estimator(ds)
    with _w.catch_warnings():
        _w.simplefilter("ignore")
        reps, failures, taxonomy = _run_replicates(lambda d: estimator(d).quantities(), ds, plan, sampler)
    ci = {}
    for name, val in point.quantities().items():
        stack = [r[name] for r in reps if name in r and np.shape(r[name]) == np.shape(val)]
        if not stack:
            continue
        ci[name] = percentile_interval(np.stack(stack), plan.level)
    point.ci = ci
    point.diagnostics["bootstrap"] = {
        "B": plan.B, "seed": plan.seed, "level": plan.level, "successes": len(reps),
        "failures": len(failures), "failure_taxonomy": taxonomy, "method": "percentile (subject resampling)",
    }
    return point


@dataclass
class WeightDiagnostics:
    kinds: dict
    flags: list = field(default_factory=list)
    truncation: dict = field(default_factory=dict)

    @property
    def drift(self) -> bool:
        return any(f.startswith("drift") for f in self.flags)

    def to_dict(self) -> dict:
        return {"kinds": self.kinds, "flags": list(self.flags), "truncation": dict(self.truncation)}

    def trace_rows(self):
        """``(kind, visit, mean)`` rows for CSV export."""
        for kind, d in self.kinds.items():
            for v, m in zip(d["visits"], d["mean_by_visit"]):
                yield kind, v, m


def _summary(w: np.ndarray, visit: np.ndarray) -> dict:
    pct = np.percentile(w, PERCENTILES) if len(w) else np.full(len(PERCENTILES), np.nan)
    pct = np.maximum.accumulate(pct)
    visits = np.unique(visit)
    return {
        "mean": float(w.mean()), "sd": float(w.std()),
        "percentiles": {f"p{p:g}" if p < 100 else "max": float(v) for p, v in zip(PERCENTILES, pct)},
        "visits": visits.tolist(),
        "mean_by_visit": [float(w[visit == k].mean()) for k in visits],
    }


def weight_diagnostics(ws, drift_tolerance: float = DRIFT_TOLERANCE) -> WeightDiagnostics:
    """Distribution of each weight component and of the combined weight.

    Summaries use at-risk person-time and untruncated weights; the combined
    weight after truncation is reported as ``combined_truncated``. For
    stabilized weights a per-visit mean (within arm, since the models are
    fit by arm) outside ``1 +- drift_tolerance`` raises a drift flag.
    """
    m = ws.at_risk
    if not m.any():
        raise EstimationError("weight series has no at-risk rows")
    visit = ws.visit[m]
    kinds = {name: _summary(np.asarray(v)[m], visit) for name, v in ws.components.items()}
    kinds["combined"] = _summary(ws.combined_raw[m], visit)
    kinds["combined_truncated"] = _summary(ws.combined[m], visit)
    flags = []
    if ws.stabilized:
        group = np.zeros(int(m.sum())) if ws.group is None else np.asarray(ws.group)[m]
        series = dict(ws.components, combined=ws.combined_raw)
        for name, w in series.items():
            w = np.asarray(w)[m]
            hit = _first_drift(w, visit, group, drift_tolerance)
            if hit is not None:
                g, k, mean = hit
                where = f"visit {k}" if ws.group is None else f"arm {g:g}, visit {k}"
                flags.append(f"drift: mean stabilized {name} weight {mean:.3f} at {where}")
    trunc = dict(ws.truncation) if ws.truncation else {"percentile": None, "threshold": None, "count": 0}
    return WeightDiagnostics(kinds, flags, trunc)


def _first_drift(w, visit, group, tol):
    for g in np.unique(group):
        for k in np.unique(visit):
            sel = (group == g) & (visit == k)
            if sel.any():
                mean = float(w[sel].mean())
                if abs(mean - 1) > tol:
                    return g, int(k), mean
    return None


def evalue(rr: float) -> float:
    """E-value of a risk ratio: ``rr + sqrt(rr (rr - 1))``, via ``1/rr`` below 1."""
    rr = float(rr)
    if not rr > 0 or not math.isfinite(rr):
        raise EstimationError("e-value needs a finite risk ratio > 0")
    if rr < 1:
        rr = 1 / rr
    return rr + math.sqrt(rr * (rr - 1))


def null_verdict(est: EffectEstimate, quantity="rd") -> tuple[str, bool]:
    lo, hi = est.ci[quantity]
    excludes = bool(lo[-1] > 0 or hi[-1] < 0)
    return ("residual confounding suspected" if excludes else "null-consistent"), excludes


def placebo_adherence_control(ds, protocol=None, timevarying_covariates=(), baseline_covariates=(),
                              bootstrap: BootstrapPlan | None = None, comparator_arm: int | None = None):
    """Adherence to the comparator as a negative-control exposure.

    Within the comparator arm, each subject is cloned into "always adhere"
    and "never adhere" strategies and the sustained per-protocol IPW
    pipeline contrasts the two. The comparator has no effect, so a
    contrast whose CI excludes 0 signals residual confounding of adherence.
    Returns ``(estimate, verdict)``.
    """
    from .protocol import StrategyProtocol
    from .sustained import pp_ipw_sustained

    arm = comparator_arm if comparator_arm is not None else ds.meta.get("comparator_arm")
    if arm is None:
        raise EstimationError("no comparator (placebo) arm flagged in dataset metadata")
    arm = int(arm)
    value = protocol.arms[arm].value if protocol is not None else (1 if ds.meta.get("placebo_arm") else 0)
    keep = np.flatnonzero(ds.subject_arm == arm)
    if len(keep) == 0:
        raise EstimationError(f"comparator arm {arm} has no subjects")
    sub = ds.take_subjects(keep)
    clone_protocol = StrategyProtocol.static(label=f"adhere to comparator (A={value}) vs not",
                                             treated=value, control=1 - value,
                                             grace_period=protocol.grace_period if protocol else 0)
    a = sub.treatment
    if not np.any(~np.isnan(a) & (a != value)):
        raise EstimationError("no non-adherers in the comparator arm: contrast undefined")

    def estimator(d):
        clones = _clone(d)
        est = pp_ipw_sustained(clones, clone_protocol, timevarying_covariates, baseline_covariates)
        est.label = "placebo adherence vs non-adherence (negative-control exposure)"
        est.kind = "negative-control"
        est.arm_labels = {1: f"adhere (A={value})", 0: f"non-adhere (A={1 - value})"}
        return est

    est = estimator(sub)
    if bootstrap is not None:
        est = bootstrap_ci(estimator, sub, bootstrap, point=est)
        verdict, flagged = null_verdict(est)
    else:
        verdict, flagged = "no CI (bootstrap plan required for a verdict)", False
    est.extras_verdict = verdict
    est.diagnostics["verdict"] = verdict
    return est, verdict


def _clone(ds):
    """Two copies of every subject, assigned to pseudo-arms 1 and 0."""
    from .data import LongitudinalDataset

    n = ds.n_subjects
    rows = np.concatenate([np.arange(ds.n_rows), np.arange(ds.n_rows)])
    subj = np.concatenate([ds.subj, ds.subj + n])
    arm = np.concatenate([np.ones(ds.n_rows), np.zeros(ds.n_rows)])
    ids = np.concatenate([np.array([f"{s}/adhere" for s in ds.subject_ids], dtype=object),
                          np.array([f"{s}/not" for s in ds.subject_ids], dtype=object)])
    return LongitudinalDataset(ids, subj, ds.visit[rows], arm, ds.treatment[rows], ds.outcome[rows],
                               ds.competing[rows], ds.ltfu[rows], {k: v[rows] for k, v in ds.covariates.items()},
                               ds.schema, meta=ds.meta, measure_censor=ds.measure_censor[rows], policy=ds.policy,
                               check=False)
