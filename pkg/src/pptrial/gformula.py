"""Parametric g-formula with Monte-Carlo simulation of strategies.

Models are fit on observed person-time, then a Monte-Carlo population
(baseline rows resampled with replacement) is stepped forward visit by
visit: covariates are drawn from their fitted models in the declared
order, treatment is forced by the strategy engine (or drawn from the
treatment model where the protocol leaves it unrestricted, and always in
the natural course), and hazards are accumulated rather than sampled.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .design import RowFrame, Terms
from .errors import DataError, EstimationError, PPTrialError
from .estimate import ARMS, EffectEstimate
from .glm import fit_glm, predict
from .protocol import StrategyEngine, StrategyProtocol
from .rng import CounterRNG

MIN_MC = 1000


@dataclass(frozen=True)
class CovariateModel:
    name: str
    terms: tuple
    kind: str | None = None  # inferred from the schema when None


@dataclass
class GFormulaSpec:
    """Models, in the analyst's topological order, plus simulation settings.

    ``covariate_models`` predict each time-varying covariate at visits
    ``k >= 1`` (visit-0 values come from the resampled baseline rows).
    ``treatment_terms`` drive natural-course treatment. ``competing`` and
    ``censoring`` models are fit when the data contain those events;
    ``direct=True`` switches competing events off in the simulation.
    """
    covariate_models: Sequence[CovariateModel]
    outcome_terms: Sequence[str]
    treatment_terms: Sequence[str] = ("visit_cat", "L", "lag1_A")
    competing_terms: Sequence[str] | None = None
    censoring_terms: Sequence[str] | None = None
    protocol: StrategyProtocol | None = None
    n_mc: int = 10_000
    seed: int = 0
    direct: bool = False
    support: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_mc < MIN_MC:
            raise EstimationError(f"n_mc must be >= {MIN_MC}")
        names = [m.name for m in self.covariate_models]
        if len(set(names)) != len(names):
            raise EstimationError("each covariate may have only one model")
        # a model may use only covariates simulated before it (or lags)
        seen = set()
        for m in self.covariate_models:
            for t in m.terms:
                for p in t.split(":"):
                    if p in names and p not in seen:
                        raise EstimationError(f"model for {m.name!r} uses {p!r} before it is simulated; "
                                              "declare covariate models in topological order")
            seen.add(m.name)

    @classmethod
    def default(cls, ds, covariates: Sequence[str] = ("L",), baseline: Sequence[str] = (), **kw) -> "GFormulaSpec":
        """Main-effects models: each covariate on its lag, lagged treatment,
        earlier covariates and baseline; outcome on visit, arm, treatment,
        current covariates and baseline."""
        cov, bl = list(covariates), list(baseline)
        models = []
        for i, c in enumerate(cov):
            models.append(CovariateModel(c, tuple([f"lag1_{c}", "lag1_A"] + cov[:i] + bl)))
        out = ["visit_cat", "arm", "A"] + cov + bl
        kw.setdefault("treatment_terms", tuple(["visit_cat"] + cov + bl + ["lag1_A"]))
        kw.setdefault("competing_terms", tuple(out) if ds.competing.any() else None)
        kw.setdefault("censoring_terms", tuple(["visit_cat"] + cov + bl) if ds.ltfu.any() else None)
        return cls(models, tuple(out), **kw)


def _base_names(terms):
    out = set()
    for t in terms:
        for p in t.split(":"):
            out.add("visit" if p == "visit_cat" else p)
    return out


def _drop_aliased(ds, rows, terms, dropped):
    """Remove terms whose column duplicates an earlier term or is constant."""
    frame = RowFrame(ds, rows)
    keep, cols = [], []
    for t in terms:
        if "visit_cat" in t.split(":"):
            keep.append(t)
            continue
        x = np.ones(len(rows))
        for p in t.split(":"):
            x = x * frame[p]
        if np.ptp(x) == 0 or any(np.array_equal(x, c) for c in cols):
            dropped.append(t)
            continue
        keep.append(t)
        cols.append(x)
    return keep


def _complete_rows(ds, rows, terms):
    frame = RowFrame(ds, rows)
    ok = np.ones(len(rows), dtype=bool)
    for name in _base_names(terms):
        try:
            ok &= ~np.isnan(frame[name])
        except KeyError:
            raise DataError(f"unknown model term {name!r}") from None
    return rows[ok]


class _Binary:
    """Logistic model fit separately by arm; constant outcomes handled exactly."""

    def __init__(self, ds, rows, y, terms, by_arm=True, what="model"):
        self.dropped = []
        self.terms = _drop_aliased(ds, rows, terms, self.dropped)
        self.parts = {}
        arm = ds.arm[rows]
        groups = {a: arm == a for a in ARMS} if by_arm else {None: np.ones(len(rows), dtype=bool)}
        for a, m in groups.items():
            if not m.any():
                continue
            yy = y[m]
            if yy.min() == yy.max():
                self.parts[a] = float(yy[0])
                continue
            frame = RowFrame(ds, rows[m])
            t = Terms(self.terms).fit_levels(frame)
            try:
                self.parts[a] = (t, fit_glm(t.matrix(frame, n=int(m.sum())), yy, "logit"))
            except PPTrialError as exc:
                raise EstimationError(f"{what} failed to fit: {exc}") from exc

    def prob(self, frame, arm):
        n = len(arm)
        p = np.zeros(n)
        for a, part in self.parts.items():
            m = np.ones(n, dtype=bool) if a is None else (arm == a)
            if not m.any():
                continue
            if isinstance(part, float):
                p[m] = part
                continue
            t, model = part
            sub = {k: v[m] for k, v in frame.items()}
            vis = sub["visit"]
            if t.visit_levels is not None:
                # visits beyond the fitted range reuse the last level
                sub["visit"] = np.minimum(vis, max(t.visit_levels))
            p[m] = predict(model, t.matrix(sub, n=int(m.sum())))
        return p

    def coef(self):
        return {str(a): (v if isinstance(v, float) else v[1].coef()) for a, v in self.parts.items()}


@dataclass
class GFormulaResult:
    estimate: EffectEstimate
    natural_course: EffectEstimate
    covariate_means: list
    support_violations: dict
    models: dict

    def natural_course_rows(self):
        return self.covariate_means

    def write_natural_course_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["visit", "covariate", "observed_mean", "simulated_mean"])
            for r in self.covariate_means:
                w.writerow([r["visit"], r["covariate"], repr(r["observed_mean"]), repr(r["simulated_mean"])])

    def max_natural_course_z(self) -> float:
        zs = [abs(r["observed_mean"] - r["simulated_mean"]) / r["mc_se"] for r in self.covariate_means
              if r["mc_se"] > 0]
        return float(max(zs)) if zs else 0.0


def parametric_gformula(ds, spec: GFormulaSpec) -> GFormulaResult:
    """Risks under each arm's strategy, their contrast and a natural course."""
    K = ds.horizon
    schema = ds.schema
    protocol = spec.protocol
    if protocol is None:
        protocol = StrategyProtocol.static()
    protocol.check_schema(schema.names)
    modeled = {m.name for m in spec.covariate_models}
    needed = protocol.referenced_covariates() - set(schema.baseline_names)
    if needed - modeled:
        raise EstimationError(f"protocol uses covariates without a g-formula model: {sorted(needed - modeled)}")
    all_rows = np.arange(ds.n_rows)
    after0 = all_rows[ds.visit >= 1]

    # -- fit ------------------------------------------------------------------
    cov_models = []
    for m in spec.covariate_models:
        if m.name not in schema:
            raise DataError(f"unknown covariate {m.name!r}")
        kind = m.kind or schema.get(m.name).kind
        rows = _complete_rows(ds, after0, list(m.terms) + [m.name])
        y = ds.covariates[m.name][rows]
        if kind == "binary":
            cov_models.append((m, kind, _Binary(ds, rows, y, m.terms, by_arm=False, what=f"model for {m.name}")))
        else:
            frame = RowFrame(ds, rows)
            t = Terms(_drop_aliased(ds, rows, m.terms, [])).fit_levels(frame)
            try:
                fit = fit_glm(t.matrix(frame, n=len(rows)), y, "identity")
            except PPTrialError as exc:
                raise EstimationError(f"model for {m.name} failed to fit: {exc}") from exc
            cov_models.append((m, kind, (t, fit)))
    not_lost = (ds.ltfu == 0) | (ds.outcome == 1) | (ds.competing == 1)
    y_rows = _complete_rows(ds, all_rows[not_lost], spec.outcome_terms)
    m_y = _Binary(ds, y_rows, ds.outcome[y_rows].astype(float), spec.outcome_terms, by_arm=False,
                  what="outcome model")
    m_d = None
    if spec.competing_terms is not None and ds.competing.any():
        d_rows = _complete_rows(ds, all_rows[not_lost & (ds.outcome == 0)], spec.competing_terms)
        m_d = _Binary(ds, d_rows, ds.competing[d_rows].astype(float), spec.competing_terms, by_arm=False,
                      what="competing-event model")
    m_c = None
    if spec.censoring_terms is not None and ds.ltfu.any():
        c_rows = _complete_rows(ds, after0, spec.censoring_terms)
        m_c = _Binary(ds, c_rows, ds.ltfu[c_rows].astype(float), spec.censoring_terms, what="censoring model")
    measured = ~np.isnan(ds.treatment)
    carry = _treatment_carried(ds)
    a0_rows = _complete_rows(ds, all_rows[(ds.visit == 0) & measured],
                             [t for t in spec.treatment_terms if "lag1_A" not in t.split(":")])
    a0_terms = [t for t in spec.treatment_terms if "lag1_A" not in t.split(":") and "visit_cat" not in t.split(":")]
    m_a0 = _Binary(ds, a0_rows, ds.treatment[a0_rows], a0_terms, what="treatment model (visit 0)")
    m_a = None
    if not carry and K > 0:
        a_rows = _complete_rows(ds, after0[measured[after0]], spec.treatment_terms)
        m_a = _Binary(ds, a_rows, ds.treatment[a_rows], spec.treatment_terms, what="treatment model")

    # -- simulate ---------------------------------------------------------------
    rng = CounterRNG(spec.seed)
    n_mc = spec.n_mc
    ids = np.arange(n_mc, dtype=np.uint64)
    pick = rng.integers(ds.n_subjects, ids, 0, "gformula_sample")
    base_rows = ds.starts[pick]
    support = dict(spec.support)
    for m, kind, _ in cov_models:
        if kind == "continuous" and m.name not in support:
            x = ds.covariates[m.name]
            support[m.name] = (float(np.nanmin(x)), float(np.nanmax(x)))
    violations = {m.name: 0 for m, kind, _ in cov_models if kind == "continuous"}

    def simulate(arm, engine, natural):
        frame = {"arm": arm.astype(float)}
        for c in schema.baseline_names:
            frame[c] = ds.covariates[c][base_rows]
        S = np.ones(n_mc)
        S_obs = np.ones(n_mc)
        ry, rd = np.zeros(K + 1), np.zeros(K + 1)
        acc_y, acc_d = np.zeros(n_mc), np.zeros(n_mc)
        means = []
        prev = {}
        A_prev = np.zeros(n_mc)
        A0 = None
        for k in range(K + 1):
            frame["visit"] = np.full(n_mc, float(k))
            frame["lag1_A"] = A_prev
            for m, kind, model in cov_models:
                frame[f"lag1_{m.name}"] = prev.get(m.name, np.zeros(n_mc))
            for m, kind, model in cov_models:
                if k == 0:
                    x = ds.covariates[m.name][base_rows].copy()
                    if np.isnan(x).any():
                        raise DataError(f"covariate {m.name!r} missing at visit 0 in the baseline sample")
                elif kind == "binary":
                    u = rng.uniform(ids, k, "gformula", draw=1 + _idx(cov_models, m))
                    x = (u < model.prob(frame, arm)).astype(float)
                else:
                    t, fit = model
                    eps = rng.normal(ids, k, "gformula", draw=1 + _idx(cov_models, m))
                    x = predict(fit, t.matrix(_clip_visit(frame, t), n=n_mc)) + fit.scale * eps
                    lo, hi = support[m.name]
                    violations[m.name] += int(((x < lo) | (x > hi)).sum())
                frame[m.name] = x
            # treatment
            if k == 0:
                p = m_a0.prob(frame, arm)
            elif carry:
                p = A0
            else:
                p = m_a.prob(frame, arm)
            u = rng.uniform(ids, k, "gformula", draw=0)
            A = (u < p).astype(float)
            if engine is not None:
                engine.observe(k, frame)
                req = engine.requirement()
                A = np.where(np.isnan(req), A, req)
                engine.advance(k, A)
            if k == 0:
                A0 = A.copy()
            frame["A"] = A
            hc = m_c.prob(frame, arm) if (natural and m_c is not None and k >= 1) else np.zeros(n_mc)
            w = S_obs.copy()
            means.append({m.name: _wmean(frame[m.name], w) for m, kind, _ in cov_models})
            hy = m_y.prob(frame, arm)
            hd = m_d.prob(frame, arm) if (m_d is not None and not spec.direct) else np.zeros(n_mc)
            acc_y += S * hy
            acc_d += S * (1 - hy) * hd
            S = S * (1 - hy) * (1 - hd)
            S_obs = S_obs * (1 - hc) * (1 - hy) * (1 - hd)
            ry[k], rd[k] = acc_y.mean(), acc_d.mean()
            prev = {m.name: frame[m.name] for m, _, _ in cov_models}
            A_prev = A
        return ry, rd, means

    risks, crisks = {}, {}
    for a in ARMS:
        arm = np.full(n_mc, a)
        engine = StrategyEngine(protocol, arm)
        risks[a], crisks[a], _ = simulate(arm, engine, natural=False)
    own_arm = ds.subject_arm[pick]
    nat_r, nat_c = {}, {}
    nat_means = None
    ry, rd, nat_means = simulate(own_arm, None, natural=True)
    # natural-course risks per arm: rerun bookkeeping per arm from the shared draws
    for a in ARMS:
        nat_r[a], nat_c[a], _ = simulate(np.full(n_mc, a), None, natural=True)
    has_d = m_d is not None and not spec.direct
    values = {a: protocol.arms[a].value for a in ARMS if a in protocol.arms}
    est = EffectEstimate(
        f"per-protocol (parametric g-formula; {protocol.label})", risks, kind="per-protocol",
        competing_risk=crisks if has_d else None,
        method={"estimator": "parametric_gformula", "n_mc": n_mc, "seed": spec.seed,
                "covariate_models": [{"name": m.name, "terms": list(m.terms)} for m in spec.covariate_models],
                "outcome_terms": list(spec.outcome_terms), "treatment_carried_forward": carry,
                "competing_events": "simulated" if has_d else ("switched off (direct)" if spec.direct else "none")},
        assumptions=["no unmeasured confounding given the modeled covariates",
                     "correctly specified covariate, treatment and outcome models"],
        arm_labels={a: f"arm {a}: A={v} every visit" for a, v in values.items()},
    )
    nat = EffectEstimate("natural course (parametric g-formula)", nat_r, kind="natural-course",
                         competing_risk=nat_c if has_d else None, method={"estimator": "parametric_gformula"})
    # observed vs simulated covariate means
    rows_out = []
    for k in range(K + 1):
        at = ds.visit == k
        for m, kind, _ in cov_models:
            obs = ds.covariates[m.name][at]
            obs = obs[~np.isnan(obs)]
            sim_mean, se = nat_means[k][m.name]
            rows_out.append({"visit": k, "covariate": m.name, "observed_mean": float(obs.mean()) if len(obs) else None,
                             "simulated_mean": sim_mean, "mc_se": se,
                             "observed_se": float(obs.std() / np.sqrt(max(len(obs), 1)))})
    est.diagnostics["natural_course"] = rows_out
    est.diagnostics["support_violations"] = violations
    models = {"outcome": m_y.coef(), "treatment_visit0": m_a0.coef(),
              "treatment": None if m_a is None else m_a.coef(),
              "covariates": {m.name: (model.coef() if kind == "binary" else model[1].coef())
                             for m, kind, model in cov_models}}
    if any(violations.values()):
        est.warnings.append(f"simulated covariates outside declared support: {violations}")
    return GFormulaResult(est, nat, rows_out, violations, models)


def _idx(models, m):
    return [x[0].name for x in models].index(m.name)


def _clip_visit(frame, t):
    if t.visit_levels is None:
        return frame
    out = dict(frame)
    out["visit"] = np.minimum(frame["visit"], max(t.visit_levels))
    return out


def _wmean(x, w):
    sw = w.sum()
    mean = float(np.sum(w * x) / sw)
    var = float(np.sum(w * (x - mean) ** 2) / sw)
    ess = sw ** 2 / np.sum(w ** 2)
    return mean, float(np.sqrt(var / ess))


def _treatment_carried(ds) -> bool:
    """True when treatment never changes after visit 0 (point interventions)."""
    lag = ds.lagged(ds.treatment)
    m = (ds.visit >= 1) & ~np.isnan(ds.treatment) & ~np.isnan(lag)
    return bool(m.any() and np.all(ds.treatment[m] == lag[m]))
