"""Synthetic pragmatic trials with known structural ground truth.

Every node is logit-linear (or linear-Gaussian for the continuous
covariate), so analysis models can be exactly correctly specified. Per
subject and visit ``k`` the nodes are drawn in the order

    L_k, A_k, measurement of A_k, dropout C_k, outcome Y_k, competing D_k

with baseline ``B`` (binary), ``L0 = L_0`` and an optional latent
``U ~ N(0, 1)``. All randomness comes from :class:`CounterRNG` addressed by
``(subject, visit, node)``, so a subject's history does not depend on how
many other subjects are generated, and the same uniform drives ``A_0`` in
both arms (latent compliance types).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .data import Covariate, CovariateSchema, LongitudinalDataset
from .errors import PPTrialError
from .protocol import StrategyEngine, StrategyProtocol
from .rng import CounterRNG

MAX_ETA = 30.0


class ConfigError(PPTrialError):
    """Structural configuration is invalid."""


def _pair(x):
    return (x, x) if not isinstance(x, (tuple, list)) else tuple(x)


@dataclass(frozen=True)
class SimConfig:
    """Structural generating model; two-element tuples are per arm (0, 1)."""
    name: str = "custom"
    description: str = ""
    validates: str = ""
    indicts: str = ""
    n: int = 1000
    K: int = 5
    seed: int = 0
    p_arm: float = 0.5
    # baseline
    b_prob: tuple = (0.4, 0.4)
    u_enabled: bool = False
    # covariate L (L_0 at baseline, then an AR(1) with feedback from A_{k-1})
    l0_int: float = 0.0
    l0_B: float = 0.5
    l0_U: float = 0.0
    l_int: float = 0.0
    l_lag: float = 0.6
    l_A: float = 0.0
    l_B: float = 0.3
    l_U: float = 0.0
    l_sd: float = 1.0
    feedback: bool = False
    # treatment / adherence, logit P(A_k = 1)
    a_fixed: tuple = (None, None)
    a_int: tuple = (-3.0, 3.0)
    a_L: tuple = (0.0, 0.0)
    a_L2: tuple = (0.0, 0.0)
    a_B: tuple = (0.0, 0.0)
    a_U: tuple = (0.0, 0.0)
    a_lag: tuple = (0.0, 0.0)
    point: bool = False
    # dropout
    c_enabled: bool = False
    c_int: tuple = (-4.0, -4.0)
    c_L: tuple = (0.0, 0.0)
    c_B: tuple = (0.0, 0.0)
    # competing event
    d_enabled: bool = False
    d_int: float = -4.0
    d_L: float = 0.0
    d_B: float = 0.0
    d_A: float = 0.0
    # outcome hazard
    y_int: float = -3.5
    y_A: float = 0.0
    y_L: float = 0.0
    y_L0: float = 0.0
    y_B: float = 0.0
    y_U: float = 0.0
    y_Z: float = 0.0
    y_visit: float = 0.0
    placebo_arm: bool = False
    # adherence measurement (visits >= 1)
    m_enabled: bool = False
    m_int: tuple = (4.0, 4.0)
    m_L: tuple = (0.0, 0.0)
    # negative-control outcome, recorded as binary covariate ``nc``
    nc_enabled: bool = False
    nc_int: float = -3.0
    nc_U: float = 0.0
    nc_B: float = 0.0
    # protocol and metadata
    protocol_values: tuple = (0, 1)
    grace_period: int = 0
    comparator_arm: int | None = 0
    blinded: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                object.__setattr__(self, f.name, tuple(v))
        self.validate()

    def validate(self) -> None:
        if self.n < 1 or self.K < 0:
            raise ConfigError("n must be >= 1 and K >= 0")
        if not 0 < self.p_arm < 1:
            raise ConfigError("p_arm must lie in (0, 1)")
        for p in self.b_prob:
            if not 0 < p < 1:
                raise ConfigError(f"b_prob entries must lie in (0, 1), got {self.b_prob}")
        for f in fields(self):
            v = getattr(self, f.name)
            vals = v if isinstance(v, tuple) else (v,)
            for x in vals:
                if isinstance(x, float) and not np.isfinite(x):
                    raise ConfigError(f"coefficient {f.name} is not finite: {v}")
        if self.feedback and self.l_A == 0:
            raise ConfigError("feedback preset requires a nonzero A_{k-1} -> L_k coefficient (l_A)")
        if self.l_sd <= 0:
            raise ConfigError("l_sd must be positive")
        for a in self.a_fixed:
            if a not in (None, 0, 1):
                raise ConfigError("a_fixed entries must be None, 0 or 1")

    @property
    def covariate_names(self) -> list[str]:
        names = ["B", "L0", "L"]
        if self.nc_enabled:
            names.append("nc")
        return names

    def schema(self) -> CovariateSchema:
        cov = [Covariate("B", "binary", True), Covariate("L0", "continuous", True),
               Covariate("L", "continuous", False)]
        if self.nc_enabled:
            cov.append(Covariate("nc", "binary", False))
        return CovariateSchema(tuple(cov))

    def protocol(self, grace_period: int | None = None) -> StrategyProtocol:
        g = self.grace_period if grace_period is None else grace_period
        v0, v1 = self.protocol_values
        label = f"arm 1: A={v1} every visit; arm 0: A={v0} every visit"
        return StrategyProtocol.static(label=label, treated=v1, control=v0, grace_period=g)

    def meta(self) -> dict:
        return {"comparator_arm": self.comparator_arm, "blinded": self.blinded, "preset": self.name,
                "placebo_arm": self.placebo_arm}

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d) -> "SimConfig":
        if isinstance(d, (str, Path)):
            with open(d) as fh:
                d = json.load(fh)
        return cls(**d)


def _check_eta(name, eta):
    if eta.size and np.max(np.abs(eta)) > MAX_ETA:
        raise ConfigError(f"structural probability for {name} escapes (0, 1): linear predictor reaches "
                          f"{float(np.max(np.abs(eta))):.1f}")


class _Nodes:
    """Structural equations evaluated on a population (vectorised)."""

    def __init__(self, cfg: SimConfig, rng: CounterRNG, ids: np.ndarray):
        self.cfg, self.rng, self.ids = cfg, rng, ids

    def baseline(self, z, b_prob=None):
        cfg, rng, ids = self.cfg, self.rng, self.ids
        if b_prob is None:
            b_prob = np.where(z == 1, cfg.b_prob[1], cfg.b_prob[0])
        B = (rng.uniform(ids, 0, "baseline") < b_prob).astype(float)
        U = rng.normal(ids, 0, "baseline_u") if cfg.u_enabled else np.zeros(len(ids))
        return B, U

    def covariate(self, k, B, U, L_prev, A_prev, sel):
        cfg = self.cfg
        eps = self.rng.normal(self.ids[sel], k, "covariate")
        if k == 0:
            return cfg.l0_int + cfg.l0_B * B[sel] + cfg.l0_U * U[sel] + cfg.l_sd * eps
        return (cfg.l_int + cfg.l_lag * L_prev[sel] + cfg.l_A * A_prev[sel] + cfg.l_B * B[sel]
                + cfg.l_U * U[sel] + cfg.l_sd * eps)

    def treat_prob(self, z, L, B, U, A_prev):
        cfg = self.cfg
        zi = z.astype(int)
        c = lambda t: np.asarray(t, dtype=float)[zi]  # noqa: E731
        eta = c(cfg.a_int) + c(cfg.a_L) * L + c(cfg.a_L2) * L ** 2 + c(cfg.a_B) * B + c(cfg.a_U) * U \
            + c(cfg.a_lag) * A_prev
        _check_eta("treatment", eta)
        p = expit(eta)
        fixed = np.array([np.nan if v is None else v for v in cfg.a_fixed], dtype=float)[zi]
        return np.where(np.isnan(fixed), p, fixed)

    def natural_treatment(self, k, z, L, B, U, A_prev, A0, sel):
        cfg = self.cfg
        if cfg.point and k > 0:
            return A0[sel]
        p = self.treat_prob(z[sel], L, B[sel], U[sel], A_prev[sel])
        u = self.rng.uniform(self.ids[sel], 0 if cfg.point else k, "treatment")
        return (u < p).astype(float)

    def outcome_hazard(self, k, z, A, L, L0, B, U):
        cfg = self.cfg
        eff = A if not cfg.placebo_arm else A * (z == 1)
        eta = (cfg.y_int + cfg.y_A * eff + cfg.y_L * L + cfg.y_L0 * L0 + cfg.y_B * B + cfg.y_U * U
               + cfg.y_Z * z + cfg.y_visit * k)
        _check_eta("outcome", eta)
        return expit(eta)

    def competing_hazard(self, A, L, B):
        cfg = self.cfg
        if not cfg.d_enabled:
            return np.zeros(len(A))
        eta = cfg.d_int + cfg.d_L * L + cfg.d_B * B + cfg.d_A * A
        _check_eta("competing event", eta)
        return expit(eta)

    def dropout_prob(self, k, z, L, B):
        cfg = self.cfg
        if not cfg.c_enabled or k == 0:
            return np.zeros(len(L))
        zi = z.astype(int)
        eta = np.asarray(cfg.c_int)[zi] + np.asarray(cfg.c_L)[zi] * L + np.asarray(cfg.c_B)[zi] * B
        _check_eta("dropout", eta)
        return expit(eta)

    def measured_prob(self, k, z, L):
        cfg = self.cfg
        if not cfg.m_enabled or k == 0:
            return np.ones(len(L))
        zi = z.astype(int)
        eta = np.asarray(cfg.m_int)[zi] + np.asarray(cfg.m_L)[zi] * L
        _check_eta("measurement", eta)
        return expit(eta)

    def control_prob(self, B, U):
        cfg = self.cfg
        eta = cfg.nc_int + cfg.nc_U * U + cfg.nc_B * B
        _check_eta("negative control", eta)
        return expit(eta)


def generate_trial(config: SimConfig, seed: int | None = None, n: int | None = None) -> LongitudinalDataset:
    """Simulate one trial under ``config`` (seed defaults to ``config.seed``)."""
    cfg = config
    seed = cfg.seed if seed is None else seed
    n = cfg.n if n is None else n
    rng = CounterRNG(seed)
    ids = np.arange(n, dtype=np.uint64)
    nodes = _Nodes(cfg, rng, ids)
    z = (rng.uniform(ids, 0, "baseline", draw=1) < cfg.p_arm).astype(float)
    B, U = nodes.baseline(z)
    L_prev = np.zeros(n)
    A_prev = np.zeros(n)
    A0 = np.zeros(n)
    L0 = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    cols = {k: [] for k in ("subj", "visit", "treatment", "outcome", "competing", "ltfu", "L", "nc")}
    for k in range(cfg.K + 1):
        sel = np.flatnonzero(alive)
        if len(sel) == 0:
            break
        L = nodes.covariate(k, B, U, L_prev, A_prev, sel)
        if k == 0:
            L0[sel] = L
        A = nodes.natural_treatment(k, z, L, B, U, A_prev, A0, sel)
        if k == 0:
            A0[sel] = A
        ids_s = ids[sel]
        measured = rng.uniform(ids_s, k, "measurement") < nodes.measured_prob(k, z[sel], L)
        C = rng.uniform(ids_s, k, "dropout") < nodes.dropout_prob(k, z[sel], L, B[sel])
        hy = nodes.outcome_hazard(k, z[sel], A, L, L0[sel], B[sel], U[sel])
        Y = (rng.uniform(ids_s, k, "outcome") < hy) & ~C
        hd = nodes.competing_hazard(A, L, B[sel])
        D = (rng.uniform(ids_s, k, "competing") < hd) & ~C & ~Y
        nc = (rng.uniform(ids_s, k, "control") < nodes.control_prob(B[sel], U[sel])).astype(float)
        cols["subj"].append(sel)
        cols["visit"].append(np.full(len(sel), k))
        cols["treatment"].append(np.where(measured, A, np.nan))
        cols["outcome"].append(Y.astype(np.int8))
        cols["competing"].append(D.astype(np.int8))
        cols["ltfu"].append(C.astype(np.int8))
        cols["L"].append(L)
        cols["nc"].append(nc)
        L_prev[sel] = L
        A_prev[sel] = A
        alive[sel] = ~(C | Y | D)
    cat = {k: np.concatenate(v) for k, v in cols.items()}
    order = np.lexsort((cat["visit"], cat["subj"]))
    cat = {k: v[order] for k, v in cat.items()}
    s = cat["subj"]
    covs = {"B": B[s], "L0": L0[s], "L": cat["L"]}
    if cfg.nc_enabled:
        covs["nc"] = cat["nc"]
    width = len(str(max(n - 1, 0)))
    subject_ids = np.array([f"s{i:0{width}d}" for i in range(n)], dtype=object)
    return LongitudinalDataset(subject_ids, s, cat["visit"], z[s], cat["treatment"], cat["outcome"],
                               cat["competing"], cat["ltfu"], covs, cfg.schema(), meta=cfg.meta(), check=False)


@dataclass
class GroundTruth:
    """Intervened-world risks per arm/strategy with Monte-Carlo SEs."""
    preset: str
    strategy: str
    risk: dict
    competing_risk: dict
    se_risk: dict
    se_rd: np.ndarray
    n_mc: int
    seed: int
    ate: float | None = None
    complier_effect: float | None = None
    complier_share: float | None = None
    se_complier_share: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def rd(self) -> np.ndarray:
        return self.risk[1] - self.risk[0]

    @property
    def rr(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.risk[0] > 0, self.risk[1] / self.risk[0], np.nan)

    def final_rd(self) -> float:
        return float(self.rd[-1])

    def to_json(self) -> dict:
        f = lambda a: [float(x) for x in np.asarray(a)]  # noqa: E731
        rr = self.rr
        return {
            "preset": self.preset, "strategy": self.strategy, "n_mc": self.n_mc, "seed": self.seed,
            "risk": {str(a): f(self.risk[a]) for a in (0, 1)},
            "competing_risk": {str(a): f(self.competing_risk[a]) for a in (0, 1)},
            "se_risk": {str(a): f(self.se_risk[a]) for a in (0, 1)},
            "rd": f(self.rd), "se_rd": f(self.se_rd),
            "rd_horizon": float(self.rd[-1]),
            "rr_horizon": None if not np.isfinite(rr[-1]) else float(rr[-1]),
            "ate": self.ate, "complier_effect": self.complier_effect, "complier_share": self.complier_share,
            "se_complier_share": self.se_complier_share, "extras": self.extras,
        }


def ground_truth(config: SimConfig, strategy="protocol", n_mc: int = 100_000, seed: int = 20240101,
                 direct: bool = False) -> GroundTruth:
    """Counterfactual risks by forward simulation of the structural model.

    ``strategy``:

    * ``"itt"``: assignment forced, adherence left to its natural mechanism;
    * ``"protocol"`` (default): the preset's per-protocol strategies;
    * a :class:`StrategyProtocol`: its strategies, forced through the same
      engine that evaluates observed adherence (requirements left
      unrestricted by the protocol follow the natural mechanism).

    Dropout is always disabled and missing measurement is irrelevant;
    ``direct=True`` also removes competing events. ``U`` is retained.
    Baseline covariates are drawn from their pooled (assignment-averaged)
    distribution, so the truth is that of a randomized population. Risks
    are accumulated from per-subject hazards (Rao-Blackwellised), with
    common random numbers across the two arms.
    """
    cfg = config
    if isinstance(strategy, StrategyProtocol):
        protocol, label = strategy, strategy.label
        names = set(cfg.covariate_names)
        missing = protocol.referenced_covariates() - names
        if missing:
            raise ConfigError(f"strategy references covariates absent from the structural model: {sorted(missing)}")
    elif strategy == "protocol":
        protocol = cfg.protocol(grace_period=0)
        label = protocol.label
    elif strategy == "itt":
        protocol, label = None, "ITT (assignment)"
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    rng = CounterRNG(seed)
    ids = np.arange(n_mc, dtype=np.uint64)
    nodes = _Nodes(cfg.with_(c_enabled=False, m_enabled=False, d_enabled=cfg.d_enabled and not direct), rng, ids)
    pb = cfg.p_arm * cfg.b_prob[1] + (1 - cfg.p_arm) * cfg.b_prob[0]
    K = cfg.K
    risk, crisk, se, per_subject = {}, {}, {}, {}
    comply = None
    for a in (0, 1):
        z = np.full(n_mc, float(a))
        B, U = nodes.baseline(z, b_prob=pb)
        engine = StrategyEngine(protocol, z.astype(int)) if protocol is not None else None
        L_prev = np.zeros(n_mc)
        A_prev = np.zeros(n_mc)
        A0 = np.zeros(n_mc)
        L0 = np.zeros(n_mc)
        S = np.ones(n_mc)
        ry = np.zeros((K + 1, n_mc))
        rd_ = np.zeros((K + 1, n_mc))
        acc_y = np.zeros(n_mc)
        acc_d = np.zeros(n_mc)
        sel = np.arange(n_mc)
        for k in range(K + 1):
            L = nodes.covariate(k, B, U, L_prev, A_prev, sel)
            if k == 0:
                L0 = L.copy()
            A = nodes.natural_treatment(k, z, L, B, U, A_prev, A0, sel)
            if engine is not None:
                covs = {"L": L, "B": B, "L0": L0}
                engine.observe(k, covs)
                req = engine.requirement()
                A = np.where(np.isnan(req), A, req)
                engine.advance(k, A)
            if k == 0:
                A0 = A.copy()
            hy = nodes.outcome_hazard(k, z, A, L, L0, B, U)
            hd = nodes.competing_hazard(A, L, B)
            acc_y += S * hy
            acc_d += S * (1 - hy) * hd
            S = S * (1 - hy) * (1 - hd)
            ry[k] = acc_y
            rd_[k] = acc_d
            L_prev, A_prev = L, A
        risk[a] = ry.mean(axis=1)
        crisk[a] = rd_.mean(axis=1)
        se[a] = ry.std(axis=1, ddof=1) / np.sqrt(n_mc)
        per_subject[a] = ry
        if a == 0:
            base = (B, U, L0)
    diff = per_subject[1] - per_subject[0]
    se_rd = diff.std(axis=1, ddof=1) / np.sqrt(n_mc)
    gt = GroundTruth(cfg.name, label, risk, crisk, se, se_rd, n_mc, seed)
    if cfg.point:
        # latent compliance types: the same uniform drives A_0 in both arms
        B, U, L0 = base
        p = {a: nodes.treat_prob(np.full(n_mc, a), L0, B, U, np.zeros(n_mc)) for a in (0, 1)}
        w = np.clip(p[1] - p[0], 0, None)
        gt.ate = float(diff[-1].mean())
        if w.sum() > 0:
            gt.complier_effect = float(np.sum(w * diff[-1]) / w.sum())
        gt.complier_share = float(w.mean())
        gt.se_complier_share = float(np.sqrt(max(gt.complier_share * (1 - gt.complier_share), 0) / cfg.n))
    return gt


_BASE = dict(n=50_000, K=5, seed=42)


def scenario_presets() -> dict[str, SimConfig]:
    """Named scenarios, each documenting what it validates and indicts."""
    P = {}

    def add(cfg):
        P[cfg.name] = cfg

    add(SimConfig(
        name="S-NULL", description="randomized trial, no treatment effect, imperfect adherence driven by L",
        validates="ITT null preservation; g-formula practical g-null", indicts="none (null scenario)",
        a_int=(-3.0, 2.5), a_L=(0.3, -0.4), y_int=-3.2, y_L=0.5, y_B=0.3, **_BASE))
    add(SimConfig(
        name="S-IMBAL", description="chance baseline imbalance in prognostic B (emulated: P(B=1) 0.35 vs 0.65)",
        validates="itt_standardized, itt_ipw_baseline", indicts="unadjusted ITT contrast",
        b_prob=(0.35, 0.65), a_fixed=(0, 1), y_int=-3.5, y_A=-0.4, y_B=1.4, **_BASE))
    add(SimConfig(
        name="S-LTFU", description="informative dropout: sicker subjects (high L) leave arm 1",
        validates="itt_ipcw", indicts="unadjusted pseudo-ITT",
        a_fixed=(0, 1), c_enabled=True, c_int=(-3.0, -3.0), c_L=(0.0, 0.8), y_int=-3.0, y_A=-0.4,
        y_L=1.0, l_lag=0.7, **_BASE))
    add(SimConfig(
        name="S-COMPETE", description="competing event sharing the predictor L with the outcome",
        validates="competing_effect (total, direct, composite)", indicts="naive censoring of competing events",
        a_fixed=(0, 1), d_enabled=True, d_int=-3.0, d_L=0.6, d_A=0.5, y_int=-3.0, y_A=-0.4, y_L=0.5,
        **_BASE))
    add(SimConfig(
        name="S-POINT", description="point intervention; sicker (high L0) adhere to the comparator",
        validates="pp_point_adjusted", indicts="naive per-protocol, as-treated, modified ITT",
        point=True, a_int=(-1.0, 1.5), a_L=(-1.0, -1.0), a_B=(-0.3, -0.3), y_int=-3.2, y_A=-0.5, y_L0=0.7,
        y_B=0.4, **_BASE))
    add(SimConfig(
        name="S-POINT-RANDOM", description="point intervention with adherence decided completely at random",
        validates="biased comparators (valid only here)", indicts="none",
        point=True, a_int=(-1.0, 1.5), y_int=-3.2, y_A=-0.5, y_L0=0.7, y_B=0.4, **_BASE))
    add(SimConfig(
        name="S-IV", description="one-sided noncompliance (about 65% take-up), adherence confounded by latent U",
        validates="iv_wald, iv_bounds, complier_profile", indicts="naive per-protocol",
        point=True, u_enabled=True, a_fixed=(0, None), a_int=(0.0, 0.75), a_U=(0.0, 1.0), a_B=(0.0, -0.5),
        y_int=-3.0, y_A=-0.8, y_U=0.8, y_B=0.4, comparator_arm=0, blinded=False, **_BASE))
    add(SimConfig(
        name="S-SUSTAINED", description="sustained strategies with treatment-confounder feedback",
        validates="pp_ipw_sustained, parametric_gformula, gestimate_snmm",
        indicts="baseline-only outcome regression",
        feedback=True, l_A=-0.1, l_lag=0.6, l_B=0.3, a_int=(-2.0, 2.0), a_L=(-0.6, -0.6), a_lag=(0.0, 0.0),
        y_int=-3.8, y_A=-0.3, y_L=1.0, y_B=0.3, **_BASE))
    add(SimConfig(
        name="S-SUSTAINED-MISSPEC", description="S-SUSTAINED with adherence depending on L squared",
        validates="weight-drift diagnostic", indicts="linear adherence weight model",
        feedback=True, l_int=1.0, l_A=-0.1, l_lag=0.6, l_B=0.3, l_sd=0.8, a_int=(-1.0, 3.5), a_L=(-0.6, -0.6),
        a_L2=(-0.4, -0.4), y_int=-3.8, y_A=-0.3, y_L=1.0, y_B=0.3, **_BASE))
    add(SimConfig(
        name="S-MISS", description="adherence measurement missing at random given L (more often in arm 1)",
        validates="measurement_weights with measurement_weighting policy",
        indicts="missing-as-nonadherent imputation",
        m_enabled=True, m_int=(3.0, 2.2), m_L=(-0.2, -0.5), a_int=(-3.0, 2.5), a_L=(0.2, -0.3),
        y_int=-3.2, y_A=-0.5, y_L=0.7, **_BASE))
    add(SimConfig(
        name="S-NC", description="latent U drives adherence (differently by arm), outcome and a negative-control outcome",
        validates="negative_control_check and placebo_adherence_control flag residual confounding",
        indicts="adjusted per-protocol estimate with unmeasured adherence confounding",
        point=True, u_enabled=True, placebo_arm=True, protocol_values=(1, 1), a_int=(1.0, 0.8),
        a_U=(1.0, 2.0), a_B=(0.2, 0.2), y_int=-3.2, y_A=-0.5, y_U=0.8, y_B=0.4, nc_enabled=True,
        nc_int=-2.0, nc_U=1.0, nc_B=0.3, **_BASE))
    add(SimConfig(
        name="S-NC-CLEAN", description="S-NC without the latent confounder (adherence fully explained by B)",
        validates="negative-control checks stay clean", indicts="none",
        point=True, u_enabled=False, placebo_arm=True, protocol_values=(1, 1), a_int=(1.0, 0.8),
        a_B=(0.2, 0.6), y_int=-3.2, y_A=-0.5, y_B=0.4, nc_enabled=True, nc_int=-2.0, nc_B=0.3, **_BASE))
    return P


def get_preset(name: str) -> SimConfig:
    presets = scenario_presets()
    if name not in presets:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(presets)}")
    return presets[name]
