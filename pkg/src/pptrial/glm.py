"""Logistic (IRLS) and linear (weighted least squares) regression.

Every nuisance model in the package goes through :func:`fit_glm`. The engine
is deliberately small: two links, optional non-negative row weights, no
penalties. Rank deficiency and separation raise instead of being papered
over, since a weight model that silently failed would corrupt the estimate
built on it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

from .errors import EstimationError, RankDeficientError, SeparationError

MAX_ITER = 100
DEV_TOL = 1e-10
SCORE_TOL = 1e-8
RANK_TOL = 1e-10
SEPARATION_NORM = 1e3
SEPARATION_ETA = 10.0
SEPARATION_STEP = 1e-3


@dataclass
class DesignMatrix:
    values: np.ndarray
    labels: list[str]
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.labels):
            raise EstimationError("design matrix shape does not match its labels")
        if not np.isfinite(self.values).all():
            bad = [l for j, l in enumerate(self.labels) if not np.isfinite(self.values[:, j]).all()]
            raise EstimationError(f"design matrix has missing or non-finite entries in {bad}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.values.shape[0],) or not np.isfinite(w).all() or (w < 0).any():
                raise EstimationError("row weights must be finite and non-negative")
            self.weights = w

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_columns(cls, columns: Mapping[str, np.ndarray], intercept: bool = True, n: int | None = None,
                     weights=None) -> "DesignMatrix":
        cols = list(columns.items())
        if n is None:
            n = len(cols[0][1]) if cols else 0
        labels, arrays = [], []
        if intercept:
            labels.append("(intercept)")
            arrays.append(np.ones(n))
        for name, v in cols:
            labels.append(name)
            arrays.append(np.broadcast_to(np.asarray(v, dtype=float), (n,)))
        values = np.column_stack(arrays) if arrays else np.zeros((n, 0))
        return cls(values, labels, weights)


@dataclass
class FittedModel:
    link: str
    coefficients: np.ndarray
    labels: list[str]
    converged: bool
    iterations: int
    deviance: float
    max_score: float
    fitted: np.ndarray = field(repr=False)
    scale: float = 1.0  # residual SD for the identity link

    def coef(self) -> dict[str, float]:
        return dict(zip(self.labels, self.coefficients.tolist()))


def _check_rank(X: np.ndarray, w: np.ndarray, labels: Sequence[str]) -> None:
    Xw = X * np.sqrt(w)[:, None]
    # R from a pivoted QR of the weighted design; only R is needed
    _, R, piv = scipy.linalg.qr(Xw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0:
        return
    rank = int((d > RANK_TOL * d[0]).sum())
    if rank < X.shape[1]:
        raise RankDeficientError([labels[j] for j in piv[rank:]])


def fit_glm(X: DesignMatrix, y, link: str = "logit", weights=None) -> FittedModel:
    """Fit ``y ~ X`` with a logit or identity link.

    Logit: IRLS until the relative change in deviance drops below 1e-10 or
    the largest score component falls below 1e-8 (relative to total
    weight), capped at 100 iterations. Identity: weighted least squares in
    closed form.
    """
    if link not in ("logit", "identity"):
        raise EstimationError(f"unsupported link {link!r}")
    Xv = X.values
    n, p = Xv.shape
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise EstimationError("response length does not match design rows")
    w = weights if weights is not None else X.weights
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if not np.isfinite(w).all() or (w < 0).any():
        raise EstimationError("row weights must be finite and non-negative")
    if n < p:
        raise EstimationError(f"n ({n}) < p ({p})")
    if link == "logit" and not np.isin(y, (0.0, 1.0)).all():
        raise EstimationError("logit link requires a 0/1 response")
    _check_rank(Xv, w, X.labels)
    total = w.sum()

    if link == "identity":
        sw = np.sqrt(w)
        beta, *_ = np.linalg.lstsq(Xv * sw[:, None], y * sw, rcond=None)
        mu = Xv @ beta
        rss = float(np.sum(w * (y - mu) ** 2))
        score = Xv.T @ (w * (y - mu))
        dof = max(total - p, 1.0)
        return FittedModel("identity", beta, list(X.labels), True, 1, rss,
                           float(np.max(np.abs(score))) if p else 0.0, mu, scale=float(np.sqrt(rss / dof)))

    beta = np.zeros(p)
    ybar = np.sum(w * y) / total
    if 0 < ybar < 1 and X.labels and X.labels[0] == "(intercept)":
        beta[0] = np.log(ybar / (1 - ybar))
    dev_old = np.inf
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        eta = Xv @ beta
        mu = expit(eta)
        var = np.clip(mu * (1 - mu), 1e-300, None)
        score = Xv.T @ (w * (y - mu))
        info = (Xv * (w * var)[:, None]).T @ Xv
        try:
            step = scipy.linalg.solve(info, score, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        beta = beta + step
        if np.linalg.norm(beta) > SEPARATION_NORM or not np.isfinite(beta).all():
            raise SeparationError(_separation_msg(X.labels, beta))
        eta = Xv @ beta
        mu = expit(eta)
        dev = _deviance(y, mu, w)
        score = Xv.T @ (w * (y - mu))
        max_score = float(np.max(np.abs(score))) if p else 0.0
        if max_score <= SCORE_TOL * max(total, 1.0) or abs(dev_old - dev) <= DEV_TOL * (abs(dev) + DEV_TOL):
            converged = True
            break
        dev_old = dev
    # a finite MLE is reached with vanishing Newton steps; under separation
    # the score decays while the iterates keep moving at a constant pace,
    # so probe with one more step from the final iterate
    if p and np.max(np.abs(eta)) > SEPARATION_ETA:
        var = np.clip(mu * (1 - mu), 1e-300, None)
        info = (Xv * (w * var)[:, None]).T @ Xv
        step = np.linalg.lstsq(info, score, rcond=None)[0]
    if p and (np.max(np.abs(step)) > SEPARATION_STEP and np.max(np.abs(eta)) > SEPARATION_ETA):
        raise SeparationError(_separation_msg(X.labels, beta))
    return FittedModel("logit", beta, list(X.labels), converged, it, float(dev), max_score, mu)


def _deviance(y, mu, w):
    mu = np.clip(mu, 1e-300, 1 - 1e-16)
    return float(-2.0 * np.sum(w * (y * np.log(mu) + (1 - y) * np.log1p(-mu))))


def _separation_msg(labels, beta):
    worst = labels[int(np.argmax(np.abs(beta)))]
    return f"logistic fit diverges (separation); largest coefficient on {worst!r}"


def predict(model: FittedModel, X) -> np.ndarray:
    """Mean response for new rows; labels must match the fitted design."""
    if isinstance(X, DesignMatrix):
        if list(X.labels) != list(model.labels):
            raise EstimationError(f"design labels {X.labels} do not match model labels {model.labels}")
        values = X.values
    else:
        values = np.asarray(X, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(model.labels):
            raise EstimationError("design column count does not match model")
    eta = values @ model.coefficients
    return expit(eta) if model.link == "logit" else eta
