"""Covariate balance across randomized arms."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError

DEFAULT_THRESHOLD = 0.1


def _baseline(ds, covariate):
    if covariate not in ds.schema:
        raise DataError(f"unknown covariate {covariate!r}")
    if not ds.schema.get(covariate).baseline:
        raise DataError(f"covariate {covariate!r} is not a baseline covariate")
    return ds.baseline(covariate)


def standardized_mean_difference(ds, covariate: str, grouping=None) -> float:
    """``(mean_1 - mean_0) / pooled SD`` of a baseline covariate by arm.

    The pooled SD is ``sqrt((var_1 + var_0) / 2)`` (population variances; for
    a binary covariate ``p (1 - p)``). Returns 0 when both groups are
    constant at the same value and ``+-inf`` when they are constant at
    different values.
    """
    x = _baseline(ds, covariate)
    g = ds.subject_arm if grouping is None else np.asarray(grouping)
    x1, x0 = x[g == 1], x[g == 0]
    if len(x1) == 0 or len(x0) == 0:
        raise DataError("both groups must be non-empty")
    diff = x1.mean() - x0.mean()
    sd = np.sqrt((x1.var() + x0.var()) / 2)
    if sd == 0:
        return 0.0 if diff == 0 else float(np.sign(diff) * np.inf)
    return float(diff / sd)


@dataclass(frozen=True)
class ImbalanceRow:
    covariate: str
    smd: float
    flagged: bool
    pre_specified: bool

    def to_dict(self) -> dict:
        return {"covariate": self.covariate, "smd": self.smd if np.isfinite(self.smd) else str(self.smd),
                "flagged": self.flagged, "pre_specified": self.pre_specified}


def imbalance_report(ds, covariates: Sequence[str] = (), threshold: float = DEFAULT_THRESHOLD) -> list[ImbalanceRow]:
    """SMD of every baseline covariate; flagged iff ``|SMD| >= threshold``.

    Pre-specified ``covariates`` are always listed; other baseline
    covariates are listed only when they reach the threshold.
    """
    if not threshold > 0:
        raise DataError("threshold must be positive")
    rows = []
    pre = list(covariates)
    for c in pre:
        s = standardized_mean_difference(ds, c)
        rows.append(ImbalanceRow(c, s, abs(s) >= threshold, True))
    for c in ds.schema.baseline_names:
        if c in pre:
            continue
        s = standardized_mean_difference(ds, c)
        if abs(s) >= threshold:
            rows.append(ImbalanceRow(c, s, True, False))
    return rows
