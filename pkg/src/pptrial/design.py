"""Design matrices for pooled (person-time) regressions.

Term names:

``arm``, ``visit`` (linear), ``visit_cat`` (one indicator per visit after
the first level), ``A`` (current treatment), ``lag1_A``, any covariate name
(baseline covariates are read at visit 0), ``lag1_<covariate>``, and
products written ``a:b``.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .glm import DesignMatrix


class RowFrame(Mapping):
    """Lazy column lookup for a set of dataset rows."""

    def __init__(self, ds, rows, treatment=None):
        self.ds = ds
        self.rows = np.asarray(rows)
        self._treatment = ds.treatment if treatment is None else treatment
        self._cache: dict[str, np.ndarray] = {}

    def __getitem__(self, name):
        if name in self._cache:
            return self._cache[name]
        ds, rows = self.ds, self.rows
        if name == "arm":
            v = ds.arm[rows]
        elif name == "visit":
            v = ds.visit[rows]
        elif name == "A":
            v = self._treatment[rows]
        elif name == "lag1_A":
            v = ds.lagged(self._treatment)[rows]
        elif name.startswith("lag1_") and name[5:] in ds.schema:
            v = ds.lagged(ds.covariate(name[5:], fill=True))[rows]
        elif name in ds.schema:
            c = ds.schema.get(name)
            v = ds.baseline(name)[ds.subj[rows]] if c.baseline else ds.covariate(name, fill=True)[rows]
        else:
            raise KeyError(name)
        v = np.asarray(v, dtype=float)
        self._cache[name] = v
        return v

    def __iter__(self):
        return iter(self._cache)

    def __len__(self):
        return len(self.rows)


class Terms:
    """An ordered list of model terms; remembers ``visit_cat`` levels at fit."""

    def __init__(self, terms: Sequence[str], visit_levels: Sequence[int] | None = None):
        self.terms = list(terms)
        self.visit_levels = None if visit_levels is None else list(visit_levels)

    def __repr__(self):
        return f"Terms({self.terms})"

    def _needs_levels(self):
        return any("visit_cat" in t.split(":") for t in self.terms)

    def fit_levels(self, frame) -> "Terms":
        if self._needs_levels():
            self.visit_levels = sorted(np.unique(frame["visit"]).astype(int).tolist())
        return self

    def labels(self) -> list[str]:
        out = ["(intercept)"]
        for t in self.terms:
            parts = t.split(":")
            expanded = [[p] if p != "visit_cat" else [f"visit={k}" for k in self.visit_levels[1:]] for p in parts]
            for combo in _product(expanded):
                out.append(":".join(combo))
        return out

    def matrix(self, frame, n: int | None = None) -> DesignMatrix:
        if n is None:
            n = len(frame["visit"]) if self._needs_levels() or not self.terms else None
        cols: dict[str, np.ndarray] = {}
        for t in self.terms:
            parts = t.split(":")
            pieces = []
            for p in parts:
                if p == "visit_cat":
                    v = frame["visit"]
                    pieces.append({f"visit={k}": (v == k).astype(float) for k in self.visit_levels[1:]})
                else:
                    try:
                        pieces.append({p: frame[p]})
                    except KeyError:
                        raise DataError(f"unknown model term {p!r}") from None
            for combo in _product([list(d.items()) for d in pieces]):
                label = ":".join(k for k, _ in combo)
                val = np.ones_like(np.asarray(combo[0][1], dtype=float))
                for _, x in combo:
                    val = val * x
                cols[label] = val
        if n is None:
            n = len(next(iter(cols.values()))) if cols else len(frame)
        for label, v in cols.items():
            if np.isnan(v).any():
                raise DataError(f"missing covariate history for model term {label!r}")
        return DesignMatrix.from_columns(cols, intercept=True, n=n)


def _product(lists):
    out = [[]]
    for lst in lists:
        out = [o + [x] for o in out for x in lst]
    return out
