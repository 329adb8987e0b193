"""Subject-by-visit trial records: schema, loading, validation, export.

Data are held column-wise (one numpy array per field, one entry per
subject-visit row, sorted by subject then visit). ``subjects`` rebuilds
the nested per-subject view on demand.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

FIXED_COLUMNS = ("subject_id", "visit", "arm", "treatment", "outcome", "competing", "ltfu")
KINDS = ("binary", "continuous")


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str = "continuous"
    baseline: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"covariate {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.name in FIXED_COLUMNS:
            raise DataError(f"covariate name {self.name!r} collides with a fixed column")


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[Covariate, ...] = ()

    @classmethod
    def coerce(cls, schema) -> "CovariateSchema":
        if isinstance(schema, CovariateSchema):
            return schema
        if schema is None:
            return cls()
        if isinstance(schema, (str, Path)):
            with open(schema) as fh:
                schema = json.load(fh)
        if isinstance(schema, Mapping):
            schema = schema.get("covariates", [])
        items = []
        for c in schema:
            items.append(c if isinstance(c, Covariate) else Covariate(**c))
        names = [c.name for c in items]
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names in schema")
        return cls(tuple(items))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.covariates]

    @property
    def baseline_names(self) -> list[str]:
        return [c.name for c in self.covariates if c.baseline]

    @property
    def timevarying_names(self) -> list[str]:
        return [c.name for c in self.covariates if not c.baseline]

    def __contains__(self, name) -> bool:
        return name in self.names

    def get(self, name: str) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> list[dict]:
        return [{"name": c.name, "kind": c.kind, "baseline": c.baseline} for c in self.covariates]


@dataclass(frozen=True)
class VisitRecord:
    visit: int
    treatment: int | None
    covariates: dict
    outcome: int
    competing: int
    ltfu: int
    adherence_measured: bool


@dataclass(frozen=True)
class SubjectHistory:
    subject_id: str
    arm: int
    visits: tuple[VisitRecord, ...]

    @property
    def terminal_status(self) -> str:
        last = self.visits[-1]
        if last.outcome:
            return "event"
        if last.competing:
            return "competing"
        if last.ltfu:
            return "censored"
        return "complete"


@dataclass(frozen=True)
class Issue:
    level: str  # "error" | "warning"
    code: str
    message: str
    subject: str | None = None
    visit: int | None = None

    def __str__(self):
        where = ""
        if self.subject is not None:
            where = f" [subject {self.subject}" + (f", visit {self.visit}]" if self.visit is not None else "]")
        return f"{self.level}: {self.code}: {self.message}{where}"


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class LongitudinalDataset:
    """Immutable person-time table.

    Row arrays: ``subj`` (index into ``subject_ids``), ``visit``, ``arm``,
    ``treatment`` (float, NaN when unmeasured), ``outcome``, ``competing``,
    ``ltfu`` and one float array per covariate in ``covariates``.

    ``measure_censor`` marks rows where a missing-adherence policy requires
    censoring; ``meta`` carries trial-level metadata (comparator arm,
    blinding) used by some diagnostics.
    """

    def __init__(self, subject_ids, subj, visit, arm, treatment, outcome, competing, ltfu,
                 covariates: Mapping[str, Sequence[float]], schema, meta=None,
                 measure_censor=None, policy: str | None = None, check: bool = True):
        self.schema = CovariateSchema.coerce(schema)
        self.subject_ids = _frozen(np.asarray(subject_ids, dtype=object))
        subj = np.asarray(subj, dtype=np.int64)
        visit = np.asarray(visit, dtype=np.int64)
        order = np.lexsort((visit, subj))
        if not np.array_equal(order, np.arange(len(order))):
            subj, visit = subj[order], visit[order]
        self.subj = _frozen(subj)
        self.visit = _frozen(visit)
        self.arm = _frozen(np.asarray(arm)[order], np.int64)
        self.treatment = _frozen(np.asarray(treatment, dtype=float)[order])
        self.outcome = _frozen(np.asarray(outcome)[order], np.int8)
        self.competing = _frozen(np.asarray(competing)[order], np.int8)
        self.ltfu = _frozen(np.asarray(ltfu)[order], np.int8)
        missing = set(self.schema.names) - set(covariates)
        if missing:
            raise DataError(f"covariate columns missing for schema entries: {sorted(missing)}")
        self.covariates = {name: _frozen(np.asarray(covariates[name], dtype=float)[order])
                           for name in self.schema.names}
        if measure_censor is None:
            measure_censor = np.zeros(len(order), dtype=bool)
        self.measure_censor = _frozen(np.asarray(measure_censor, dtype=bool)[order])
        self.policy = policy
        self.meta = dict(meta or {})
        n_subj = len(self.subject_ids)
        counts = np.bincount(self.subj, minlength=n_subj) if len(self.subj) else np.zeros(n_subj, int)
        self.starts = _frozen(np.concatenate([[0], np.cumsum(counts)[:-1]]) if n_subj else np.zeros(0, int))
        self.counts = _frozen(counts)
        if check:
            errors = [i for i in validate_dataset(self) if i.level == "error"]
            if errors:
                raise DataError(str(errors[0]) + (f" (+{len(errors) - 1} more)" if len(errors) > 1 else ""))

    # -- shape -----------------------------------------------------------
    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_rows(self) -> int:
        return len(self.subj)

    @property
    def horizon(self) -> int:
        return int(self.visit.max()) if self.n_rows else 0

    @property
    def adherence_measured(self) -> np.ndarray:
        return ~np.isnan(self.treatment)

    @property
    def last_rows(self) -> np.ndarray:
        return self.starts + self.counts - 1

    @property
    def subject_arm(self) -> np.ndarray:
        return self.arm[self.starts]

    def baseline(self, name: str) -> np.ndarray:
        """Per-subject value of ``name`` at visit 0."""
        return self.covariates[name][self.starts]

    def covariate(self, name: str, fill: bool = False) -> np.ndarray:
        """Row values of a covariate; ``fill`` carries a value forward one visit.

        Gaps longer than one visit remain NaN (callers needing complete
        histories raise on them).
        """
        x = self.covariates[name]
        if not fill:
            return x
        x = x.copy()
        gap = np.isnan(x)
        gap[self.starts] = False
        prev = np.flatnonzero(gap) - 1
        x[np.flatnonzero(gap)] = x[prev]
        return x

    def lagged(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Previous-visit value within subject; ``fill`` at visit 0."""
        out = np.empty_like(np.asarray(values, dtype=float))
        out[1:] = values[:-1]
        out[self.starts] = fill
        return out

    # -- construction helpers ---------------------------------------------
    def replace(self, **changes) -> "LongitudinalDataset":
        fields = dict(
            subject_ids=self.subject_ids, subj=self.subj, visit=self.visit, arm=self.arm,
            treatment=self.treatment, outcome=self.outcome, competing=self.competing,
            ltfu=self.ltfu, covariates=self.covariates, schema=self.schema, meta=self.meta,
            measure_censor=self.measure_censor, policy=self.policy,
        )
        check = changes.pop("check", False)
        fields.update(changes)
        return LongitudinalDataset(check=check, **fields)

    def with_covariate(self, name: str, values, kind: str = "continuous", baseline: bool = False):
        """Dataset with an extra (derived) covariate column."""
        covs = dict(self.covariates)
        covs[name] = np.asarray(values, dtype=float)
        schema = CovariateSchema(tuple(c for c in self.schema.covariates if c.name != name)
                                 + (Covariate(name, kind, baseline),))
        return self.replace(covariates=covs, schema=schema)

    def row_index(self, subjects: np.ndarray) -> np.ndarray:
        """Row indices for the given subjects (repeats allowed), in order."""
        subjects = np.asarray(subjects, dtype=np.int64)
        counts = self.counts[subjects]
        offsets = np.repeat(self.starts[subjects] - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
        return np.arange(counts.sum()) + offsets

    def take_subjects(self, subjects, relabel: bool = False) -> "LongitudinalDataset":
        """Subset (or resample, with ``relabel=True``) by subject index."""
        subjects = np.asarray(subjects, dtype=np.int64)
        rows = self.row_index(subjects)
        new_subj = np.repeat(np.arange(len(subjects)), self.counts[subjects])
        if relabel:
            ids = np.array([f"{self.subject_ids[s]}#{j}" for j, s in enumerate(subjects)], dtype=object)
        else:
            if len(np.unique(subjects)) != len(subjects):
                raise DataError("duplicate subjects require relabel=True")
            ids = self.subject_ids[subjects]
        return LongitudinalDataset(
            ids, new_subj, self.visit[rows], self.arm[rows], self.treatment[rows], self.outcome[rows],
            self.competing[rows], self.ltfu[rows], {k: v[rows] for k, v in self.covariates.items()},
            self.schema, meta=self.meta, measure_censor=self.measure_censor[rows], policy=self.policy,
            check=False,
        )

    @classmethod
    def from_records(cls, records: Iterable[Mapping], schema, meta=None, check=True):
        """Build from dict rows keyed by the CSV column names."""
        schema = CovariateSchema.coerce(schema)
        records = list(records)
        ids: dict = {}
        for r in records:
            ids.setdefault(str(r["subject_id"]), len(ids))
        subj = [ids[str(r["subject_id"])] for r in records]

        def num(v):
            return float("nan") if v is None or v == "" else float(v)

        return cls(
            list(ids), subj, [int(r["visit"]) for r in records], [int(r["arm"]) for r in records],
            [num(r.get("treatment")) for r in records],
            [int(r.get("outcome", 0) or 0) for r in records],
            [int(r.get("competing", 0) or 0) for r in records],
            [int(r.get("ltfu", 0) or 0) for r in records],
            {c: [num(r.get(c)) for r in records] for c in schema.names},
            schema, meta=meta, check=check,
        )

    # -- nested view -------------------------------------------------------
    def subject(self, i: int) -> SubjectHistory:
        rows = range(self.starts[i], self.starts[i] + self.counts[i])
        visits = tuple(
            VisitRecord(
                visit=int(self.visit[r]),
                treatment=None if math.isnan(self.treatment[r]) else int(self.treatment[r]),
                covariates={k: (None if math.isnan(v[r]) else float(v[r])) for k, v in self.covariates.items()},
                outcome=int(self.outcome[r]), competing=int(self.competing[r]), ltfu=int(self.ltfu[r]),
                adherence_measured=not math.isnan(self.treatment[r]),
            )
            for r in rows
        )
        return SubjectHistory(str(self.subject_ids[i]), int(self.arm[self.starts[i]]), visits)

    @property
    def subjects(self) -> list[SubjectHistory]:
        return [self.subject(i) for i in range(self.n_subjects)]

    def __repr__(self):
        return (f"LongitudinalDataset(n_subjects={self.n_subjects}, n_rows={self.n_rows}, "
                f"horizon={self.horizon}, covariates={self.schema.names})")

    # -- export ---------------------------------------------------------------
    def to_csv(self, path) -> None:
        kinds = {c.name: c.kind for c in self.schema.covariates}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(FIXED_COLUMNS) + self.schema.names)
            for r in range(self.n_rows):
                row = [self.subject_ids[self.subj[r]], int(self.visit[r]), int(self.arm[r]),
                       _fmt(self.treatment[r], "binary"), int(self.outcome[r]),
                       int(self.competing[r]), int(self.ltfu[r])]
                row += [_fmt(self.covariates[n][r], kinds[n]) for n in self.schema.names]
                w.writerow(row)


def _fmt(x: float, kind: str) -> str:
    if math.isnan(x):
        return ""
    if kind == "binary":
        return str(int(x))
    return repr(float(x))


def load_dataset(path, schema, meta=None) -> LongitudinalDataset:
    """Read the CSV column contract into a validated dataset.

    Header must be ``subject_id,visit,arm,treatment,outcome,competing,ltfu``
    followed by exactly the schema's covariates (any order). Empty cells
    are missing values.
    """
    schema = CovariateSchema.coerce(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if tuple(header[:len(FIXED_COLUMNS)]) != FIXED_COLUMNS:
            raise DataError(f"{path}: header must start with {','.join(FIXED_COLUMNS)}")
        extra = header[len(FIXED_COLUMNS):]
        if sorted(extra) != sorted(schema.names) or len(set(extra)) != len(extra):
            raise DataError(f"{path}: covariate columns {extra} do not match schema {schema.names}")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line_no}: malformed row, expected {len(header)} fields, got {len(row)}")
            try:
                rec = _parse_row(dict(zip(header, row)), schema)
            except ValueError as exc:
                raise DataError(f"{path}: line {line_no}: malformed row: {exc}") from None
            records.append(rec)
    return LongitudinalDataset.from_records(records, schema, meta=meta, check=True)


def _parse_row(raw: dict, schema: CovariateSchema) -> dict:
    def flag(name, allow_missing=False):
        v = raw[name].strip()
        if v == "" and allow_missing:
            return ""
        if v not in ("0", "1"):
            raise ValueError(f"column {name!r} must be 0 or 1, got {v!r}")
        return int(v)

    rec = {"subject_id": raw["subject_id"].strip()}
    if rec["subject_id"] == "":
        raise ValueError("empty subject_id")
    rec["visit"] = int(raw["visit"])
    rec["arm"] = flag("arm")
    rec["treatment"] = flag("treatment", allow_missing=True)
    for name in ("outcome", "competing", "ltfu"):
        rec[name] = flag(name)
    for c in schema.covariates:
        v = raw[c.name].strip()
        rec[c.name] = "" if v == "" else float(v)
    return rec


def validate_dataset(ds: LongitudinalDataset) -> list[Issue]:
    """Every invariant violation with subject/visit coordinates.

    Errors make the dataset unusable; warnings flag data gaps that weaken
    per-protocol analyses (unmeasured adherence predictors).
    """
    issues: list[Issue] = []
    if ds.n_rows == 0:
        return [Issue("error", "empty", "dataset has no rows")]
    sid = ds.subject_ids
    subj, visit = ds.subj, ds.visit
    same = np.concatenate([[False], subj[1:] == subj[:-1]])

    dup = same & np.concatenate([[False], visit[1:] == visit[:-1]])
    for r in np.flatnonzero(dup):
        issues.append(Issue("error", "duplicate", f"duplicate (subject, visit) = ({sid[subj[r]]}, {visit[r]})",
                            str(sid[subj[r]]), int(visit[r])))
    expected = np.arange(ds.n_rows) - np.repeat(ds.starts, ds.counts)
    gap = (visit != expected) & ~dup
    seen = set()
    for r in np.flatnonzero(gap):
        s = subj[r]
        if s not in seen:
            seen.add(s)
            issues.append(Issue("error", "non-contiguous", "visit indices must be contiguous from 0",
                                str(sid[s]), int(visit[r])))

    terminal = (ds.outcome == 1) | (ds.competing == 1) | (ds.ltfu == 1)
    after = np.zeros(ds.n_rows, dtype=bool)
    after[1:] = terminal[:-1] & same[1:]
    # first offending row per subject only
    first_after = after & ~np.concatenate([[False], after[:-1] & same[1:]])
    for r in np.flatnonzero(first_after):
        issues.append(Issue("error", "after-terminal", "records after terminal event",
                            str(sid[subj[r]]), int(visit[r])))

    both = (ds.outcome == 1) & (ds.competing == 1)
    for r in np.flatnonzero(both):
        issues.append(Issue("error", "first-event", "outcome and competing event both recorded (first-event convention)",
                            str(sid[subj[r]]), int(visit[r])))

    arm_change = same & np.concatenate([[False], ds.arm[1:] != ds.arm[:-1]])
    for r in np.flatnonzero(arm_change):
        issues.append(Issue("error", "arm-varies", "assignment must be constant within subject",
                            str(sid[subj[r]]), int(visit[r])))
    for r in np.flatnonzero(~np.isin(ds.arm, (0, 1))):
        issues.append(Issue("error", "arm-value", "arm must be 0 or 1", str(sid[subj[r]]), int(visit[r])))
    tr = ds.treatment
    for r in np.flatnonzero(~np.isnan(tr) & ~np.isin(tr, (0.0, 1.0))):
        issues.append(Issue("error", "treatment-value", "treatment must be 0, 1 or missing",
                            str(sid[subj[r]]), int(visit[r])))

    for c in ds.schema.covariates:
        x = ds.covariates[c.name]
        if c.kind == "binary":
            bad = ~np.isnan(x) & ~np.isin(x, (0.0, 1.0))
            for r in np.flatnonzero(bad)[:5]:
                issues.append(Issue("error", "binary-value", f"covariate {c.name!r} must be 0/1",
                                    str(sid[subj[r]]), int(visit[r])))
        if c.baseline:
            x0 = x[ds.starts]
            for s in np.flatnonzero(np.isnan(x0)):
                issues.append(Issue("error", "baseline-missing", f"baseline covariate {c.name!r} missing at visit 0",
                                    str(sid[s]), 0))
            drift = same & ~np.isnan(x) & (x != np.repeat(x0, ds.counts))
            for r in np.flatnonzero(drift)[:5]:
                issues.append(Issue("error", "baseline-varies", f"baseline covariate {c.name!r} changes over visits",
                                    str(sid[subj[r]]), int(visit[r])))
        else:
            miss = np.isnan(x)
            if miss.all():
                issues.append(Issue("warning", "unmeasured",
                                    f"time-varying covariate {c.name!r} never measured: adherence predictors unmeasured"))
                continue
            # gaps longer than one visit cannot be carried forward
            long_gap = miss & np.concatenate([[False], miss[:-1]]) & same
            long_gap |= miss & ~same  # missing at visit 0 has nothing to carry
            for r in np.flatnonzero(long_gap)[:5]:
                issues.append(Issue("warning", "covariate-gap",
                                    f"covariate {c.name!r} missing beyond one-visit carry-forward",
                                    str(sid[subj[r]]), int(visit[r])))
    if len(ds.schema.timevarying_names) == 0:
        issues.append(Issue("warning", "unmeasured",
                            "no time-varying covariates recorded: adherence predictors unmeasured"))
    return issues
