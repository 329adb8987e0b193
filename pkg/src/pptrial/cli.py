"""Command-line runner: ``pptrial validate|simulate|estimate|diagnose``.

Exit codes:
  0  success
  1  invalid dataset, unknown preset or other usage error
  2  plan or schema violation
  3  estimation failure (at least one request failed and --allow-partial was not given)
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import PlanError, PPTrialError

EXIT_OK, EXIT_INVALID, EXIT_PLAN, EXIT_ESTIMATION = 0, 1, 2, 3


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_validate(args) -> int:
    from .data import load_dataset, validate_dataset
    from .report import AnalysisPlan

    try:
        if args.plan:
            plan = AnalysisPlan.load(args.plan)
            ds = plan.load_dataset()
        else:
            if not (args.dataset and args.schema):
                _err("give --plan, or a dataset together with --schema")
                return EXIT_PLAN
            with open(args.schema) as fh:
                side = json.load(fh)
            schema = side.get("schema", side) if isinstance(side, dict) else side
            meta = side.get("meta", {}) if isinstance(side, dict) else {}
            ds = load_dataset(args.dataset, schema, meta=meta)
    except PlanError as exc:
        _err(exc)
        return EXIT_PLAN
    except (PPTrialError, OSError, json.JSONDecodeError) as exc:
        _err(exc)
        return EXIT_INVALID
    issues = validate_dataset(ds)
    for i in issues:
        print(i)
    n_err = sum(i.level == "error" for i in issues)
    print(f"{ds.n_subjects} subjects, {ds.n_rows} rows, horizon {ds.horizon}: "
          f"{n_err} errors, {len(issues) - n_err} warnings")
    return EXIT_INVALID if n_err else EXIT_OK


def cmd_simulate(args) -> int:
    from .sim import ConfigError, generate_trial, get_preset, ground_truth, scenario_presets

    try:
        cfg = get_preset(args.preset)
    except ConfigError:
        _err(f"unknown preset {args.preset!r}")
        print("available presets:", file=sys.stderr)
        for name, c in scenario_presets().items():
            print(f"  {name:22s} {c.description}", file=sys.stderr)
        return EXIT_INVALID
    n = args.n if args.n is not None else cfg.n
    seed = args.seed if args.seed is not None else (args.seed_pos if args.seed_pos is not None else cfg.seed)
    out = Path(args.out or args.out_pos or ".")
    out.mkdir(parents=True, exist_ok=True)
    cfg = cfg.with_(n=n, seed=seed)
    try:
        ds = generate_trial(cfg, seed=seed, n=n)
        truths = {"protocol": ground_truth(cfg, "protocol", n_mc=args.n_mc).to_json(),
                  "itt": ground_truth(cfg, "itt", n_mc=args.n_mc).to_json()}
        if cfg.d_enabled:
            truths["protocol_direct"] = ground_truth(cfg, "protocol", n_mc=args.n_mc, direct=True).to_json()
    except PPTrialError as exc:
        _err(exc)
        return EXIT_INVALID
    stem = out / f"{cfg.name}_n{n}_s{seed}"
    csv_path = stem.with_suffix(".csv")
    truth_path = stem.with_suffix(".truth.json")
    ds.to_csv(csv_path)
    doc = {"preset": cfg.name, "n": n, "seed": seed, "schema": cfg.schema().to_json(), "meta": cfg.meta(),
           "protocol": cfg.protocol().to_json(), "config": cfg.to_json(), "truths": truths}
    with open(truth_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    t = truths["protocol"]
    print(f"wrote {csv_path} and {truth_path}")
    print(f"{cfg.name}: {cfg.description}")
    print(f"  true per-protocol RD at visit {cfg.K}: {t['rd_horizon']:+.4f} (MC SE {t['se_rd'][-1]:.4f})")
    print(f"  true ITT RD at visit {cfg.K}: {truths['itt']['rd_horizon']:+.4f}")
    if t.get("complier_effect") is not None:
        print(f"  true complier effect {t['complier_effect']:+.4f}, ATE {t['ate']:+.4f}, "
              f"complier share {t['complier_share']:.4f}")
    return EXIT_OK


def _load_plan(path):
    from .report import AnalysisPlan

    try:
        plan = AnalysisPlan.load(path)
        return plan, plan.load_dataset()
    except PlanError as exc:
        _err(exc)
        return None, EXIT_PLAN
    except PPTrialError as exc:
        _err(f"dataset: {exc}")
        return None, EXIT_PLAN


def _out_dir(args, plan):
    if args.out:
        return Path(args.out)
    if plan.output:
        return Path(plan.output)
    return Path("pptrial-out")


def cmd_estimate(args) -> int:
    from .report import public, run_plan, write_bundle

    plan, ds = _load_plan(args.plan)
    if plan is None:
        return ds
    bundle = run_plan(plan, seed=args.seed, ds=ds, workers=args.workers)
    failed = [r for r in bundle["results"] if r["status"] == "error"]
    for r in failed:
        print(f"request {r['id']} ({r['estimator']}) failed: {r['error']}", file=sys.stderr)
    if failed and not args.allow_partial:
        _err(f"{len(failed)} of {len(bundle['results'])} requests failed; no report written "
             "(use --allow-partial to emit the successful ones)")
        return EXIT_ESTIMATION
    if not bundle["pairing"]["itt"] and bundle["pairing"]["per_protocol"] == []:
        _err("no request succeeded; no report written")
        return EXIT_ESTIMATION
    try:
        path = write_bundle(bundle, _out_dir(args, plan))
    except PlanError as exc:
        _err(exc)
        return EXIT_ESTIMATION
    for r in public(bundle)["results"]:
        if r["status"] != "ok":
            continue
        if "estimate" in r:
            e = r["estimate"]
            print(f"{r['id']:24s} {r['category']:18s} risk0={e['risks']['0'][-1]:.4f} "
                  f"risk1={e['risks']['1'][-1]:.4f} RD={e['rd'][-1]:+.4f}")
        elif "bounds" in r:
            b = r["bounds"]
            print(f"{r['id']:24s} {r['category']:18s} bounds=[{b['lower']:+.4f}, {b['upper']:+.4f}]")
    print(f"report: {path}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from .report import run_diagnostics

    plan, ds = _load_plan(args.plan)
    if plan is None:
        return ds
    try:
        rep, tables = run_diagnostics(plan, seed=args.seed, ds=ds)
    except PlanError as exc:
        _err(exc)
        return EXIT_PLAN
    except PPTrialError as exc:
        _err(exc)
        return EXIT_ESTIMATION
    out = _out_dir(args, plan)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(rep, fh, indent=2, allow_nan=False, default=float)
        fh.write("\n")
    for name, (header, rows) in tables.items():
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[repr(x) if isinstance(x, float) else x for x in row] for row in rows])
    for r in rep["imbalance"]:
        print(f"imbalance {r['covariate']}: SMD {r['smd']:+.3f}" + ("  FLAG" if r["flagged"] else ""))
    for rid, w in rep["weights"].items():
        for f in w.get("flags", []):
            print(f"{rid}: {f}")
    for rid, nc in rep["natural_course"].items():
        print(f"{rid}: natural course max |z| = {nc['max_abs_z']:.2f}")
    for key in ("negative_control", "placebo_adherence"):
        if key in rep:
            print(f"{key}: {rep[key].get('verdict', rep[key].get('error'))}")
    print(f"diagnostics: {out / 'diagnostics.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pptrial", description="Per-protocol and intention-to-treat effects "
                                "for randomized trials with nonadherence.",
                                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=__doc__.split("\n\n", 1)[1])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a dataset against its covariate schema")
    v.add_argument("dataset", nargs="?")
    v.add_argument("--schema", help="JSON schema file (a covariate list, or a truth file from 'simulate')")
    v.add_argument("--plan")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="generate a preset trial and its ground truth")
    s.add_argument("preset")
    s.add_argument("n", nargs="?", type=int)
    s.add_argument("seed_pos", nargs="?", type=_seed, metavar="SEED")
    s.add_argument("out_pos", nargs="?", metavar="OUT")
    s.add_argument("--seed", type=_seed)
    s.add_argument("--out")
    s.add_argument("--n-mc", type=int, default=100_000, help="Monte-Carlo size for the truth")
    s.set_defaults(func=cmd_simulate)

    for name, fn, text in (("estimate", cmd_estimate, "run every request of an analysis plan"),
                           ("diagnose", cmd_diagnose, "balance, weight, natural-course and negative-control checks")):
        e = sub.add_parser(name, help=text)
        e.add_argument("--plan", required=True)
        e.add_argument("--out")
        e.add_argument("--seed", type=_seed, default=0)
        e.set_defaults(func=fn)
        if name == "estimate":
            e.add_argument("--allow-partial", action="store_true")
            e.add_argument("--workers", type=int, default=1, help="run requests concurrently")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
