"""Command line entry point: ``locbo run|audit|list``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiment import (
    ExperimentSpec,
    audit_report,
    registry,
    resolve_out,
    run_experiment,
    write_audit,
)


def _cmd_run(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    d = spec.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.trials is not None:
        d["n_trials"] = args.trials
    d["out"] = resolve_out(d["out"], args.out)
    spec = ExperimentSpec.from_dict(d)
    try:
        summary = run_experiment(spec, force=args.force)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for label, vals in summary.terminal.items():
        if vals:
            print(f"{label:>12s}  final mean {sum(vals) / len(vals):.6g} over {len(vals)} trials")
    for f in summary.failures:
        print(f"failed: {f['label']} trial {f['trial']}: {f['error']}", file=sys.stderr)
    print(f"results written to {summary.out}")
    return 0


def _cmd_audit(args) -> int:
    rows = audit_report(args.results)
    write_audit(rows, Path(args.results) / "audit.csv")
    print(f"{'method':>12s} {'trial':>5s} {'miscov':>8s} {'bound1':>8s} {'f-miscov':>9s} {'bound2':>8s}")
    for r in rows:
        print(f"{r.label:>12s} {r.trial:5d} {r.y_miscoverage:8.4f} {r.lemma1_bound:8.4f} "
              f"{r.f_miscoverage:9.4f} {r.lemma2_bound:8.4f}")
    bad = [r for r in rows if not (r.lemma1_ok and r.lemma2_ok)]
    return 1 if bad else 0


def _cmd_list(args) -> int:
    print(json.dumps(registry(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="locbo", description="Conformal-calibrated Bayesian optimisation experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment spec")
    r.add_argument("spec", help="JSON spec file (or a results manifest to replay)")
    r.add_argument("--seed", type=int, default=None, help="base seed; trial k uses seed + k")
    r.add_argument("--trials", type=int, default=None, help="number of trials per method")
    r.add_argument("--out", default=None, help="output directory (overrides LOCBO_OUT and the spec)")
    r.add_argument("--force", action="store_true", help="overwrite existing results")
    r.set_defaults(func=_cmd_run)

    a = sub.add_parser("audit", help="coverage audit of a results directory")
    a.add_argument("results")
    a.set_defaults(func=_cmd_audit)

    ls = sub.add_parser("list", help="list registered problems and methods")
    ls.set_defaults(func=_cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
