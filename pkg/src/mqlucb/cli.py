"""Command-line entry point: ``mqlucb run|compare|dims|validate``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .env import InvalidMdpError, MdpSpec
from .eluder import check_dimension_bound
from .funcclass import FiniteClass

EXIT_OK, EXIT_SPEC, EXIT_RUN = 0, 2, 3


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    try:
        spec = bench.load_spec(args.spec)
    except (OSError, bench.SpecError) as e:
        _err(str(e))
        return EXIT_SPEC
    if args.seed_offset:
        spec = spec.with_seed_offset(args.seed_offset)
    try:
        res = bench.run_experiment(spec, workers=args.workers, out=args.out,
                                   base_dir=Path(args.spec).resolve().parent)
    except bench.SpecError as e:
        _err(str(e))
        return EXIT_SPEC
    for label, a in res.summary["agents"].items():
        print(f"{label}: mean regret {a['mean_final_regret']:.3f} ± {a['stderr_final_regret']:.3f} "
              f"over {len(a['seeds'])} seeds")
    if res.out_dir is not None:
        print(f"wrote {res.out_dir}")
    for f in res.failures:
        _err(f"run {f['agent']} seed {f['seed']} failed: {f['error']}")
    return EXIT_RUN if res.failures else EXIT_OK


def cmd_compare(args) -> int:
    try:
        groups = bench.load_traces(args.dirs)
        cmp = bench.compare_regret(groups)
    except (OSError, ValueError) as e:
        _err(str(e))
        return EXIT_SPEC
    print(bench.format_comparison(cmp))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "comparison.json").write_text(json.dumps(cmp, indent=2) + "\n")
    return EXIT_OK


def cmd_dims(args) -> int:
    """Class spec: {"values": [[...]], "Z": [...], "sigma": [...], "lam": 1.0, "eps": null}."""
    try:
        d = json.loads(Path(args.class_spec).read_text())
        cls = FiniteClass(np.asarray(d["values"], dtype=float), lam=d.get("lam", 1.0),
                          max_functions=64)
        report = check_dimension_bound(cls, d["Z"], d["sigma"], eps=d.get("eps"),
                                 alpha=d.get("alpha"), M=d.get("M"))
    except (OSError, KeyError, TypeError, ValueError) as e:
        _err(f"{type(e).__name__}: {e}")
        return EXIT_SPEC
    print(report.to_json())
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        mdp = MdpSpec.load(args.mdp_file)
    except (OSError, KeyError, TypeError, ValueError, InvalidMdpError) as e:
        _err(f"{type(e).__name__}: {e}")
        return EXIT_SPEC
    print(f"ok: H={mdp.horizon} S={mdp.num_states} A={mdp.num_actions}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mqlucb", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment spec (expspec/v1)")
    r.add_argument("spec")
    r.add_argument("--seed-offset", type=int, default=0)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default=None,
                   help=f"output directory (default: spec 'out', then ${bench.OUT_ENV})")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("compare", help="compare trace directories")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_compare)
    d = sub.add_parser("dims", help="eluder / generalized dimension report for a finite class")
    d.add_argument("class_spec")
    d.set_defaults(func=cmd_dims)
    v = sub.add_parser("validate", help="validate an MDP file (mdp/v1)")
    v.add_argument("mdp_file")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
