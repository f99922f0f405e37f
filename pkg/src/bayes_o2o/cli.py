"""Command-line entry point: ``bayes-o2o <suite|verify|plot> ...``.

Exit codes: 0 success, 1 failed check or run error, 2 bad config or arguments.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness.config import PRESETS, SUITES, ConfigError, from_preset, load_config
from .harness.plotting import write_curves
from .harness.runner import RunError, run_suite
from .harness.summary import read_summary

DEFAULT_PRESET = {
    "bandit": "dilemma",
    "counterexample": "counterexamples",
    "linmdp": "bound_check",
    "bounds": "bound_grid",
    "boorl": "gridworld",
}


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayes-o2o", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for suite in SUITES:
        p = sub.add_parser(suite, help=f"run the {suite} suite")
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--preset", choices=sorted(n for n, v in PRESETS.items() if v[0] == suite),
                       help=f"named parameter set (default {DEFAULT_PRESET[suite]})")
        p.add_argument("--seeds", type=_seeds, help="comma-separated seeds, e.g. 0,1,2")
        p.add_argument("--out", type=Path, help="output directory")
    v = sub.add_parser("verify", help="run acceptance checks")
    v.add_argument("suite", nargs="?", default="all",
                   choices=["all", "counterexample", "bandit", "linmdp", "bounds", "boorl", "golden"])
    pl = sub.add_parser("plot", help="render a summary CSV to SVG")
    pl.add_argument("summary", type=Path)
    pl.add_argument("--out", type=Path, help="SVG path (default: next to the summary)")
    pl.add_argument("--title", default="")
    return parser


def _run(args) -> int:
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.suite != args.command:
            raise ConfigError(f"{args.config}: config is for suite {cfg.suite!r}, not {args.command!r}")
        if args.preset is not None:
            raise ConfigError("--preset and --config are mutually exclusive")
        if args.seeds is not None:
            cfg = type(cfg)(cfg.suite, cfg.params, args.seeds, cfg.output_dir, cfg.preset, cfg.schema_version)
    else:
        cfg = from_preset(args.preset or DEFAULT_PRESET[args.command], seeds=args.seeds)
    out = args.out if args.out is not None else Path(cfg.output_dir)
    manifest = run_suite(cfg, out)
    print(f"{cfg.suite}: {len(cfg.seeds)} seed(s), {len(manifest.files)} file(s) in {out}")
    for key, stat in manifest.summary.get("metrics", {}).items():
        print(f"  {key}: mean={stat['mean']:.6g} std={stat['std']:.3g} (n={stat['n']})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in SUITES:
            return _run(args)
        if args.command == "verify":
            from .harness.verify import run_checks

            results = run_checks(args.suite)
            return 0 if all(r.passed for r in results) else 1
        out = args.out if args.out is not None else args.summary.with_suffix(".svg")
        write_curves(read_summary(args.summary), out, title=args.title)
        print(out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RunError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
