"""Command line interface.

Subcommands:
  run <config>        execute the analyses declared in a config file
  compare <a> <b>     aligned CPI comparison of two architectures
  validate            run the randomized invariant suite
  coeffs <config>     fitted vs exact coefficient comparison

Flags override the corresponding config keys (--max-iters, --tol,
--restarts, --seed, --outdir). Exit code is nonzero on any failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .config import load_config
from .errors import CapallocError
from .runner import ExperimentRunner, compare_experiments
from .validation import run_validation


def _apply_overrides(cfg, args):
    fit = cfg.fit
    if args.max_iters is not None:
        fit = replace(fit, max_iterations=args.max_iters)
    if args.tol is not None:
        fit = replace(fit, gradient_tolerance=args.tol)
    if args.restarts is not None:
        fit = replace(fit, restarts=args.restarts)
    if args.seed is not None:
        fit = replace(fit, seed=args.seed)
    return replace(cfg, fit=fit)


def _add_fit_flags(parser):
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--tol", type=float, default=None)
    parser.add_argument("--restarts", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--outdir", default=None)


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    manifest = ExperimentRunner(cfg, args.outdir).run()
    for name, files in manifest.outputs.items():
        print(f"{name}: {', '.join(files)}")
    return 0


def cmd_compare(args) -> int:
    cfg_a = _apply_overrides(load_config(args.config_a), args)
    cfg_b = _apply_overrides(load_config(args.config_b), args)
    path = compare_experiments(cfg_a, cfg_b, args.outdir or cfg_a.output_dir)
    print(path)
    return 0


def cmd_validate(args) -> int:
    results = run_validation(seed=args.seed, inject_fault=args.inject_fault)
    for name, res in results.items():
        status = "PASS" if res["passed"] else "FAIL"
        print(f"{status} {name}: {res['detail']}")
    if args.json:
        print(json.dumps(results, indent=2))
    return 0 if all(r["passed"] for r in results.values()) else 1


def cmd_coeffs(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if "coefficient_comparison" not in cfg.analyses:
        cfg = replace(cfg, analyses=("coefficient_comparison",))
    runner = ExperimentRunner(cfg, args.outdir)
    runner.outdir.mkdir(parents=True, exist_ok=True)
    path = runner.outdir / "coefficient_comparison.csv"
    runner.run_coefficient_comparison(path)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capalloc",
        description="Capacity allocation analysis for linear architectures. "
        "Coefficient index i means distance i in the past (lag convention); "
        "CPI files list lags on the first column.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a config's analyses")
    p_run.add_argument("config")
    _add_fit_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare two architectures on one task")
    p_cmp.add_argument("config_a")
    p_cmp.add_argument("config_b")
    _add_fit_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_val = sub.add_parser("validate", help="run the invariant suite")
    p_val.add_argument("--seed", type=int, default=0)
    p_val.add_argument("--json", action="store_true")
    p_val.add_argument("--inject-fault", default=None,
                       help="testing hook, e.g. 'orthonormality'")
    p_val.set_defaults(func=cmd_validate)

    p_coef = sub.add_parser("coeffs", help="fitted vs exact coefficients")
    p_coef.add_argument("config")
    _add_fit_flags(p_coef)
    p_coef.set_defaults(func=cmd_coeffs)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CapallocError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
