"""Command-line driver: run | compare | converge."""

from __future__ import annotations

import argparse
import sys

from .harness import (
    RunConfig,
    UsageError,
    compare,
    convergence_study,
    load_config_file,
    run,
)
from .integrators import StepFailureError

_OVERRIDE_FLAGS = {
    "problem": str,
    "integrator": str,
    "theta_bar": float,
    "theta_mode": str,
    "c_reject": float,
    "r_max": int,
    "max_retries": int,
    "substep_method": str,
    "substep_count": int,
    "eta_columns": str,
    "nx": int,
    "nmoments": int,
    "cfl": float,
    "t_end": float,
    "h": float,
    "r0": int,
    "seed": int,
    "output_dir": str,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    for name, typ in _OVERRIDE_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None)
    parser.add_argument("--snapshots", default=None,
                        help="comma-separated snapshot times")


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for name in _OVERRIDE_FLAGS:
        val = getattr(args, name)
        if val is not None:
            if name == "eta_columns" and val != "all":
                val = int(val)
            overrides[name] = val
    if args.snapshots is not None:
        overrides["snapshot_times"] = tuple(
            float(tok) for tok in args.snapshots.split(",") if tok.strip()
        )
    return overrides


def _resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    if config_path:
        return load_config_file(config_path, overrides)
    return RunConfig(**overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlra-bench",
        description="Rank-adaptive low-rank integrator benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one integrator run")
    _add_config_flags(p_run)

    p_cmp = sub.add_parser("compare", help="run two configs and report distances")
    p_cmp.add_argument("--config-a", required=True)
    p_cmp.add_argument("--config-b", required=True)
    p_cmp.add_argument("--metric", choices=("flux_l2_rel", "dense_l2_rel"),
                       default="flux_l2_rel")
    p_cmp.add_argument("--output-dir", default=None)

    p_cvg = sub.add_parser("converge", help="step-halving convergence study")
    _add_config_flags(p_cvg)
    p_cvg.add_argument("--h-list", required=True,
                       help="comma-separated step sizes, strictly decreasing")
    p_cvg.add_argument("--theta-rule", choices=("fixed", "h_squared"), default="fixed")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = _resolve_config(args.config, _collect_overrides(args))
            out = run(config)
            print(f"run complete: {out.trajectory.step_count} steps, "
                  f"final rank {out.trajectory.ranks[-1]}, "
                  f"outputs in {config.output_dir}")
        elif args.command == "compare":
            config_a = load_config_file(args.config_a)
            config_b = load_config_file(args.config_b)
            path, rows = compare(config_a, config_b, metric=args.metric,
                                 output_dir=args.output_dir)
            for row in rows:
                parts = ", ".join(f"{k} = {v:.6g}" for k, v in row.items() if k != "time")
                print(f"t = {row['time']:.6g}: {parts}")
            print(f"report written to {path}")
        else:
            config = _resolve_config(args.config, _collect_overrides(args))
            h_list = [float(tok) for tok in args.h_list.split(",") if tok.strip()]
            path, rows, fits = convergence_study(config, h_list,
                                                 theta_rule=args.theta_rule)
            for row in rows:
                print(f"h = {row['h']:.6g}: error = {row['error']:.6g} "
                      f"(rank {row['final_rank']})")
            if fits:
                print(f"fitted order: {fits['order_all']:.3f} "
                      f"(tail {fits['order_tail']:.3f})")
            print(f"table written to {path}")
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except StepFailureError as err:
        print(f"step failure: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
