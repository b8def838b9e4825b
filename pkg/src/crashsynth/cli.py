"""Command-line interface.

Exit codes: 0 on success, 2 on schema or data-consistency failures, 3 on
missing input files or artifacts.
"""

from __future__ import annotations

import argparse
import os
import sys

from .core import SchemaError
from .fixtures import WorldConfig, generate_fixtures
from .pipeline import INPUT_NAMES, STAGES, Pipeline, load_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crashsynth",
        description="Generate representative synthetic rear-end crash datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser(
        "gen-fixtures",
        help="generate the synthetic raw-input fixture files",
    )
    gen.add_argument("--out", default="fixtures", help="output directory")
    gen.add_argument("--seed", type=int, default=0)

    run = sub.add_parser("run", help="run pipeline stages")
    run.add_argument("--config", default=None, help="TOML configuration file")
    run.add_argument("--seed", type=int, default=None, help="master seed override")
    run.add_argument("--out", default=None, help="artifact directory override")
    run.add_argument(
        "--fixtures", default=None,
        help="directory holding the raw input files (overrides [inputs])",
    )
    run.add_argument(
        "--stage", default="run-all", choices=STAGES + ("run-all",),
        help="single stage to run (default: all stages in order)",
    )
    run.add_argument("--n-target", type=int, default=None, dest="n_target")
    run.add_argument(
        "--emit-tick-logs", action="store_const", const=True, default=None,
        dest="emit_tick_logs", help="write per-scenario simulation tick logs",
    )
    return parser


def _stage_summary(stage: str, diag: dict) -> str:
    bits = []
    for key in ("n_fitted", "n_abnormal", "best_k", "k_refb", "pair_eta",
                "n_rows", "n_valid", "best_loss", "best_iteration"):
        if isinstance(diag, dict) and key in diag:
            val = diag[key]
            bits.append(f"{key}={val:.4g}" if isinstance(val, float) else f"{key}={val}")
    if isinstance(diag, dict) and "warning" in diag:
        bits.append(f"WARNING: {diag['warning']}")
    return f"[{stage}] done" + (f" ({', '.join(bits)})" if bits else "")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen-fixtures":
            paths = generate_fixtures(args.out, WorldConfig(seed=args.seed))
            for name in sorted(paths):
                print(f"{name}: {paths[name]}")
            return 0

        overrides = {}
        if args.fixtures is not None:
            overrides["inputs"] = {
                n: os.path.join(args.fixtures, f"{n}.csv") for n in INPUT_NAMES
            }
        cfg = load_config(
            args.config,
            seed=args.seed,
            out_dir=args.out,
            n_target=args.n_target,
            emit_tick_logs=args.emit_tick_logs,
            **overrides,
        )
        pipe = Pipeline(cfg)
        if args.stage == "run-all":
            for stage in STAGES:
                diag = pipe.run_stage(stage)
                print(_stage_summary(stage, diag))
        else:
            diag = pipe.run_stage(args.stage)
            print(_stage_summary(args.stage, diag))
        return 0
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SchemaError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
