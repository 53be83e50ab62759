"""Command line entry point: ``srm-dyn run|validate|gen-data <config>``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import io
from .errors import ConfigError, DivergenceError, InvalidInputError, SrmError
from .experiment import generate_data, load_config, run_experiment, validate_config, with_overrides

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_DIVERGENCE = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srm-dyn", description="SRM model selection for one-step dynamics models")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="JSON config path or bundled config name")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out-dir", help="override the output directory")

    run = sub.add_parser("run", help="fit the hierarchy and write the report")
    common(run)
    run.add_argument("--threads", type=int, help="classes fitted in parallel (1 is deterministic)")
    run.add_argument("--no-plot", action="store_true", help="skip the curves.png figure")
    run.add_argument("--true-error-m", type=int, help="override the true-error sample count (0 disables)")

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")

    gen = sub.add_parser("gen-data", help="simulate the dataset only")
    common(gen)
    return parser


def _summary(report) -> str:
    lines = []
    for r in report.rows:
        mark = "*" if r.k == report.selected_k else " "
        if not r.ok:
            lines.append(f"{mark} {r.k:2d} {r.description:<32s} FAILED {r.failure}")
            continue
        true = "" if math.isnan(r.true_error_mean) else f"  true={r.true_error_mean:.4g}"
        lines.append(f"{mark} {r.k:2d} {r.description:<32s} train={r.training_error:.4g}  "
                     f"pen={r.penalty:.4g}  srm={r.srm_error:.4g}{true}")
    return "\n".join(lines)


def _dispatch(args) -> int:
    if args.command == "validate":
        problems = validate_config(load_config(args.config))
        for p in problems:
            print(p)
        if problems:
            return EXIT_CONFIG
        print("ok")
        return EXIT_OK

    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, out_dir=args.out_dir,
                         threads=getattr(args, "threads", None),
                         true_error_m=getattr(args, "true_error_m", None))
    if args.command == "gen-data":
        problems = validate_config(cfg)
        if problems:
            raise ConfigError("; ".join(problems))
        S = generate_data(cfg)
        path = io.save_dataset(S, Path(cfg.out_dir) / "dataset.csv")
        print(path)
        return EXIT_OK

    report, paths = run_experiment(cfg, plot=False if args.no_plot else None)
    print(_summary(report))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"srm-dyn: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"srm-dyn: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except SrmError as exc:
        print(f"srm-dyn: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
