"""Command line entry point: ``nelsonium <experiment> --config PATH [--seed S] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, load, resolve_output
from .experiments import EXIT_CONFIG, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nelsonium", description="Nelson diffusion and Madelung hierarchy experiments")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="TOML experiment configuration")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=1, help="threads for path sampling; outputs do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg["experiment"] != args.experiment:
        print(f"config error: file describes {cfg['experiment']!r}, command asked for {args.experiment!r}",
              file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(cfg, resolve_output(cfg, args.out), workers=args.workers)


if __name__ == "__main__":
    sys.exit(main())
