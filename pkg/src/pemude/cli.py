"""Command line entry point: ``pemude <experiment> [--config PATH] [--check] ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .config import EXPERIMENTS, ExperimentConfig, load_config
from .errors import PemUdeError

log = logging.getLogger("pemude")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pemude", description="PEM-corrected UDE experiments")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="JSON config merged over the defaults")
    ap.add_argument("--check", action="store_true", help="exit nonzero if any built-in check fails")
    ap.add_argument("--out", help="output directory (default: runs)")
    ap.add_argument("--seed", type=int, help="random seed")
    ap.add_argument("--fast", action="store_true", help="reduced budgets")
    ap.add_argument("--quiet", action="store_true", help="only print the check summary")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(message)s", datefmt="%H:%M:%S")
    try:
        kw = dict(fast=args.fast or None, seed=args.seed, out_dir=args.out)
        if args.config:
            cfg = load_config(args.config, args.experiment, **kw)
        else:
            cfg = ExperimentConfig.from_dict({}, args.experiment, **kw)
        from .experiments import run_experiment
        man = run_experiment(cfg, log.info)
    except (PemUdeError, FileNotFoundError, ValueError) as exc:
        print(f"pemude: error: {exc}", file=sys.stderr)
        return 2
    for c in man.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  [{c.value}]")
    print(f"manifest: {man.out_dir}/manifest.json ({man.wall_time:.1f} s)")
    if args.check and not man.passed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
