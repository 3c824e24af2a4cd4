"""Command line entry point: ``bprelab <experiment> [options]``.

Exit status is 0 when every verdict passes, 1 when any fails and 2 for
configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, load_config, run_experiment

log = logging.getLogger("bprelab")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bprelab", description="Run a verification experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON config; omitted keys take the experiment defaults")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--seed", type=int, help="master seed, overrides the config")
    p.add_argument("--replicas", type=int, help="independent replicas, overrides the config")
    p.add_argument("--workers", type=int, help="worker processes (does not change results)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        raw = {}
        if args.config:
            cfg = load_config(args.config, experiment=args.experiment, seed=args.seed)
            raw = cfg.to_dict()
            raw.pop("experiment")
        else:
            raw = {}
        if args.replicas is not None:
            raw["replicas"] = args.replicas
        if args.workers is not None:
            raw["workers"] = args.workers
        cfg = ExperimentConfig.from_dict(raw, experiment=args.experiment, seed=args.seed)
        rec = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    paths = rec.write(args.out, args.format)
    for v in rec.verdicts:
        log.info("%s %s: %.6g vs %.6g (%s)", "PASS" if v.passed else "FAIL", v.name, v.value, v.reference, v.tolerance)
    log.info("%s: %d files in %s, %.1f s", rec.experiment, len(paths), args.out, rec.wall_time)
    return 0 if rec.passed else 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
