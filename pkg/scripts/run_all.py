"""Run every experiment with its config and print a one-line summary each.

    python scripts/run_all.py                 # full budgets, configs/
    python scripts/run_all.py --quick         # smoke budgets, configs/quick/
    python scripts/run_all.py theorem3 rwre --out /tmp/res
"""
import argparse
import sys
from pathlib import Path

from bprelab.cli import run_cli
from bprelab.experiments import EXPERIMENTS

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    p = argparse.ArgumentParser()
    p.add_argument("experiments", nargs="*", metavar="experiment", help=", ".join(EXPERIMENTS))
    p.add_argument("--quick", action="store_true", help="use the reduced smoke configs")
    p.add_argument("--out", default=str(ROOT / "results"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    args = p.parse_args(argv)
    unknown = set(args.experiments) - set(EXPERIMENTS)
    if unknown:
        p.error(f"unknown experiments: {', '.join(sorted(unknown))}")
    cfg_dir = ROOT / "configs" / ("quick" if args.quick else "")
    worst = 0
    for name in args.experiments or EXPERIMENTS:
        code = run_cli([name, "--config", str(cfg_dir / f"{name}.json"), "--out", args.out,
                        "--workers", str(args.workers), "--format", args.format, "-q"])
        print(f"{name:10s} {['pass', 'FAIL', 'config error'][code]}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
