"""Scalability sweep: how macro-F1 moves as the category count grows.

Generates datasets at two category counts with identical per-category
exposure, trains at each size, and reports delta_f1 and relative_drop.
"""

import argparse
import sys
from pathlib import Path

from protoner.harness import run_scalability, scalability_markdown, write_report
from protoner.synthetic import make_pools, scalability_spec

sys.path.insert(0, str(Path(__file__).parent))
from run_pipeline import synthetic_run_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/scalability", help="report directory")
    parser.add_argument("--sizes", default="10,25", help="comma-separated counts")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    sizes = tuple(int(s) for s in args.sizes.split(","))
    datasets = {n: make_pools(scalability_spec(n, seed=args.seed)) for n in sizes}
    config = synthetic_run_config(args.seed)
    report = run_scalability(config, datasets)
    paths = write_report(report, scalability_markdown(report), args.out, "scalability")
    print(scalability_markdown(report))
    print(f"written: {paths['json']} {paths['markdown']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
