"""Ablation table on the standard synthetic fixture.

Trains the full model plus each single-switch variant (one prototype row,
cross-entropy loss, no hard-negative mining) and writes a comparison
report.
"""

import argparse
import sys
from pathlib import Path

from protoner.harness import ablation_markdown, run_ablation, write_report
from protoner.synthetic import make_pools, separable_spec

sys.path.insert(0, str(Path(__file__).parent))
from run_pipeline import synthetic_run_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablations", help="report directory")
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    pools, table = make_pools(separable_spec(args.seed))
    config = synthetic_run_config(args.seed)
    report = run_ablation(config, pools, table)
    paths = write_report(report, ablation_markdown(report), args.out, "ablation")
    print(ablation_markdown(report))
    print(f"written: {paths['json']} {paths['markdown']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
