"""Two-phase category-extension protocol on the synthetic fixture.

Phase 1 trains on the base categories, phase 2 grows the prototype bank
by the held-out split and continues training; reports Base-F1 drop with a
Student-t confidence interval over the seeds.
"""

import argparse
import sys
from pathlib import Path

from protoner.harness import (
    extension_markdown,
    extension_splits,
    run_extension,
    write_report,
)
from protoner.synthetic import extension_spec, make_pools

sys.path.insert(0, str(Path(__file__).parent))
from run_pipeline import synthetic_run_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/extension", help="report directory")
    parser.add_argument("--split", choices=("A", "B", "C"), default="A")
    parser.add_argument("--seeds", default="42,123,999")
    args = parser.parse_args()

    pools, table = make_pools(extension_spec())
    config = synthetic_run_config(42)
    held_out = extension_splits(pools.categories())[args.split]
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = run_extension(config, pools, table, held_out, seeds)
    paths = write_report(report, extension_markdown(report), args.out, "extension")
    print(extension_markdown(report))
    print(f"written: {paths['json']} {paths['markdown']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
