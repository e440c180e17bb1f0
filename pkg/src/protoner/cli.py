"""Command-line front end for the staged pipeline and experiment harness.

Exit codes: 0 on success, 1 on a runtime failure (missing prerequisite,
bad data, training blow-up), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .embeddings import load_embeddings
from .gradcheck import full_loss_check, run_primitive_suite
from .harness import (
    ablation_markdown,
    extension_markdown,
    extension_splits,
    run_ablation,
    run_extension,
    write_report,
)
from .pipeline import (
    MissingPrerequisite,
    Workdir,
    load_pools,
    stage_episodes,
    stage_evaluate,
    stage_ingest,
    stage_spans,
    stage_taxonomy,
    stage_train,
)

log = logging.getLogger(__name__)

WORKDIR_ENV = "PROTONER_WORKDIR"


def default_workdir() -> str:
    return os.environ.get(WORKDIR_ENV, "workdir")


def add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--workdir",
        default=None,
        help=f"pipeline working directory (default: ${WORKDIR_ENV} or ./workdir)",
    )
    parser.add_argument(
        "--config",
        default=None,
        help="JSON run-configuration file (defaults apply when omitted)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoner",
        description="few-shot entity-mention classification pipeline",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a corpus into sentence records")
    add_common(p)
    p.add_argument("--corpus", required=True, help="PubTator-format corpus file")

    p = sub.add_parser("taxonomy", help="build the category merge plan and scores")
    add_common(p)
    p.add_argument("--hierarchy", required=True, help="type hierarchy TSV file")

    p = sub.add_parser("spans", help="generate and label marked spans")
    add_common(p)

    p = sub.add_parser("episodes", help="freeze support/validation/query pools")
    add_common(p)

    p = sub.add_parser("train", help="meta-train a model on the frozen pools")
    add_common(p)
    p.add_argument("--embeddings", required=True, help="word-embedding text file")

    p = sub.add_parser("evaluate", help="score the trained model on query pools")
    add_common(p)
    p.add_argument("--embeddings", required=True, help="word-embedding text file")

    p = sub.add_parser("ablate", help="train each ablation variant and tabulate")
    add_common(p)
    p.add_argument("--embeddings", required=True, help="word-embedding text file")
    p.add_argument(
        "--ablations",
        default=None,
        help="comma-separated variants (default: all)",
    )

    p = sub.add_parser("extend", help="two-phase category-extension protocol")
    add_common(p)
    p.add_argument("--embeddings", required=True, help="word-embedding text file")
    p.add_argument(
        "--split",
        choices=("A", "B", "C"),
        default="A",
        help="which round-robin third of the categories to hold out",
    )
    p.add_argument(
        "--held-out",
        default=None,
        help="comma-separated category names (overrides --split)",
    )
    p.add_argument(
        "--seeds",
        default="42,123,999",
        help="comma-separated seeds for the repeated protocol",
    )

    p = sub.add_parser("gradcheck", help="finite-difference audit of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)

    return parser


def read_config(args: argparse.Namespace) -> RunConfig:
    if args.config is None:
        return RunConfig()
    return load_config(args.config)


def get_workdir(args: argparse.Namespace) -> Workdir:
    return Workdir(Path(args.workdir if args.workdir is not None else default_workdir()))


def cmd_ingest(args) -> int:
    read_config(args)  # ingest ignores it, but a broken file should fail fast
    summary = stage_ingest(get_workdir(args), args.corpus)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_taxonomy(args) -> int:
    summary = stage_taxonomy(get_workdir(args), args.hierarchy, read_config(args))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_spans(args) -> int:
    summary = stage_spans(get_workdir(args), read_config(args))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_episodes(args) -> int:
    summary = stage_episodes(get_workdir(args), read_config(args))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    summary = stage_train(get_workdir(args), args.embeddings, read_config(args))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    summary = stage_evaluate(get_workdir(args), args.embeddings, read_config(args))
    print(json.dumps(summary, sort_keys=True))
    return 0


def _pools_and_table(args):
    work = get_workdir(args)
    embeddings = Path(args.embeddings)
    if not embeddings.exists():
        raise MissingPrerequisite(f"embeddings file not found: {embeddings}")
    return work, load_pools(work), load_embeddings(embeddings, expected_dim=None)


def cmd_ablate(args) -> int:
    config = read_config(args)
    work, pools, table = _pools_and_table(args)
    ablations = (
        tuple(s.strip() for s in args.ablations.split(",") if s.strip())
        if args.ablations
        else None
    )
    report = (
        run_ablation(config, pools, table, ablations)
        if ablations
        else run_ablation(config, pools, table)
    )
    paths = write_report(
        report, ablation_markdown(report), work.stage_dir("evaluate"), "ablation"
    )
    print(json.dumps({"rows": report["rows"], "paths": {k: str(v) for k, v in paths.items()}}, sort_keys=True))
    return 0


def cmd_extend(args) -> int:
    config = read_config(args)
    work, pools, table = _pools_and_table(args)
    if args.held_out:
        held_out = tuple(s.strip() for s in args.held_out.split(",") if s.strip())
    else:
        held_out = extension_splits(pools.categories())[args.split]
    seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    report = run_extension(config, pools, table, held_out, seeds)
    paths = write_report(
        report, extension_markdown(report), work.stage_dir("evaluate"), "extension"
    )
    print(
        json.dumps(
            {
                "base_f1_drop": report["base_f1_drop"],
                "phase1_leaked_predictions": report["phase1_leaked_predictions"],
                "paths": {k: str(v) for k, v in paths.items()},
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    for name, err, ok in run_primitive_suite(rng, rel_tol=args.tol):
        print(f"{'ok' if ok else 'FAIL'}  {name:20s} rel_err={err:.3e}")
        failures += 0 if ok else 1
    for loss in ("contrastive", "ce"):
        err = full_loss_check(loss=loss, seed=args.seed)
        ok = err < args.tol
        print(f"{'ok' if ok else 'FAIL'}  full_loss[{loss}]{'':4s} rel_err={err:.3e}")
        failures += 0 if ok else 1
    return 0 if failures == 0 else 1


COMMANDS = {
    "ingest": cmd_ingest,
    "taxonomy": cmd_taxonomy,
    "spans": cmd_spans,
    "episodes": cmd_episodes,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "extend": cmd_extend,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
