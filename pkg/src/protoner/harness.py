"""Experiment harness: ablation table, category extension, scalability sweep.

All three entry points work on frozen category pools plus an embedding
table, run full training in memory, and emit deterministic JSON/Markdown
reports.  They are what the ``ablate`` and ``extend`` CLI subcommands and
the experiment scripts call.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .config import ABLATIONS, RunConfig
from .embeddings import EmbeddingTable
from .episodes import CategoryPools
from .evaluate import evaluate_model, per_category_f1, predict_spans
from .pipeline import build_model
from .rng import Rng
from .train import run_training

log = logging.getLogger(__name__)


def _train_and_report(config: RunConfig, pools: CategoryPools, table: EmbeddingTable):
    resolved = config.resolved()
    model = build_model(resolved, pools.categories(), table)
    k_shots = min(resolved.k_shots, min(len(v) for v in pools.support.values()))
    result = run_training(
        model,
        pools,
        resolved.meta,
        Rng(resolved.seed),
        k_shots=k_shots,
        episode_count=resolved.episode_count,
        val_shots=resolved.val_shots,
        query_shots=resolved.query_shots,
    )
    examples = [
        (span, category)
        for category in pools.categories()
        for span in pools.query[category]
    ]
    report = evaluate_model(model, examples)
    return model, result, report


# ---------------------------------------------------------------------------
# ablations


def run_ablation(
    config: RunConfig,
    pools: CategoryPools,
    table: EmbeddingTable,
    ablations: tuple[str, ...] = ABLATIONS,
) -> dict:
    """Train once per ablation switch and tabulate query macro-F1."""
    rows = {}
    for name in ablations:
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}")
        variant = dataclasses.replace(config, ablation=name)
        log.info("ablation %s: training", name)
        _, result, report = _train_and_report(variant, pools, table)
        rows[name] = {
            "macro_f1": report.macro_f1,
            "best_val_f1": result.best_f1,
            "epochs_run": result.epochs_run,
        }
    baseline = rows.get("none", {}).get("macro_f1")
    for name, row in rows.items():
        row["delta_vs_none"] = (
            None if baseline is None or name == "none" else row["macro_f1"] - baseline
        )
    return {"seed": config.seed, "rows": rows}


def ablation_markdown(report: dict) -> str:
    lines = [
        "# Ablation comparison",
        "",
        f"Seed: {report['seed']}",
        "",
        "| variant | macro-F1 | delta vs none | best val F1 | epochs |",
        "| --- | --- | --- | --- | --- |",
    ]
    for name, row in report["rows"].items():
        delta = row["delta_vs_none"]
        delta_text = "" if delta is None else f"{delta:+.4f}"
        lines.append(
            f"| {name} | {row['macro_f1']:.4f} | {delta_text} |"
            f" {row['best_val_f1']:.4f} | {row['epochs_run']} |"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# category extension


def extension_splits(categories: tuple[str, ...]) -> dict[str, tuple[str, ...]]:
    """Three round-robin held-out splits over the sorted category list."""
    ordered = tuple(sorted(categories))
    return {
        "A": ordered[0::3],
        "B": ordered[1::3],
        "C": ordered[2::3],
    }


def filter_pools(pools: CategoryPools, keep: tuple[str, ...]) -> CategoryPools:
    keep_set = set(keep)
    missing = keep_set - set(pools.categories())
    if missing:
        raise ValueError(f"categories not in pools: {sorted(missing)}")
    return CategoryPools(
        r_train=pools.r_train,
        support={c: pools.support[c] for c in keep},
        validation={c: pools.validation[c] for c in keep},
        query={c: pools.query[c] for c in keep},
    )


def _macro_over(report_per_category: dict, subset: tuple[str, ...]) -> float:
    return sum(report_per_category[c]["f1"] for c in subset) / len(subset)


def mean_ci95(values: list[float]) -> tuple[float, float]:
    """Sample mean and half-width of the Student-t 95% interval."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, math.nan
    half = float(
        stats.t.ppf(0.975, len(arr) - 1) * arr.std(ddof=1) / math.sqrt(len(arr))
    )
    return mean, half


@dataclass
class ExtensionOutcome:
    seed: int
    phase1_base_f1: float
    phase2_base_f1: float
    phase2_full_f1: float
    phase1_predictions_leaked: int


def run_extension_seed(
    config: RunConfig,
    pools: CategoryPools,
    table: EmbeddingTable,
    held_out: tuple[str, ...],
    seed: int,
) -> ExtensionOutcome:
    """One seed of the two-phase protocol.

    Phase 1 trains on the base categories only; phase 2 grows the prototype
    bank by the held-out categories (existing rows preserved bit for bit)
    and continues training on the full label set with the same budget.
    """
    all_categories = pools.categories()
    base = tuple(c for c in all_categories if c not in set(held_out))
    if not base or not held_out:
        raise ValueError("both base and held-out category sets must be non-empty")
    cfg = dataclasses.replace(config, seed=seed).resolved()

    base_pools = filter_pools(pools, base)
    model = build_model(cfg, base, table)
    k1 = min(cfg.k_shots, min(len(v) for v in base_pools.support.values()))
    run_training(
        model, base_pools, cfg.meta, Rng(seed), k_shots=k1,
        episode_count=cfg.episode_count,
        val_shots=cfg.val_shots, query_shots=cfg.query_shots,
    )
    base_examples = [(s, c) for c in base for s in base_pools.query[c]]
    phase1_predictions, _ = predict_spans(model, [s for s, _ in base_examples])
    leaked = sum(1 for p in phase1_predictions if p in set(held_out))
    phase1_scores = per_category_f1(
        phase1_predictions, [g for _, g in base_examples], base
    )
    phase1_base = _macro_over(phase1_scores, base)

    model.bank = model.bank.append_categories(tuple(held_out), Rng(seed))
    full_pools = filter_pools(pools, model.bank.categories)
    k2 = min(cfg.k_shots, min(len(v) for v in full_pools.support.values()))
    run_training(
        model, full_pools, cfg.meta, Rng(seed + 1), k_shots=k2,
        episode_count=cfg.episode_count,
        val_shots=cfg.val_shots, query_shots=cfg.query_shots,
    )
    full_examples = [
        (s, c) for c in model.bank.categories for s in full_pools.query[c]
    ]
    report = evaluate_model(model, full_examples)
    return ExtensionOutcome(
        seed=seed,
        phase1_base_f1=phase1_base,
        phase2_base_f1=_macro_over(report.per_category, base),
        phase2_full_f1=report.macro_f1,
        phase1_predictions_leaked=leaked,
    )


def run_extension(
    config: RunConfig,
    pools: CategoryPools,
    table: EmbeddingTable,
    held_out: tuple[str, ...],
    seeds: tuple[int, ...] = (42, 123, 999),
) -> dict:
    outcomes = [
        run_extension_seed(config, pools, table, held_out, seed) for seed in seeds
    ]
    phase1 = [o.phase1_base_f1 for o in outcomes]
    phase2 = [o.phase2_base_f1 for o in outcomes]
    full = [o.phase2_full_f1 for o in outcomes]
    drops = [a - b for a, b in zip(phase1, phase2)]
    mean_drop, ci_drop = mean_ci95(drops)
    if len(seeds) >= 2 and np.ptp(drops) > 0:
        p_value = float(stats.ttest_rel(phase1, phase2).pvalue)
    else:
        p_value = math.nan
    mean1, ci1 = mean_ci95(phase1)
    mean2, ci2 = mean_ci95(phase2)
    mean_full, ci_full = mean_ci95(full)
    return {
        "held_out": list(held_out),
        "seeds": list(seeds),
        "outcomes": [dataclasses.asdict(o) for o in outcomes],
        "phase1_base_f1": {"mean": mean1, "ci95": ci1},
        "phase2_base_f1": {"mean": mean2, "ci95": ci2},
        "phase2_full_f1": {"mean": mean_full, "ci95": ci_full},
        "base_f1_drop": {"mean": mean_drop, "ci95": ci_drop, "p_value": p_value},
        "phase1_leaked_predictions": sum(o.phase1_predictions_leaked for o in outcomes),
    }


def extension_markdown(report: dict) -> str:
    lines = [
        "# Category extension",
        "",
        f"Held out: {', '.join(report['held_out'])}",
        f"Seeds: {', '.join(str(s) for s in report['seeds'])}",
        "",
        "| seed | phase-1 base F1 | phase-2 base F1 | phase-2 full F1 | leaked |",
        "| --- | --- | --- | --- | --- |",
    ]
    for o in report["outcomes"]:
        lines.append(
            f"| {o['seed']} | {o['phase1_base_f1']:.4f} | {o['phase2_base_f1']:.4f} |"
            f" {o['phase2_full_f1']:.4f} | {o['phase1_predictions_leaked']} |"
        )
    drop = report["base_f1_drop"]
    lines += [
        "",
        f"Base-F1 drop: {drop['mean']:.4f} (95% CI half-width {drop['ci95']:.4f},"
        f" paired-t p={drop['p_value']:.4f})",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# scalability


def run_scalability(
    config: RunConfig,
    datasets: dict[int, tuple[CategoryPools, EmbeddingTable]],
) -> dict:
    """Train at each category count and report the F1 change.

    ``datasets`` maps category count to prepared (pools, table) pairs; the
    smallest count is the reference point.
    """
    if len(datasets) < 2:
        raise ValueError("need at least two category counts to compare")
    rows = {}
    for count in sorted(datasets):
        pools, table = datasets[count]
        log.info("scalability: %d categories", count)
        _, result, report = _train_and_report(config, pools, table)
        rows[count] = {"macro_f1": report.macro_f1, "best_val_f1": result.best_f1}
    counts = sorted(rows)
    reference = rows[counts[0]]["macro_f1"]
    final = rows[counts[-1]]["macro_f1"]
    delta_f1 = final - reference
    relative_drop = (reference - final) / reference if reference > 0 else math.nan
    return {
        "seed": config.seed,
        "counts": counts,
        "rows": {str(c): rows[c] for c in counts},
        "delta_f1": delta_f1,
        "relative_drop": relative_drop,
    }


def scalability_markdown(report: dict) -> str:
    lines = [
        "# Scalability sweep",
        "",
        f"Seed: {report['seed']}",
        "",
        "| categories | macro-F1 | best val F1 |",
        "| --- | --- | --- |",
    ]
    for count in report["counts"]:
        row = report["rows"][str(count)]
        lines.append(f"| {count} | {row['macro_f1']:.4f} | {row['best_val_f1']:.4f} |")
    lines += [
        "",
        f"delta_f1: {report['delta_f1']:+.4f}",
        f"relative_drop: {report['relative_drop']:.4f}",
    ]
    return "\n".join(lines) + "\n"


def write_report(report: dict, markdown: str, directory: str | Path, stem: str) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": directory / f"{stem}.json",
        "markdown": directory / f"{stem}.md",
    }
    paths["json"].write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    paths["markdown"].write_text(markdown, encoding="utf-8")
    return paths
