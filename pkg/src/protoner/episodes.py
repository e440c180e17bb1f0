"""Per-category pools and pregenerated episodic tasks.

Each category's labeled spans are shuffled once and split into disjoint
support/validation/query pools (validation fraction fixed at 0.10, caps
30000/500/400).  Tasks are drawn ahead of time with independent named RNG
streams so the set of episodes is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .rng import Rng
from .spans import MarkedSpan, span_from_obj, span_to_obj
from .taxonomy import UNKNOWN_TYPE

SUPPORT_CAP = 30_000
VALIDATION_CAP = 500
QUERY_CAP = 400
VALIDATION_FRACTION = 0.10


@dataclass(frozen=True)
class CategoryPools:
    r_train: float
    support: dict[str, tuple[MarkedSpan, ...]]
    validation: dict[str, tuple[MarkedSpan, ...]]
    query: dict[str, tuple[MarkedSpan, ...]]

    def categories(self) -> tuple[str, ...]:
        return tuple(sorted(self.support))


@dataclass(frozen=True)
class EpisodeTask:
    index: int
    categories: tuple[str, ...]  # shuffled order; covers the full label set
    support: dict[str, tuple[MarkedSpan, ...]]
    validation: dict[str, tuple[MarkedSpan, ...]]
    query: dict[str, tuple[MarkedSpan, ...]]


def build_pools(
    store: Mapping[str, list[MarkedSpan]],
    r_train: float,
    rng: Rng,
    exclude_unknown: bool = False,
) -> CategoryPools:
    """Shuffle each category once, split by ratio, and truncate to the caps.

    Query gets whatever the support and validation fractions leave:
    (1 - r_train) - 0.10 of the category, before capping.
    """
    if not 0.3 <= r_train <= 0.8:
        raise ValueError(f"r_train {r_train} outside [0.3, 0.8]")
    support: dict[str, tuple[MarkedSpan, ...]] = {}
    validation: dict[str, tuple[MarkedSpan, ...]] = {}
    query: dict[str, tuple[MarkedSpan, ...]] = {}
    for category in sorted(store):
        if exclude_unknown and category == UNKNOWN_TYPE:
            continue
        rows = store[category]
        n = len(rows)
        perm = rng.stream(f"pools/{category}").permutation(n)
        shuffled = [rows[int(i)] for i in perm]
        n_support = round(n * r_train)
        n_val = round(n * VALIDATION_FRACTION)
        support[category] = tuple(shuffled[:n_support][:SUPPORT_CAP])
        validation[category] = tuple(shuffled[n_support : n_support + n_val][:VALIDATION_CAP])
        query[category] = tuple(shuffled[n_support + n_val :][:QUERY_CAP])
    return CategoryPools(r_train, support, validation, query)


def _draw(
    stream: np.random.Generator,
    pool: tuple[MarkedSpan, ...],
    k: int,
    category: str,
    pool_name: str,
) -> tuple[MarkedSpan, ...]:
    if len(pool) < k:
        raise ValueError(
            f"category {category!r}: {pool_name} pool has {len(pool)} spans, need {k}"
        )
    idx = stream.choice(len(pool), size=k, replace=False)
    return tuple(pool[int(i)] for i in idx)


def sample_episodes(
    pools: CategoryPools,
    n_ways: int,
    k_shots: int,
    count: int = 200,
    rng: Rng = Rng(42),
    val_shots: int | None = None,
    query_shots: int | None = None,
    stream_prefix: str = "episodes",
) -> list[EpisodeTask]:
    """Pregenerate ``count`` tasks with per-task RNG streams.

    The run's label set is used in full each episode, so n_ways must equal
    the category count and category sampling reduces to order shuffling.
    Draws are without replacement within one task.  ``stream_prefix`` keeps
    a second sampling round (e.g. after hard-negative resampling)
    independent of the first.
    """
    categories = pools.categories()
    if n_ways != len(categories):
        raise ValueError(f"n_ways {n_ways} != category count {len(categories)}")
    val_shots = k_shots if val_shots is None else val_shots
    query_shots = k_shots if query_shots is None else query_shots

    tasks: list[EpisodeTask] = []
    for t in range(count):
        stream = rng.stream(f"{stream_prefix}/task{t:03d}")
        order = tuple(categories[int(i)] for i in stream.permutation(len(categories)))
        support: dict[str, tuple[MarkedSpan, ...]] = {}
        validation: dict[str, tuple[MarkedSpan, ...]] = {}
        query: dict[str, tuple[MarkedSpan, ...]] = {}
        for category in order:
            support[category] = _draw(stream, pools.support[category], k_shots, category, "support")
            validation[category] = _draw(
                stream, pools.validation[category], val_shots, category, "validation"
            )
            query[category] = _draw(stream, pools.query[category], query_shots, category, "query")
        tasks.append(EpisodeTask(t, order, support, validation, query))
    return tasks


# ---------------------------------------------------------------------------
# Persistence: one file per task, byte-stable given the same inputs


def _task_to_obj(task: EpisodeTask) -> dict:
    return {
        "index": task.index,
        "categories": list(task.categories),
        "support": {c: [span_to_obj(s) for s in v] for c, v in task.support.items()},
        "validation": {c: [span_to_obj(s) for s in v] for c, v in task.validation.items()},
        "query": {c: [span_to_obj(s) for s in v] for c, v in task.query.items()},
    }


def _task_from_obj(obj: dict) -> EpisodeTask:
    return EpisodeTask(
        index=obj["index"],
        categories=tuple(obj["categories"]),
        support={c: tuple(span_from_obj(o) for o in v) for c, v in obj["support"].items()},
        validation={c: tuple(span_from_obj(o) for o in v) for c, v in obj["validation"].items()},
        query={c: tuple(span_from_obj(o) for o in v) for c, v in obj["query"].items()},
    )


def write_episodes(tasks: list[EpisodeTask], root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for task in tasks:
        path = root / f"task_{task.index:03d}.json"
        path.write_text(json.dumps(_task_to_obj(task), sort_keys=True, ensure_ascii=False) + "\n")


def read_episodes(root: str | Path) -> list[EpisodeTask]:
    root = Path(root)
    tasks = [
        _task_from_obj(json.loads(p.read_text(encoding="utf-8")))
        for p in sorted(root.glob("task_*.json"))
    ]
    return tasks
