"""Semantic-type hierarchy pruning and multi-label resolution.

A type hierarchy is flattened into a small category set in four stages:
depth capping, frequency recount, recursive low-frequency promotion, and
top-level discard into UnknownType.  Entities carrying several type ids are
resolved to one id by weighted PageRank over a type co-occurrence graph.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .corpus import SentenceRecord

UNKNOWN_TYPE = "UnknownType"


@dataclass(frozen=True)
class TypeNode:
    type_id: str
    name: str
    parent: str | None  # None iff root
    depth: int
    frequency: int = 0


@dataclass(frozen=True)
class TypeHierarchy:
    """Validated forest of type nodes keyed by type id."""

    nodes: dict[str, TypeNode]

    def __post_init__(self) -> None:
        for tid, node in self.nodes.items():
            if node.type_id != tid:
                raise ValueError(f"node keyed {tid} carries id {node.type_id}")
            if node.name == UNKNOWN_TYPE:
                raise ValueError(f"{UNKNOWN_TYPE!r} is reserved and cannot name node {tid}")
            if node.parent is None:
                if node.depth != 0:
                    raise ValueError(f"root {tid} must have depth 0, has {node.depth}")
            else:
                parent = self.nodes.get(node.parent)
                if parent is None:
                    raise ValueError(f"node {tid} has unknown parent {node.parent}")
                if node.depth != parent.depth + 1:
                    raise ValueError(
                        f"node {tid} depth {node.depth} != parent depth {parent.depth} + 1"
                    )

    def parent_of(self, tid: str) -> str | None:
        return self.nodes[tid].parent

    def depth_of(self, tid: str) -> int:
        return self.nodes[tid].depth

    def ancestor_at_depth(self, tid: str, depth: int) -> str:
        """Walk parent links until the node at ``depth``; ``tid`` itself if shallow enough."""
        node = self.nodes[tid]
        if node.depth < depth:
            raise ValueError(f"{tid} is at depth {node.depth}, above requested depth {depth}")
        while node.depth > depth:
            assert node.parent is not None  # depth > 0 implies a parent by validation
            node = self.nodes[node.parent]
        return node.type_id

    def with_frequencies(self, counts: Mapping[str, int]) -> "TypeHierarchy":
        unknown = sorted(set(counts) - set(self.nodes))
        if unknown:
            raise KeyError(f"type ids not in hierarchy: {', '.join(unknown)}")
        return TypeHierarchy(
            {
                tid: TypeNode(tid, n.name, n.parent, n.depth, int(counts.get(tid, 0)))
                for tid, n in self.nodes.items()
            }
        )


def load_hierarchy(path: str | Path) -> TypeHierarchy:
    """Read a tab-separated hierarchy file: type-id, parent-id or "-", depth, name."""
    path = Path(path)
    nodes: dict[str, TypeNode] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            tid, parent, depth_str, name = fields
            try:
                depth = int(depth_str)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer depth {depth_str!r}") from None
            if tid in nodes:
                raise ValueError(f"{path}:{lineno}: duplicate type id {tid}")
            nodes[tid] = TypeNode(tid, name, None if parent == "-" else parent, depth)
    return TypeHierarchy(nodes)


def raw_type_frequencies(records: Iterable[SentenceRecord]) -> Counter:
    """Count annotations per type id; a multi-label annotation counts toward each id."""
    counts: Counter = Counter()
    for rec in records:
        for ann in rec.annotations:
            counts.update(ann.type_ids)
    return counts


# ---------------------------------------------------------------------------
# Merge plan


@dataclass(frozen=True)
class MergePlan:
    """Total mapping from type ids to final category names.

    ``categories`` is ordered by descending frequency, then name; every entry
    meets the frequency threshold.  Ids whose category was discarded at top
    level map to UnknownType.
    """

    mapping: dict[str, str]
    categories: tuple[tuple[str, int], ...]
    depth_limit: int
    min_freq: int
    unknown_frequency: int = 0

    def category_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.categories)


def build_merge_plan(h: TypeHierarchy, depth_limit: int, min_freq: int) -> MergePlan:
    """Flatten a frequency-annotated hierarchy into final categories.

    Stages: (1) cap every node at ``depth_limit`` by promoting to its
    ancestor there; (2) recount mass per surviving target; (3) repeatedly
    promote the deepest under-threshold non-root target to its parent
    (ties on depth broken by type id); (4) discard under-threshold roots,
    relabeling their mass UnknownType.
    """
    if depth_limit < 1:
        raise ValueError("depth_limit must be >= 1")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")

    # stage 1: depth cap
    target: dict[str, str] = {
        tid: h.ancestor_at_depth(tid, min(node.depth, depth_limit)) for tid, node in h.nodes.items()
    }

    # stage 2: recount onto targets
    mass: dict[str, int] = {}
    for tid, tgt in target.items():
        mass[tgt] = mass.get(tgt, 0) + h.nodes[tid].frequency

    # stage 3: low-frequency promotion, deepest first, one step at a time
    redirect: dict[str, str] = {}
    while True:
        under = [
            c for c, f in mass.items() if f < min_freq and h.nodes[c].parent is not None
        ]
        if not under:
            break
        c = min(under, key=lambda t: (-h.nodes[t].depth, t))
        parent = h.nodes[c].parent
        assert parent is not None
        mass[parent] = mass.get(parent, 0) + mass.pop(c)
        redirect[c] = parent

    def resolve(tid: str) -> str:
        t = target[tid]
        while t in redirect:
            t = redirect[t]
        return t

    # stage 4: top-level discard
    discarded = {c for c, f in mass.items() if f < min_freq}
    unknown_frequency = sum(mass[c] for c in discarded)

    names: dict[str, str] = {}
    taken: set[str] = set()
    for c in mass:
        if c in discarded:
            continue
        name = h.nodes[c].name
        if name in taken:
            raise ValueError(f"final categories collide on name {name!r}")
        taken.add(name)
        names[c] = name

    mapping = {
        tid: (UNKNOWN_TYPE if resolve(tid) in discarded else names[resolve(tid)])
        for tid in h.nodes
    }
    categories = tuple(
        sorted(((names[c], mass[c]) for c in names), key=lambda nf: (-nf[1], nf[0]))
    )
    return MergePlan(mapping, categories, depth_limit, min_freq, unknown_frequency)


def save_plan(plan: MergePlan, path: str | Path) -> None:
    obj = {
        "mapping": plan.mapping,
        "categories": [[n, f] for n, f in plan.categories],
        "depth_limit": plan.depth_limit,
        "min_freq": plan.min_freq,
        "unknown_frequency": plan.unknown_frequency,
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_plan(path: str | Path) -> MergePlan:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return MergePlan(
        mapping=dict(obj["mapping"]),
        categories=tuple((n, int(f)) for n, f in obj["categories"]),
        depth_limit=int(obj["depth_limit"]),
        min_freq=int(obj["min_freq"]),
        unknown_frequency=int(obj["unknown_frequency"]),
    )


# ---------------------------------------------------------------------------
# Co-occurrence graph and PageRank


@dataclass(frozen=True)
class CooccurrenceGraph:
    """Undirected weighted graph over type ids; ``weights`` is symmetric, zero-diagonal."""

    vertices: tuple[str, ...]
    weights: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        n = len(self.vertices)
        if self.weights.shape != (n, n):
            raise ValueError(f"weights shape {self.weights.shape} != ({n}, {n})")
        if n and (self.weights < 0).any():
            raise ValueError("negative edge weight")
        if n and np.diagonal(self.weights).any():
            raise ValueError("nonzero diagonal")
        if n and not np.array_equal(self.weights, self.weights.T):
            raise ValueError("weights not symmetric")


def build_cooccurrence_graph(records: Iterable[SentenceRecord], min_freq: int) -> CooccurrenceGraph:
    """Collect unique multi-type combinations and count pairwise co-occurrence.

    Types under ``min_freq`` raw corpus frequency are filtered from each
    annotation's label set first; a combination seen on many annotations
    still contributes exactly one increment per pair.
    """
    records = list(records)
    freqs = raw_type_frequencies(records)
    combos: set[frozenset[str]] = set()
    for rec in records:
        for ann in rec.annotations:
            y = frozenset(t for t in ann.type_ids if freqs[t] >= min_freq)
            if len(y) > 1:
                combos.add(y)
    vertices = tuple(sorted(set().union(*combos))) if combos else ()
    index = {v: i for i, v in enumerate(vertices)}
    weights = np.zeros((len(vertices), len(vertices)))
    for combo in combos:
        ids = sorted(combo)
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                weights[index[a], index[b]] += 1.0
                weights[index[b], index[a]] += 1.0
    return CooccurrenceGraph(vertices, weights)


def pagerank(
    g: CooccurrenceGraph, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 200
) -> dict[str, float]:
    """Weighted PageRank; each undirected edge acts as two directed edges.

    Mass leaving a vertex is proportional to edge weight.  Vertices without
    edges keep only the teleport term (no dangling redistribution); scores
    are renormalized to sum to 1 at the end.
    """
    n = len(g.vertices)
    if n == 0:
        raise ValueError("pagerank needs a non-empty vertex set")
    degree = g.weights.sum(axis=1)
    transition = np.divide(
        g.weights, degree[:, None], out=np.zeros_like(g.weights, dtype=float), where=degree[:, None] > 0
    )
    x = np.full(n, 1.0 / n)
    base = (1.0 - damping) / n
    for _ in range(max_iter):
        x_next = base + damping * (transition.T @ x)
        delta = np.abs(x_next - x).sum()
        x = x_next
        if delta < tol:
            break
    x = x / x.sum()
    return dict(zip(g.vertices, x.tolist()))


def disambiguate(type_ids: Iterable[str], scores: Mapping[str, float]) -> str:
    """Pick the candidate with the highest score; ties go to the smaller type id."""
    candidates = sorted(set(type_ids))
    if not candidates:
        raise ValueError("cannot disambiguate an empty candidate set")
    return min(candidates, key=lambda t: (-scores.get(t, 0.0), t))


def resolve_annotations(
    records: Iterable[SentenceRecord], scores: Mapping[str, float]
) -> tuple[list[list[str]], Counter]:
    """Resolve every annotation to one type id; also return per-id counts.

    Output aligns with the input: one list of resolved ids per record, in
    annotation order.  The counts feed merge-plan frequencies, so each
    annotation contributes exactly once.
    """
    resolved: list[list[str]] = []
    counts: Counter = Counter()
    for rec in records:
        picks = [disambiguate(ann.type_ids, scores) for ann in rec.annotations]
        resolved.append(picks)
        counts.update(picks)
    return resolved, counts
