"""Synthetic corpora with Gaussian-cluster token embeddings.

Each category owns a vocabulary whose embedding vectors sit in tight
sub-clusters around per-mode unit centers, so categories are linearly
separable by construction.  The generator emits real artifacts — an
annotated corpus, a two-level hierarchy table, and an embedding file —
so the full pipeline (parse, normalize, tokenize, plan, span, episode,
train) runs unmodified.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Document, EntityAnnotation
from .embeddings import EmbeddingTable, write_embeddings
from .rng import Rng

_STARTERS = ("The", "A", "This", "Each", "One")
_CONNECTORS = ("interacts with", "binds", "inhibits", "resembles", "precedes", "follows")
_TRAILERS = (
    "in the assay",
    "under mild heating",
    "during the second phase",
    "(see notes)",
    "within minutes",
    "at low dose",
)
_FILLERS = tuple(
    sorted(
        {
            "the", "a", "this", "each", "one", "interacts", "with", "binds",
            "inhibits", "resembles", "precedes", "follows", "in", "assay",
            "under", "mild", "heating", "during", "second", "phase", "see",
            "notes", "within", "minutes", "at", "low", "dose", "synthetic",
            "record",
        }
    )
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for one generated dataset; every field is deterministic given seed."""

    n_categories: int = 5
    vocab_per_mode: int = 8
    modes_per_category: int = 2
    docs: int = 60
    sentences_per_doc: int = 4
    mentions_per_sentence: int = 2
    dim: int = 24
    cluster_scale: float = 0.06
    category_weights: tuple[float, ...] | None = None  # relative mention frequency
    two_token_fraction: float = 0.25
    seed: int = 42

    def __post_init__(self) -> None:
        if self.n_categories < 1:
            raise ValueError("need at least one category")
        if self.category_weights is not None and len(self.category_weights) != self.n_categories:
            raise ValueError("category_weights length must match n_categories")

    def category_names(self) -> tuple[str, ...]:
        return tuple(f"cat{c:02d}" for c in range(self.n_categories))

    def type_ids(self) -> tuple[str, ...]:
        return tuple(f"s{c:02d}" for c in range(self.n_categories))


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    documents: list[Document]
    hierarchy_text: str
    table: EmbeddingTable
    vocabulary: dict[str, list[str]] = field(default_factory=dict)  # category -> tokens


def _category_vocabulary(spec: SyntheticSpec) -> dict[str, list[str]]:
    vocab: dict[str, list[str]] = {}
    for c, name in enumerate(spec.category_names()):
        vocab[name] = [
            f"c{c:02d}m{j}w{i:02d}"
            for j in range(spec.modes_per_category)
            for i in range(spec.vocab_per_mode)
        ]
    return vocab


def make_embeddings(spec: SyntheticSpec) -> EmbeddingTable:
    """Cluster centers on the unit sphere, one per (category, mode)."""
    rng = Rng(spec.seed)
    centers = rng.stream("synthetic/centers").standard_normal(
        (spec.n_categories, spec.modes_per_category, spec.dim)
    )
    centers /= np.linalg.norm(centers, axis=-1, keepdims=True)
    vectors: dict[str, np.ndarray] = {}
    noise = rng.stream("synthetic/noise")
    for c in range(spec.n_categories):
        for j in range(spec.modes_per_category):
            for i in range(spec.vocab_per_mode):
                token = f"c{c:02d}m{j}w{i:02d}"
                vectors[token] = centers[c, j] + spec.cluster_scale * noise.standard_normal(
                    spec.dim
                )
    filler_stream = rng.stream("synthetic/filler")
    for token in _FILLERS:
        vectors[token] = 0.3 * filler_stream.standard_normal(spec.dim)
    return EmbeddingTable(dim=spec.dim, vectors=vectors)


def make_hierarchy_text(spec: SyntheticSpec) -> str:
    lines = ["# synthetic two-level hierarchy", "root\t-\t0\tentity"]
    for type_id, name in zip(spec.type_ids(), spec.category_names()):
        lines.append(f"{type_id}\troot\t1\t{name}")
    return "\n".join(lines) + "\n"


class _TextBuilder:
    """Accumulates space-joined words and records mention character ranges."""

    def __init__(self) -> None:
        self.parts: list[str] = []
        self.length = 0

    def add(self, phrase: str) -> int:
        start = self.length + (1 if self.parts else 0)
        self.parts.append(phrase)
        self.length = start + len(phrase)
        return start

    def text(self) -> str:
        return " ".join(self.parts)


def _pick_category(stream: np.random.Generator, spec: SyntheticSpec) -> int:
    if spec.category_weights is None:
        return int(stream.integers(spec.n_categories))
    weights = np.asarray(spec.category_weights, dtype=np.float64)
    return int(stream.choice(spec.n_categories, p=weights / weights.sum()))


def make_documents(spec: SyntheticSpec) -> list[Document]:
    rng = Rng(spec.seed)
    vocab = _category_vocabulary(spec)
    names = spec.category_names()
    type_ids = spec.type_ids()
    documents = []
    for d in range(spec.docs):
        stream = rng.stream(f"synthetic/doc{d:04d}")
        title = f"synthetic record {d:04d}."
        builder = _TextBuilder()
        builder.add(title)
        annotations = []
        for _ in range(spec.sentences_per_doc):
            builder.add(str(stream.choice(_STARTERS)))
            for slot in range(spec.mentions_per_sentence):
                if slot:
                    builder.add(str(stream.choice(_CONNECTORS)))
                c = _pick_category(stream, spec)
                tokens = vocab[names[c]]
                n_tokens = 2 if stream.uniform() < spec.two_token_fraction else 1
                mention = " ".join(
                    tokens[int(stream.integers(len(tokens)))] for _ in range(n_tokens)
                )
                start = builder.add(mention)
                annotations.append(
                    EntityAnnotation(
                        start=start,
                        end=start + len(mention),
                        mention=mention,
                        type_ids=(type_ids[c],),
                    )
                )
            builder.add(str(stream.choice(_TRAILERS)) + ".")
        documents.append(
            Document(doc_id=f"doc{d:04d}", text=builder.text(), annotations=tuple(annotations))
        )
    return documents


def make_dataset(spec: SyntheticSpec) -> SyntheticDataset:
    return SyntheticDataset(
        spec=spec,
        documents=make_documents(spec),
        hierarchy_text=make_hierarchy_text(spec),
        table=make_embeddings(spec),
        vocabulary=_category_vocabulary(spec),
    )


def write_dataset(spec: SyntheticSpec, directory: str | Path) -> dict[str, Path]:
    """Emit corpus/hierarchy/embeddings files for the file-based pipeline."""
    from .corpus import write_pubtator

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = make_dataset(spec)
    paths = {
        "corpus": directory / "corpus.pubtator",
        "hierarchy": directory / "hierarchy.tsv",
        "embeddings": directory / "embeddings.vec",
    }
    write_pubtator(data.documents, paths["corpus"])
    paths["hierarchy"].write_text(data.hierarchy_text, encoding="utf-8")
    write_embeddings(data.table, paths["embeddings"])
    return paths


# ---------------------------------------------------------------------------
# in-memory preprocessing shortcut


def make_hierarchy(spec: SyntheticSpec) -> "TypeHierarchy":
    from .taxonomy import TypeHierarchy, TypeNode

    nodes = {"root": TypeNode("root", "entity", None, 0)}
    for tid, name in zip(spec.type_ids(), spec.category_names()):
        nodes[tid] = TypeNode(tid, name, "root", 1)
    return TypeHierarchy(nodes)


def make_store(spec: SyntheticSpec, documents: list[Document] | None = None):
    """Documents all the way to a labeled span store, no files involved."""
    from .corpus import document_sentences, normalize_document
    from .spans import generate_spans, label_spans
    from .taxonomy import build_merge_plan, disambiguate, raw_type_frequencies

    records = []
    for doc in documents if documents is not None else make_documents(spec):
        normalized, _ = normalize_document(doc)
        recs, _ = document_sentences(normalized)
        records.extend(recs)
    hierarchy = make_hierarchy(spec).with_frequencies(raw_type_frequencies(records))
    plan = build_merge_plan(hierarchy, depth_limit=1, min_freq=1)
    store: dict[str, list] = {}
    for rec in records:
        labeled, _ = label_spans(
            generate_spans(rec), rec, plan, lambda ids: disambiguate(ids, {})
        )
        for span in labeled:
            store.setdefault(span.label, []).append(span)
    return store


def make_pools(
    spec: SyntheticSpec,
    support_ratio: float = 0.7,
    seed: int | None = None,
    exclude_unknown: bool = True,
    table: EmbeddingTable | None = None,
):
    """(pools, table) for a spec; the split seed defaults to the spec seed."""
    from .episodes import build_pools

    pools = build_pools(
        make_store(spec),
        support_ratio,
        Rng(spec.seed if seed is None else seed),
        exclude_unknown=exclude_unknown,
    )
    return pools, (table if table is not None else make_embeddings(spec))


# ---------------------------------------------------------------------------
# stock fixtures used by the experiment harness


def separable_spec(seed: int = 42) -> SyntheticSpec:
    """Five well-separated categories; the learning-check fixture."""
    return SyntheticSpec(n_categories=5, docs=60, seed=seed)


def imbalanced_spec(seed: int = 42) -> SyntheticSpec:
    """One category twenty times as frequent as each of the others."""
    return SyntheticSpec(
        n_categories=5,
        docs=120,
        category_weights=(20.0, 1.0, 1.0, 1.0, 1.0),
        cluster_scale=0.35,
        seed=seed,
    )


def scalability_spec(n_categories: int, seed: int = 42) -> SyntheticSpec:
    """Fixed per-category exposure while the category count grows."""
    return SyntheticSpec(
        n_categories=n_categories,
        docs=24 * n_categories,
        sentences_per_doc=3,
        seed=seed,
    )


def extension_spec(seed: int = 42) -> SyntheticSpec:
    """Nine categories, enough for three held-out splits of three."""
    return SyntheticSpec(n_categories=9, docs=150, sentences_per_doc=3, seed=seed)
