"""Staged pipeline over a working directory.

Each stage reads the previous stage's artifacts, writes its own under a
dedicated subdirectory, and records a stamp with content hashes of its
inputs.  Re-running a stage with unchanged inputs is a no-op, so a broken
run resumes where it stopped; changing any input re-runs the stage.

Layout under the workdir root:

    corpus/      sentence records (ingest)
    taxonomy/    merge plan and disambiguation scores (taxonomy)
    spans/       labeled span store (spans)
    episodes/    frozen category pools (episodes)
    checkpoints/ trained model and history (train)
    reports/     evaluation artifacts (evaluate)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import (
    EntityAnnotation,
    SentenceRecord,
    Token,
    document_sentences,
    normalize_document,
    parse_pubtator,
)
from .embeddings import EmbeddingTable, load_embeddings
from .episodes import CategoryPools, build_pools
from .evaluate import EvalReport, dump_projections, evaluate_model
from .model import ProtoModel
from .rng import Rng
from .spans import (
    generate_spans,
    label_spans,
    read_span_store,
    span_from_obj,
    span_to_obj,
    write_span_store,
)
from .taxonomy import (
    build_cooccurrence_graph,
    build_merge_plan,
    disambiguate,
    load_hierarchy,
    load_plan,
    pagerank,
    raw_type_frequencies,
    save_plan,
)
from .train import get_state, run_training, set_state

log = logging.getLogger(__name__)

STAGE_DIRS = {
    "ingest": "corpus",
    "taxonomy": "taxonomy",
    "spans": "spans",
    "episodes": "episodes",
    "train": "checkpoints",
    "evaluate": "reports",
}


class MissingPrerequisite(RuntimeError):
    """A stage was asked to run before the stage it depends on."""


@dataclass
class Workdir:
    root: Path

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    def stage_dir(self, stage: str) -> Path:
        return self.root / STAGE_DIRS[stage]

    def path(self, stage: str, name: str) -> Path:
        return self.stage_dir(stage) / name


# ---------------------------------------------------------------------------
# stamps


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_file(path: Path) -> str:
    return _hash_bytes(Path(path).read_bytes())


def hash_obj(obj) -> str:
    return _hash_bytes(json.dumps(obj, sort_keys=True).encode("utf-8"))


def write_stamp(stage_dir: Path, inputs: dict[str, str]) -> None:
    (stage_dir / "stage.json").write_text(
        json.dumps({"inputs": inputs}, sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )


def stamp_matches(stage_dir: Path, inputs: dict[str, str]) -> bool:
    stamp = stage_dir / "stage.json"
    if not stamp.exists():
        return False
    try:
        recorded = json.loads(stamp.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    return recorded.get("inputs") == inputs


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(
            f"missing {path.name}; run the {producer!r} stage first"
        )
    return path


# ---------------------------------------------------------------------------
# sentence record persistence


def record_to_obj(rec: SentenceRecord) -> dict:
    return {
        "sentence_id": rec.sentence_id,
        "text": rec.text,
        "tokens": [[t.surface, t.start, t.end] for t in rec.tokens],
        "annotations": [
            [a.start, a.end, a.mention, list(a.type_ids)] for a in rec.annotations
        ],
    }


def record_from_obj(obj: dict) -> SentenceRecord:
    return SentenceRecord(
        sentence_id=obj["sentence_id"],
        text=obj["text"],
        tokens=tuple(Token(s, int(a), int(b)) for s, a, b in obj["tokens"]),
        annotations=tuple(
            EntityAnnotation(int(a), int(b), m, tuple(ids))
            for a, b, m, ids in obj["annotations"]
        ),
    )


def write_records(records: list[SentenceRecord], path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_obj(rec), sort_keys=True, ensure_ascii=False) + "\n")


def read_records(path: Path) -> list[SentenceRecord]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_obj(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# pool persistence


def pools_to_obj(pools: CategoryPools) -> dict:
    def split(d):
        return {c: [span_to_obj(s) for s in v] for c, v in sorted(d.items())}

    return {
        "r_train": pools.r_train,
        "support": split(pools.support),
        "validation": split(pools.validation),
        "query": split(pools.query),
    }


def pools_from_obj(obj: dict) -> CategoryPools:
    def split(d):
        return {c: tuple(span_from_obj(s) for s in v) for c, v in d.items()}

    return CategoryPools(
        r_train=float(obj["r_train"]),
        support=split(obj["support"]),
        validation=split(obj["validation"]),
        query=split(obj["query"]),
    )


# ---------------------------------------------------------------------------
# stages


def stage_ingest(work: Workdir, corpus_path: str | Path) -> dict:
    corpus_path = Path(corpus_path)
    if not corpus_path.exists():
        raise MissingPrerequisite(f"corpus file not found: {corpus_path}")
    out_dir = work.stage_dir("ingest")
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {"corpus": hash_file(corpus_path)}
    records_path = out_dir / "records.jsonl"
    summary_path = out_dir / "summary.json"
    if stamp_matches(out_dir, inputs) and records_path.exists():
        log.info("ingest up to date; skipping")
        return json.loads(summary_path.read_text(encoding="utf-8"))
    load = parse_pubtator(corpus_path)
    records: list[SentenceRecord] = []
    dropped_annotations = load.dropped
    dropped_sentences = 0
    for doc in load.documents:
        normalized, removed = normalize_document(doc)
        dropped_annotations += removed
        recs, dropped = document_sentences(normalized)
        dropped_sentences += dropped
        records.extend(recs)
    write_records(records, records_path)
    summary = {
        "documents": len(load.documents),
        "sentences": len(records),
        "dropped_annotations": dropped_annotations,
        "dropped_sentences": dropped_sentences,
    }
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    write_stamp(out_dir, inputs)
    return summary


def stage_taxonomy(work: Workdir, hierarchy_path: str | Path, config: RunConfig) -> dict:
    hierarchy_path = Path(hierarchy_path)
    if not hierarchy_path.exists():
        raise MissingPrerequisite(f"hierarchy file not found: {hierarchy_path}")
    records_path = _require(work.path("ingest", "records.jsonl"), "ingest")
    out_dir = work.stage_dir("taxonomy")
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {
        "hierarchy": hash_file(hierarchy_path),
        "records": hash_file(records_path),
        "profile": hash_obj({"depth_limit": config.depth_limit, "min_freq": config.min_freq}),
    }
    plan_path = out_dir / "plan.json"
    scores_path = out_dir / "scores.json"
    summary_path = out_dir / "summary.json"
    if stamp_matches(out_dir, inputs) and plan_path.exists() and scores_path.exists():
        log.info("taxonomy up to date; skipping")
        return json.loads(summary_path.read_text(encoding="utf-8"))
    records = read_records(records_path)
    hierarchy = load_hierarchy(hierarchy_path).with_frequencies(raw_type_frequencies(records))
    plan = build_merge_plan(hierarchy, depth_limit=config.depth_limit, min_freq=config.min_freq)
    save_plan(plan, plan_path)
    graph = build_cooccurrence_graph(records, config.min_freq)
    # a corpus with no multi-typed annotations has nothing to disambiguate
    scores = pagerank(graph) if graph.vertices else {}
    scores_path.write_text(
        json.dumps(scores, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    summary = {
        "categories": len(plan.categories),
        "category_names": [name for name, _ in plan.categories],
        "graph_vertices": len(scores),
    }
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    write_stamp(out_dir, inputs)
    return summary


def stage_spans(work: Workdir, config: RunConfig) -> dict:
    records_path = _require(work.path("ingest", "records.jsonl"), "ingest")
    plan_path = _require(work.path("taxonomy", "plan.json"), "taxonomy")
    scores_path = _require(work.path("taxonomy", "scores.json"), "taxonomy")
    out_dir = work.stage_dir("spans")
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {
        "records": hash_file(records_path),
        "plan": hash_file(plan_path),
        "scores": hash_file(scores_path),
    }
    summary_path = out_dir / "summary.json"
    if stamp_matches(out_dir, inputs) and (out_dir / "index.json").exists():
        log.info("spans up to date; skipping")
        return json.loads(summary_path.read_text(encoding="utf-8"))
    records = read_records(records_path)
    plan = load_plan(plan_path)
    scores = json.loads(scores_path.read_text(encoding="utf-8"))
    chooser = lambda ids: disambiguate(ids, scores)
    all_spans = []
    misaligned = 0
    too_long = 0
    for rec in records:
        labeled, stats = label_spans(generate_spans(rec), rec, plan, chooser)
        misaligned += stats.misaligned
        too_long += stats.too_long
        all_spans.extend(labeled)
    counts = write_span_store(all_spans, out_dir)
    summary = {"counts": counts, "misaligned": misaligned, "too_long": too_long}
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    write_stamp(out_dir, inputs)
    return summary


def stage_episodes(work: Workdir, config: RunConfig) -> dict:
    index_path = _require(work.path("spans", "index.json"), "spans")
    out_dir = work.stage_dir("episodes")
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {
        "spans": hash_file(index_path),
        "split": hash_obj(
            {
                "seed": config.seed,
                "support_ratio": config.support_ratio,
                "exclude_unknown": config.exclude_unknown,
            }
        ),
    }
    pools_path = out_dir / "pools.json"
    summary_path = out_dir / "summary.json"
    if stamp_matches(out_dir, inputs) and pools_path.exists():
        log.info("episodes up to date; skipping")
        return json.loads(summary_path.read_text(encoding="utf-8"))
    store = read_span_store(work.stage_dir("spans"))
    pools = build_pools(
        store, config.support_ratio, Rng(config.seed), exclude_unknown=config.exclude_unknown
    )
    pools_path.write_text(
        json.dumps(pools_to_obj(pools), sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    summary = {
        "categories": list(pools.categories()),
        "sizes": {
            c: {
                "support": len(pools.support[c]),
                "validation": len(pools.validation[c]),
                "query": len(pools.query[c]),
            }
            for c in pools.categories()
        },
    }
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    write_stamp(out_dir, inputs)
    return summary


def load_pools(work: Workdir) -> CategoryPools:
    pools_path = _require(work.path("episodes", "pools.json"), "episodes")
    return pools_from_obj(json.loads(pools_path.read_text(encoding="utf-8")))


def _model_meta(config: RunConfig, categories: tuple[str, ...]) -> dict:
    return {
        "categories": list(categories),
        "config": dataclasses.asdict(config),
    }


def build_model(config: RunConfig, categories: tuple[str, ...], table: EmbeddingTable) -> ProtoModel:
    dims = config.dims
    return ProtoModel.init(
        categories,
        table,
        Rng(config.seed),
        d_pos=dims.d_pos,
        hidden=dims.hidden,
        d_repr=dims.d_repr,
        m_protos=dims.m_protos,
        d_proto=dims.d_proto,
        dropout=dims.dropout,
        max_tokens=dims.max_tokens,
    )


def load_model(checkpoint_path: str | Path, table: EmbeddingTable) -> tuple[ProtoModel, dict]:
    from .config import config_from_dict

    state, meta = load_checkpoint(checkpoint_path)
    config = config_from_dict(meta["config"]).resolved()
    model = build_model(config, tuple(meta["categories"]), table)
    set_state(model, state)
    return model, meta


def stage_train(work: Workdir, embeddings_path: str | Path, config: RunConfig) -> dict:
    embeddings_path = Path(embeddings_path)
    if not embeddings_path.exists():
        raise MissingPrerequisite(f"embeddings file not found: {embeddings_path}")
    pools_path = _require(work.path("episodes", "pools.json"), "episodes")
    out_dir = work.stage_dir("train")
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = config.resolved()
    inputs = {
        "pools": hash_file(pools_path),
        "embeddings": hash_file(embeddings_path),
        "run": hash_obj(dataclasses.asdict(resolved)),
    }
    ckpt_path = out_dir / "model.ckpt"
    summary_path = out_dir / "summary.json"
    if stamp_matches(out_dir, inputs) and ckpt_path.exists():
        log.info("train up to date; skipping")
        return json.loads(summary_path.read_text(encoding="utf-8"))
    pools = load_pools(work)
    table = load_embeddings(embeddings_path, expected_dim=None)
    model = build_model(resolved, pools.categories(), table)
    smallest = min(len(v) for v in pools.support.values())
    k_shots = min(resolved.k_shots, smallest)
    if k_shots < resolved.k_shots:
        log.warning(
            "support pools allow only %d shots (requested %d)", k_shots, resolved.k_shots
        )
    result = run_training(
        model,
        pools,
        resolved.meta,
        Rng(resolved.seed),
        k_shots=k_shots,
        episode_count=resolved.episode_count,
        log_path=out_dir / "history.jsonl",
        val_shots=resolved.val_shots,
        query_shots=resolved.query_shots,
    )
    save_checkpoint(ckpt_path, get_state(model), _model_meta(config, pools.categories()))
    summary = {
        "best_f1": result.best_f1,
        "best_epoch": result.best_epoch,
        "epochs_run": result.epochs_run,
        "k_shots": k_shots,
        "notice": result.notice,
    }
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    write_stamp(out_dir, inputs)
    return summary


def stage_evaluate(work: Workdir, embeddings_path: str | Path, config: RunConfig) -> dict:
    embeddings_path = Path(embeddings_path)
    if not embeddings_path.exists():
        raise MissingPrerequisite(f"embeddings file not found: {embeddings_path}")
    ckpt_path = _require(work.path("train", "model.ckpt"), "train")
    pools_path = _require(work.path("episodes", "pools.json"), "episodes")
    out_dir = work.stage_dir("evaluate")
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = {
        "checkpoint": hash_file(ckpt_path),
        "pools": hash_file(pools_path),
        "embeddings": hash_file(embeddings_path),
        "pooling": hash_obj(config.pooling),
    }
    summary_path = out_dir / "summary.json"
    if stamp_matches(out_dir, inputs) and (out_dir / "eval.json").exists():
        log.info("evaluate up to date; skipping")
        return json.loads(summary_path.read_text(encoding="utf-8"))
    table = load_embeddings(embeddings_path, expected_dim=None)
    model, _ = load_model(ckpt_path, table)
    pools = load_pools(work)
    examples = [
        (span, category)
        for category in pools.categories()
        for span in pools.query[category]
    ]
    report = evaluate_model(model, examples, config={"seed": config.seed, "pooling": config.pooling})
    report.projections_path = "projections.csv"
    dump_projections(model, examples, out_dir / "projections.csv")
    paths = report.write(out_dir, stem="eval")
    summary = {"macro_f1": report.macro_f1, "examples": len(examples)}
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    write_stamp(out_dir, inputs)
    return summary
