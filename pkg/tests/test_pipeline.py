"""Staged pipeline: stamps, prerequisites, persistence, end-to-end smoke."""

import dataclasses
import json

import pytest

from protoner.config import DimsConfig, MetaConfig, RunConfig
from protoner.corpus import parse_pubtator, document_sentences, normalize_document
from protoner.embeddings import load_embeddings
from protoner.pipeline import (
    MissingPrerequisite,
    Workdir,
    build_model,
    hash_obj,
    load_model,
    load_pools,
    pools_from_obj,
    pools_to_obj,
    read_records,
    stage_episodes,
    stage_evaluate,
    stage_ingest,
    stage_spans,
    stage_taxonomy,
    stage_train,
    stamp_matches,
    write_records,
    write_stamp,
)
from protoner.evaluate import predict_spans
from protoner.synthetic import SyntheticSpec, write_dataset

SMALL = SyntheticSpec(
    n_categories=3, docs=10, sentences_per_doc=2, dim=8, seed=11
)


def small_config() -> RunConfig:
    return RunConfig(
        seed=7,
        k_shots=3,
        episode_count=6,
        support_ratio=0.5,
        depth_limit=1,
        min_freq=1,
        exclude_unknown=True,
        dims=DimsConfig(d_pos=4, hidden=8, d_repr=8, m_protos=2, d_proto=6),
        meta=MetaConfig(inner_epochs=1, outer_epochs=2, patience=2),
    )


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    directory = tmp_path_factory.mktemp("data")
    return write_dataset(SMALL, directory)


@pytest.fixture()
def work(tmp_path):
    return Workdir(tmp_path / "work")


def run_all(work, dataset, config):
    stage_ingest(work, dataset["corpus"])
    stage_taxonomy(work, dataset["hierarchy"], config)
    stage_spans(work, config)
    stage_episodes(work, config)
    stage_train(work, dataset["embeddings"], config)
    return stage_evaluate(work, dataset["embeddings"], config)


# ---------------------------------------------------------------------------
# stamps


def test_stamp_round_trip(tmp_path):
    inputs = {"a": "1", "b": "2"}
    write_stamp(tmp_path, inputs)
    assert stamp_matches(tmp_path, inputs)
    assert not stamp_matches(tmp_path, {"a": "1", "b": "3"})


def test_stamp_missing_or_corrupt(tmp_path):
    assert not stamp_matches(tmp_path, {})
    (tmp_path / "stage.json").write_text("{not json", encoding="utf-8")
    assert not stamp_matches(tmp_path, {})


def test_hash_obj_key_order_invariant():
    assert hash_obj({"a": 1, "b": 2}) == hash_obj({"b": 2, "a": 1})


# ---------------------------------------------------------------------------
# prerequisites


def test_stages_demand_their_producers(work, dataset):
    config = small_config()
    with pytest.raises(MissingPrerequisite, match="ingest"):
        stage_taxonomy(work, dataset["hierarchy"], config)
    with pytest.raises(MissingPrerequisite, match="ingest"):
        stage_spans(work, config)
    with pytest.raises(MissingPrerequisite, match="spans"):
        stage_episodes(work, config)
    with pytest.raises(MissingPrerequisite, match="episodes"):
        stage_train(work, dataset["embeddings"], config)
    with pytest.raises(MissingPrerequisite, match="train"):
        stage_evaluate(work, dataset["embeddings"], config)


def test_missing_input_files_reported(work, tmp_path):
    config = small_config()
    with pytest.raises(MissingPrerequisite, match="corpus file not found"):
        stage_ingest(work, tmp_path / "nope.pubtator")
    with pytest.raises(MissingPrerequisite, match="embeddings file not found"):
        stage_train(work, tmp_path / "nope.vec", config)


# ---------------------------------------------------------------------------
# persistence round trips


def test_records_round_trip(tmp_path, dataset):
    load = parse_pubtator(dataset["corpus"])
    records = []
    for doc in load.documents:
        normalized, _ = normalize_document(doc)
        recs, _ = document_sentences(normalized)
        records.extend(recs)
    path = tmp_path / "records.jsonl"
    write_records(records, path)
    assert read_records(path) == records


def test_pools_round_trip(work, dataset):
    config = small_config()
    stage_ingest(work, dataset["corpus"])
    stage_taxonomy(work, dataset["hierarchy"], config)
    stage_spans(work, config)
    stage_episodes(work, config)
    pools = load_pools(work)
    assert pools_from_obj(pools_to_obj(pools)) == pools
    assert len(pools.categories()) == SMALL.n_categories


# ---------------------------------------------------------------------------
# stage behavior


def test_ingest_summary_counts(work, dataset):
    summary = stage_ingest(work, dataset["corpus"])
    assert summary["documents"] == SMALL.docs
    # one title sentence plus the content sentences per document
    assert summary["sentences"] == SMALL.docs * (SMALL.sentences_per_doc + 1)
    assert summary["dropped_annotations"] == 0


def test_rerun_is_noop(work, dataset):
    config = small_config()
    summary = stage_ingest(work, dataset["corpus"])
    records = work.path("ingest", "records.jsonl")
    before = records.stat().st_mtime_ns
    assert stage_ingest(work, dataset["corpus"]) == summary
    assert records.stat().st_mtime_ns == before


def test_changed_input_reruns_stage(work, dataset, tmp_path):
    stage_ingest(work, dataset["corpus"])
    records = work.path("ingest", "records.jsonl")
    before = records.stat().st_mtime_ns
    copy = tmp_path / "corpus2.pubtator"
    copy.write_text(
        dataset["corpus"].read_text(encoding="utf-8") + "\n", encoding="utf-8"
    )
    stage_ingest(work, copy)
    assert records.stat().st_mtime_ns != before


def test_config_change_reruns_episodes(work, dataset):
    config = small_config()
    stage_ingest(work, dataset["corpus"])
    stage_taxonomy(work, dataset["hierarchy"], config)
    stage_spans(work, config)
    stage_episodes(work, config)
    first = load_pools(work)
    reseeded = dataclasses.replace(config, seed=8)
    stage_episodes(work, reseeded)
    assert load_pools(work) != first


# ---------------------------------------------------------------------------
# train / evaluate


def test_end_to_end_smoke(work, dataset):
    config = small_config()
    summary = run_all(work, dataset, config)
    assert 0.0 <= summary["macro_f1"] <= 1.0
    report = json.loads(work.path("evaluate", "eval.json").read_text(encoding="utf-8"))
    assert report["projections_path"] == "projections.csv"
    assert work.path("evaluate", "projections.csv").exists()
    history = work.path("train", "history.jsonl").read_text(encoding="utf-8")
    assert all(json.loads(line) for line in history.splitlines())


def test_checkpoint_reload_matches_live_model(work, dataset):
    config = small_config()
    run_all(work, dataset, config)
    table = load_embeddings(dataset["embeddings"], expected_dim=None)
    model, meta = load_model(work.path("train", "model.ckpt"), table)
    assert meta["config"]["seed"] == config.seed
    pools = load_pools(work)
    spans = [s for c in pools.categories() for s in pools.query[c]][:8]
    labels, vectors = predict_spans(model, spans)
    again, vectors2 = predict_spans(model, spans)
    assert labels == again
    assert (vectors == vectors2).all()


def test_train_k_shot_capped_by_pool(work, dataset):
    config = dataclasses.replace(small_config(), k_shots=500)
    stage_ingest(work, dataset["corpus"])
    stage_taxonomy(work, dataset["hierarchy"], config)
    stage_spans(work, config)
    stage_episodes(work, config)
    summary = stage_train(work, dataset["embeddings"], config)
    pools = load_pools(work)
    assert summary["k_shots"] == min(len(v) for v in pools.support.values())


def test_unresolved_config_stored_in_checkpoint(work, dataset):
    config = dataclasses.replace(small_config(), ablation="single-proto")
    stage_ingest(work, dataset["corpus"])
    stage_taxonomy(work, dataset["hierarchy"], config)
    stage_spans(work, config)
    stage_episodes(work, config)
    stage_train(work, dataset["embeddings"], config)
    table = load_embeddings(dataset["embeddings"], expected_dim=None)
    model, meta = load_model(work.path("train", "model.ckpt"), table)
    # stored config keeps the switch; load resolves it to one prototype row
    assert meta["config"]["ablation"] == "single-proto"
    assert model.bank.m == 1


def test_evaluate_depends_on_checkpoint_bytes(work, dataset):
    config = small_config()
    run_all(work, dataset, config)
    eval_json = work.path("evaluate", "eval.json")
    before = eval_json.stat().st_mtime_ns
    # unchanged inputs: evaluate skips
    stage_evaluate(work, dataset["embeddings"], config)
    assert eval_json.stat().st_mtime_ns == before
