"""Metrics, report emission, and projection dump round-trips."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoner.embeddings import EmbeddingTable
from protoner.evaluate import (
    EvalReport,
    category_counts,
    confusion,
    dump_projections,
    evaluate_model,
    load_projections,
    macro_f1,
    per_category_f1,
    predict_spans,
)
from protoner.model import ProtoModel
from protoner.rng import Rng
from protoner.spans import MARKER, MarkedSpan

CATS = ("a", "b", "c")


def test_macro_f1_hand_computed():
    golds = ["a", "a", "b", "b", "c"]
    preds = ["a", "b", "b", "b", "b"]
    # a: tp=1 pred=1 gold=2 -> p=1, r=.5, f1=2/3
    # b: tp=2 pred=4 gold=2 -> p=.5, r=1, f1=2/3
    # c: tp=0 -> 0
    assert macro_f1(preds, golds, CATS) == pytest.approx((2 / 3 + 2 / 3) / 3)


def test_absent_category_scores_zero():
    golds = ["a", "a"]
    preds = ["a", "a"]
    assert macro_f1(preds, golds, CATS) == pytest.approx(1 / 3)


def test_perfect_prediction_is_one():
    golds = ["a", "b", "c"]
    assert macro_f1(golds, golds, CATS) == 1.0


@given(st.lists(st.sampled_from(CATS), min_size=1, max_size=40))
def test_macro_f1_invariant_under_example_order(golds):
    rng = np.random.default_rng(0)
    preds = [CATS[i] for i in rng.integers(0, 3, size=len(golds))]
    order = rng.permutation(len(golds))
    shuffled = macro_f1([preds[i] for i in order], [golds[i] for i in order], CATS)
    assert macro_f1(preds, golds, CATS) == pytest.approx(shuffled)


@settings(max_examples=30)
@given(st.lists(st.sampled_from(CATS), min_size=1, max_size=40))
def test_macro_f1_bounds(golds):
    rng = np.random.default_rng(1)
    preds = [CATS[i] for i in rng.integers(0, 3, size=len(golds))]
    assert 0.0 <= macro_f1(preds, golds, CATS) <= 1.0


def test_empty_input_rejected():
    with pytest.raises(ValueError, match="empty"):
        macro_f1([], [], CATS)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="count"):
        per_category_f1(["a"], ["a", "b"], CATS)


def test_unknown_label_rejected():
    with pytest.raises(ValueError, match="outside the category set"):
        macro_f1(["z"], ["a"], CATS)


def test_category_counts_accounting():
    golds = ["a", "b", "b", "c"]
    preds = ["b", "b", "a", "c"]
    counts = category_counts(preds, golds, CATS)
    assert counts["a"] == (0, 1, 1)
    assert counts["b"] == (1, 2, 2)
    assert counts["c"] == (1, 1, 1)


def test_confusion_conserves_counts():
    rng = np.random.default_rng(7)
    golds = [CATS[i] for i in rng.integers(0, 3, size=60)]
    preds = [CATS[i] for i in rng.integers(0, 3, size=60)]
    matrix = confusion(preds, golds, CATS)
    assert matrix.sum() == 60
    for i, c in enumerate(CATS):
        assert matrix[i].sum() == golds.count(c)
        assert matrix[:, i].sum() == preds.count(c)


def test_confusion_diagonal_counts_agreement():
    golds = ["a", "b", "c", "a"]
    preds = ["a", "b", "a", "a"]
    matrix = confusion(preds, golds, CATS)
    assert matrix.trace() == 3
    assert matrix[2, 0] == 1


# ---------------------------------------------------------------------------
# reports


def test_report_round_trips_through_json(tmp_path):
    golds = ["a", "b", "b", "c"]
    preds = ["a", "b", "c", "c"]
    report = EvalReport.build(preds, golds, CATS, config={"seed": 9})
    paths = report.write(tmp_path, stem="run")
    data = json.loads(paths["json"].read_text())
    assert data["macro_f1"] == pytest.approx(report.macro_f1)
    assert data["config"] == {"seed": 9}
    assert data["confusion"] == report.confusion
    table = paths["markdown"].read_text()
    assert "| a |" in table and "Macro-F1" in table
    rows = paths["confusion"].read_text().strip().splitlines()
    assert rows[0] == "gold,a,b,c"
    assert len(rows) == 1 + len(CATS)


def test_report_bytes_are_deterministic(tmp_path):
    golds = ["a", "b", "c"] * 4
    preds = ["a", "a", "c"] * 4
    one = EvalReport.build(preds, golds, CATS, config={"k": 1})
    two = EvalReport.build(preds, golds, CATS, config={"k": 1})
    assert one.to_json() == two.to_json()
    assert one.to_markdown() == two.to_markdown()


# ---------------------------------------------------------------------------
# model-facing helpers


def tiny_model_and_spans():
    rng = Rng(11)
    words = [f"w{i}" for i in range(6)]
    table = EmbeddingTable(
        dim=5,
        vectors={w: rng.stream("emb").standard_normal(5) for w in words},
    )
    model = ProtoModel.init(
        ("a", "b"), table, rng, d_pos=4, hidden=8, d_repr=8, m_protos=2, d_proto=6
    )
    spans = [
        MarkedSpan(
            sentence_id=f"d0:{i}",
            start=1,
            end=2,
            tokens=("w0", MARKER, f"w{i % 6}", "w3"),
            label="a" if i % 2 == 0 else "b",
        )
        for i in range(5)
    ]
    return model, spans


def test_predict_spans_chunking_is_invisible():
    model, spans = tiny_model_and_spans()
    whole_labels, whole_z = predict_spans(model, spans, chunk=256)
    piece_labels, piece_z = predict_spans(model, spans, chunk=2)
    assert whole_labels == piece_labels
    np.testing.assert_allclose(whole_z, piece_z, atol=1e-12)


def test_evaluate_model_builds_consistent_report():
    model, spans = tiny_model_and_spans()
    examples = [(s, s.label) for s in spans]
    report = evaluate_model(model, examples)
    assert report.categories == ("a", "b")
    assert np.array(report.confusion).sum() == len(spans)
    preds, _ = predict_spans(model, [s for s, _ in examples])
    assert report.macro_f1 == pytest.approx(
        macro_f1(preds, [g for _, g in examples], ("a", "b"))
    )


def test_evaluate_model_rejects_empty():
    model, _ = tiny_model_and_spans()
    with pytest.raises(ValueError, match="empty"):
        evaluate_model(model, [])


def test_projection_dump_round_trip(tmp_path):
    model, spans = tiny_model_and_spans()
    examples = [(s, s.label) for s in spans]
    path = dump_projections(model, examples, tmp_path / "proj.csv")
    labels, vectors = load_projections(path)
    assert labels == [g for _, g in examples]
    _, direct = predict_spans(model, [s for s, _ in examples])
    np.testing.assert_array_equal(vectors, direct)  # repr() is lossless


def test_projection_dump_empty_is_header_only(tmp_path):
    model, _ = tiny_model_and_spans()
    path = dump_projections(model, [], tmp_path / "proj.csv")
    labels, vectors = load_projections(path)
    assert labels == []
    assert vectors.shape == (0, model.bank.d)
    assert path.read_text().startswith("category,z0")
