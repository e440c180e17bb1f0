"""Macro-F1, confusion matrices, report emission, and projection dumps.

Metric denominators are fixed: every category in the run's label set
contributes to the macro average, scoring zero when it is never predicted
and never gold.  Reports are serialized without timestamps so identical
runs emit identical bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ProtoModel, predict
from .spans import MarkedSpan


def category_counts(
    predictions: Sequence[str], golds: Sequence[str], categories: Sequence[str]
) -> dict[str, tuple[int, int, int]]:
    """Per-category (true positives, predicted count, gold count)."""
    known = set(categories)
    for label in list(predictions) + list(golds):
        if label not in known:
            raise ValueError(f"label {label!r} outside the category set")
    counts = {c: [0, 0, 0] for c in categories}
    for pred, gold in zip(predictions, golds):
        counts[pred][1] += 1
        counts[gold][2] += 1
        if pred == gold:
            counts[pred][0] += 1
    return {c: tuple(v) for c, v in counts.items()}


def per_category_f1(
    predictions: Sequence[str], golds: Sequence[str], categories: Sequence[str]
) -> dict[str, dict[str, float]]:
    if len(predictions) != len(golds):
        raise ValueError(
            f"prediction count {len(predictions)} != gold count {len(golds)}"
        )
    if not predictions:
        raise ValueError("cannot score an empty prediction set")
    out = {}
    for c, (tp, n_pred, n_gold) in category_counts(predictions, golds, categories).items():
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gold if n_gold else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[c] = {"precision": precision, "recall": recall, "f1": f1}
    return out


def macro_f1(
    predictions: Sequence[str], golds: Sequence[str], categories: Sequence[str]
) -> float:
    """Unweighted mean of per-category F1 over the full category set."""
    scores = per_category_f1(predictions, golds, categories)
    return sum(s["f1"] for s in scores.values()) / len(categories)


def confusion(
    predictions: Sequence[str], golds: Sequence[str], categories: Sequence[str]
) -> np.ndarray:
    """counts[gold][pred]; rows sum to the gold histogram."""
    index = {c: i for i, c in enumerate(categories)}
    matrix = np.zeros((len(categories), len(categories)), dtype=np.int64)
    for pred, gold in zip(predictions, golds):
        matrix[index[gold], index[pred]] += 1
    return matrix


# ---------------------------------------------------------------------------
# report object


@dataclass
class EvalReport:
    categories: tuple[str, ...]
    per_category: dict[str, dict[str, float]]
    macro_f1: float
    confusion: list[list[int]]
    config: dict = field(default_factory=dict)
    projections_path: str | None = None

    @staticmethod
    def build(
        predictions: Sequence[str],
        golds: Sequence[str],
        categories: Sequence[str],
        config: dict | None = None,
        projections_path: str | None = None,
    ) -> "EvalReport":
        matrix = confusion(predictions, golds, categories)
        return EvalReport(
            categories=tuple(categories),
            per_category=per_category_f1(predictions, golds, categories),
            macro_f1=macro_f1(predictions, golds, categories),
            confusion=matrix.tolist(),
            config=dict(config or {}),
            projections_path=projections_path,
        )

    def to_json(self) -> str:
        payload = {
            "categories": list(self.categories),
            "per_category": self.per_category,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
            "config": self.config,
            "projections_path": self.projections_path,
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "# Evaluation report",
            "",
            f"Macro-F1: **{self.macro_f1:.4f}**",
            "",
            "| category | precision | recall | F1 |",
            "| --- | --- | --- | --- |",
        ]
        for c in self.categories:
            s = self.per_category[c]
            lines.append(
                f"| {c} | {s['precision']:.4f} | {s['recall']:.4f} | {s['f1']:.4f} |"
            )
        lines += ["", "## Confusion (rows: gold, columns: predicted)", ""]
        header = "| gold \\ pred | " + " | ".join(self.categories) + " |"
        lines.append(header)
        lines.append("| --- |" + " --- |" * len(self.categories))
        for c, row in zip(self.categories, self.confusion):
            lines.append(f"| {c} | " + " | ".join(str(v) for v in row) + " |")
        return "\n".join(lines) + "\n"

    def write(self, directory: str | Path, stem: str = "eval") -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": directory / f"{stem}.json",
            "markdown": directory / f"{stem}.md",
            "confusion": directory / f"{stem}_confusion.csv",
        }
        paths["json"].write_text(self.to_json(), encoding="utf-8")
        paths["markdown"].write_text(self.to_markdown(), encoding="utf-8")
        with paths["confusion"].open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["gold"] + list(self.categories))
            for c, row in zip(self.categories, self.confusion):
                writer.writerow([c] + [str(v) for v in row])
        return paths


# ---------------------------------------------------------------------------
# model-facing helpers


def predict_spans(
    model: ProtoModel, spans: Sequence[MarkedSpan], chunk: int = 256, pooling: str = "max"
) -> tuple[list[str], np.ndarray]:
    """Eval-mode predictions and projected vectors for a span sequence."""
    labels: list[str] = []
    vectors: list[np.ndarray] = []
    for lo in range(0, len(spans), chunk):
        z = model.embed_spans(list(spans[lo : lo + chunk]), train=False)
        vectors.append(z.data.copy())
        labels.extend(c for c, _ in predict(z.data, model.bank, pooling))
    stacked = np.vstack(vectors) if vectors else np.zeros((0, model.bank.d))
    return labels, stacked


def evaluate_model(
    model: ProtoModel,
    examples: Sequence[tuple[MarkedSpan, str]],
    config: dict | None = None,
) -> EvalReport:
    if not examples:
        raise ValueError("cannot evaluate on an empty example set")
    spans = [s for s, _ in examples]
    golds = [g for _, g in examples]
    predictions, _ = predict_spans(model, spans)
    return EvalReport.build(predictions, golds, model.bank.categories, config)


def dump_projections(
    model: ProtoModel, examples: Sequence[tuple[MarkedSpan, str]], path: str | Path
) -> Path:
    """CSV of (category, projected coordinates) per span, full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = model.bank.d
    header = ["category"] + [f"z{i}" for i in range(dim)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        if examples:
            spans = [s for s, _ in examples]
            _, vectors = predict_spans(model, spans)
            for (_, gold), row in zip(examples, vectors):
                writer.writerow([gold] + [repr(float(x)) for x in row])
    return path


def load_projections(path: str | Path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 1
        labels, rows = [], []
        for record in reader:
            labels.append(record[0])
            rows.append([float(x) for x in record[1:]])
    return labels, np.array(rows, dtype=np.float64).reshape(len(labels), dim)
