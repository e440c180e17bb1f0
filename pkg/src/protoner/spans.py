"""Candidate span generation and labeling.

Every contiguous token window up to 8 tokens becomes a candidate, realized
as a copy of the sentence with a reserved marker token inserted immediately
before the window.  A candidate whose character range exactly matches an
annotation inherits that annotation's merged category; everything else is
UnknownType.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import SentenceRecord
from .taxonomy import UNKNOWN_TYPE, MergePlan

MARKER = "[MARK]"
MAX_SPAN_LEN = 8


@dataclass(frozen=True)
class MarkedSpan:
    """A candidate span over one sentence.

    ``tokens`` is the sentence's token surface list with MARKER inserted at
    index ``start``; the window covers original token indices [start, end).
    """

    sentence_id: str
    start: int
    end: int
    tokens: tuple[str, ...]
    label: str = UNKNOWN_TYPE

    def __post_init__(self) -> None:
        if not 1 <= self.end - self.start <= MAX_SPAN_LEN:
            raise ValueError(f"span length {self.end - self.start} outside [1, {MAX_SPAN_LEN}]")
        if self.tokens.count(MARKER) != 1 or self.tokens[self.start] != MARKER:
            raise ValueError("exactly one marker, at the span start, is required")

    @property
    def marker_index(self) -> int:
        return self.start


@dataclass(frozen=True)
class LabelStats:
    misaligned: int = 0  # annotation boundary not on token boundaries
    too_long: int = 0  # aligned but wider than the span length cap


def generate_spans(record: SentenceRecord, max_len: int = MAX_SPAN_LEN) -> list[MarkedSpan]:
    """All contiguous windows of 1..max_len tokens, ordered by start then length."""
    surfaces = tuple(t.surface for t in record.tokens)
    n = len(surfaces)
    out: list[MarkedSpan] = []
    for start in range(n):
        for end in range(start + 1, min(start + max_len, n) + 1):
            marked = surfaces[:start] + (MARKER,) + surfaces[start:]
            out.append(MarkedSpan(record.sentence_id, start, end, marked))
    return out


def label_spans(
    spans: Sequence[MarkedSpan],
    record: SentenceRecord,
    plan: MergePlan,
    disambiguator: Callable[[Iterable[str]], str],
) -> tuple[list[MarkedSpan], LabelStats]:
    """Assign merged categories to spans matching annotation boundaries exactly.

    The disambiguator reduces an annotation's type-id set to one id, which
    the plan then maps to a final category.  First annotation wins if two
    share a boundary.  Unmatched spans keep UnknownType.
    """
    starts = {t.start: i for i, t in enumerate(record.tokens)}
    ends = {t.end: i for i, t in enumerate(record.tokens)}
    by_range = {(s.start, s.end): i for i, s in enumerate(spans)}

    assigned: dict[int, str] = {}
    misaligned = too_long = 0
    for ann in record.annotations:
        i = starts.get(ann.start)
        j = ends.get(ann.end)
        if i is None or j is None:
            misaligned += 1
            continue
        idx = by_range.get((i, j + 1))
        if idx is None:
            too_long += 1
            continue
        assigned.setdefault(idx, plan.mapping[disambiguator(ann.type_ids)])

    labeled = [
        replace(s, label=assigned[i]) if i in assigned else s for i, s in enumerate(spans)
    ]
    return labeled, LabelStats(misaligned, too_long)


# ---------------------------------------------------------------------------
# Per-category span store


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_") or "category"


def span_to_obj(s: MarkedSpan) -> dict:
    return {
        "category": s.label,
        "sentence_id": s.sentence_id,
        "start": s.start,
        "end": s.end,
        "tokens": list(s.tokens),
    }


def span_from_obj(obj: dict) -> MarkedSpan:
    return MarkedSpan(
        sentence_id=obj["sentence_id"],
        start=obj["start"],
        end=obj["end"],
        tokens=tuple(obj["tokens"]),
        label=obj["category"],
    )


def write_span_store(spans: Iterable[MarkedSpan], root: str | Path) -> dict[str, int]:
    """Persist spans grouped by category; returns per-category counts.

    Layout: one JSONL file per category under ``root`` plus an index.json
    mapping category name to file name (names may contain characters that
    cannot appear in file names).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    grouped: dict[str, list[MarkedSpan]] = {}
    for s in spans:
        grouped.setdefault(s.label, []).append(s)

    index: dict[str, str] = {}
    counts: dict[str, int] = {}
    taken: set[str] = set()
    for category in sorted(grouped):
        base = _slug(category)
        fname = base + ".jsonl"
        k = 1
        while fname in taken:
            k += 1
            fname = f"{base}_{k}.jsonl"
        taken.add(fname)
        index[category] = fname
        counts[category] = len(grouped[category])
        with open(root / fname, "w", encoding="utf-8") as fh:
            for s in grouped[category]:
                fh.write(json.dumps(span_to_obj(s), sort_keys=True, ensure_ascii=False) + "\n")
    (root / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    return counts


def read_span_store(root: str | Path) -> dict[str, list[MarkedSpan]]:
    root = Path(root)
    index = json.loads((root / "index.json").read_text(encoding="utf-8"))
    store: dict[str, list[MarkedSpan]] = {}
    for category in sorted(index):
        rows: list[MarkedSpan] = []
        with open(root / index[category], encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rows.append(span_from_obj(json.loads(line)))
        store[category] = rows
    return store
