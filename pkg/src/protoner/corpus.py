"""Corpus ingestion, text normalization, and rule-based tokenization.

Documents arrive in PubTator form (title/abstract rows plus tab-separated
annotation rows).  Normalization strips bracketed segments and collapses
whitespace; annotations are re-anchored to the normalized text or dropped.
Tokenization is a frozen rule set: sentence breaks at [.?!] + whitespace +
capital, whitespace-delimited chunks, leading/trailing punctuation detached.
"""

from __future__ import annotations

import json
import logging
import re
import string
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

REANCHOR_WINDOW = 40  # chars searched either side of the mapped offset


class CorpusFormatError(ValueError):
    """Raised for malformed corpus input; message carries path and line number."""


@dataclass(frozen=True)
class EntityAnnotation:
    """A labeled character span; ``type_ids`` is a sorted tuple of type identifiers."""

    start: int
    end: int
    mention: str
    type_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise ValueError(f"bad span [{self.start}, {self.end})")
        if not self.type_ids:
            raise ValueError("annotation needs at least one type id")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    annotations: tuple[EntityAnnotation, ...]

    def __post_init__(self) -> None:
        for a in self.annotations:
            if a.end > len(self.text):
                raise ValueError(f"annotation [{a.start}, {a.end}) outside document {self.doc_id}")
            if self.text[a.start : a.end] != a.mention:
                raise ValueError(f"annotation text mismatch in document {self.doc_id}")


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int


@dataclass(frozen=True)
class TokenizedSentence:
    """Tokens with character ranges; ``start``/``end`` is the sentence envelope."""

    sentence_id: int
    tokens: tuple[Token, ...]
    start: int
    end: int


@dataclass(frozen=True)
class SentenceRecord:
    """One persisted sentence: offsets in ``tokens`` and ``annotations`` are sentence-relative."""

    sentence_id: str
    text: str
    tokens: tuple[Token, ...]
    annotations: tuple[EntityAnnotation, ...]


@dataclass(frozen=True)
class CorpusLoad:
    documents: tuple[Document, ...]
    dropped: int  # annotations discarded because mention != text slice


# ---------------------------------------------------------------------------
# PubTator parsing


def parse_pubtator(path: str | Path) -> CorpusLoad:
    """Parse a PubTator file into documents.

    Title and abstract are joined with a single space; annotation offsets
    index into that joined text.  Annotations whose mention does not equal
    the text slice are dropped with a warning and counted.  Structurally
    malformed rows raise :class:`CorpusFormatError` naming the line.
    """
    path = Path(path)
    texts: dict[str, dict[str, str]] = {}
    rows: dict[str, list[tuple[int, int, int, str, tuple[str, ...]]]] = {}
    order: list[str] = []

    def fail(lineno: int, why: str) -> CorpusFormatError:
        return CorpusFormatError(f"{path}:{lineno}: {why}")

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if "\t" in line:
                fields = line.split("\t")
                if len(fields) != 6:
                    raise fail(lineno, f"annotation row has {len(fields)} fields, expected 6")
                doc_id, s_str, e_str, mention, types_str, _concept = fields
                try:
                    start, end = int(s_str), int(e_str)
                except ValueError:
                    raise fail(lineno, "non-integer offsets") from None
                if start < 0 or end <= start:
                    raise fail(lineno, f"bad offsets [{s_str}, {e_str})")
                type_ids = tuple(sorted({t for t in types_str.split(",") if t}))
                if not type_ids:
                    raise fail(lineno, "empty type-id list")
                rows.setdefault(doc_id, []).append((lineno, start, end, mention, type_ids))
                if doc_id not in order:
                    order.append(doc_id)
                continue
            parts = line.split("|", 2)
            if len(parts) != 3 or parts[1] not in ("t", "a"):
                raise fail(lineno, "expected docid|t|text, docid|a|text, or a 6-field annotation row")
            doc_id, kind, body = parts
            slot = texts.setdefault(doc_id, {})
            if kind in slot:
                raise fail(lineno, f"duplicate {kind!r} row for document {doc_id}")
            slot[kind] = body
            if doc_id not in order:
                order.append(doc_id)

    documents: list[Document] = []
    dropped = 0
    for doc_id in order:
        slot = texts.get(doc_id)
        doc_rows = rows.get(doc_id, [])
        if slot is None or "t" not in slot:
            first = doc_rows[0][0] if doc_rows else 0
            raise fail(first, f"annotations for document {doc_id} without a title row")
        text = slot["t"] if "a" not in slot else slot["t"] + " " + slot["a"]
        kept: list[EntityAnnotation] = []
        for lineno, start, end, mention, type_ids in doc_rows:
            if end > len(text) or text[start:end] != mention:
                log.warning("%s:%d: mention %r != text slice, annotation dropped", path, lineno, mention)
                dropped += 1
                continue
            kept.append(EntityAnnotation(start, end, mention, type_ids))
        documents.append(Document(doc_id, text, tuple(kept)))
    return CorpusLoad(tuple(documents), dropped)


def write_pubtator(documents: list[Document] | tuple[Document, ...], path: str | Path) -> None:
    """Emit documents in the same row format :func:`parse_pubtator` reads.

    The title/abstract split is not retained on Document, so the full text
    goes out as the title row; a re-parse reproduces the structure exactly.
    """
    lines: list[str] = []
    for doc in documents:
        lines.append(f"{doc.doc_id}|t|{doc.text}")
        for a in doc.annotations:
            lines.append(f"{doc.doc_id}\t{a.start}\t{a.end}\t{a.mention}\t{','.join(a.type_ids)}\t-")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Normalization

# innermost pairs only: content may not contain any bracket character
_BRACKET_PAIR = re.compile(
    r"\([^()\[\]{}<>]*\)|\[[^()\[\]{}<>]*\]|\{[^()\[\]{}<>]*\}|<[^()\[\]{}<>]*>"
)


def _normalize_with_origins(text: str) -> tuple[str, list[int]]:
    """Normalize ``text``; also return, per output char, its source index in ``text``.

    Collapsed whitespace runs map to the first whitespace char of the run.
    """
    chars = list(text)
    origins = list(range(len(text)))
    while True:
        s = "".join(chars)
        spans = [m.span() for m in _BRACKET_PAIR.finditer(s)]
        if not spans:
            break
        keep = [True] * len(chars)
        for lo, hi in spans:
            for i in range(lo, hi):
                keep[i] = False
        chars = [c for c, k in zip(chars, keep) if k]
        origins = [o for o, k in zip(origins, keep) if k]

    out_chars: list[str] = []
    out_origins: list[int] = []
    pending: int | None = None  # origin of the current whitespace run, if any
    for c, o in zip(chars, origins):
        if c.isspace():
            if pending is None:
                pending = o
        else:
            if pending is not None and out_chars:
                out_chars.append(" ")
                out_origins.append(pending)
            pending = None
            out_chars.append(c)
            out_origins.append(o)
    return "".join(out_chars), out_origins


def normalize_text(text: str) -> str:
    """Remove bracketed segments innermost-first, collapse whitespace, strip.

    Unbalanced brackets are left verbatim.  Idempotent.
    """
    return _normalize_with_origins(text)[0]


def normalize_document(doc: Document) -> tuple[Document, int]:
    """Normalize a document's text and re-anchor its annotations.

    Each mention is normalized identically, then searched for in the
    normalized text within ±REANCHOR_WINDOW chars of its mapped offset;
    the occurrence closest to the mapped offset wins (leftmost on ties).
    Annotations that vanish or cannot be re-located are dropped and counted.
    """
    norm, origins = _normalize_with_origins(doc.text)
    kept: list[EntityAnnotation] = []
    dropped = 0
    for ann in doc.annotations:
        mention = normalize_text(ann.mention)
        if not mention:
            dropped += 1
            continue
        approx = bisect_left(origins, ann.start)
        lo = max(0, approx - REANCHOR_WINDOW)
        hi = min(len(norm), approx + REANCHOR_WINDOW)
        best: int | None = None
        pos = norm.find(mention, lo)
        while pos != -1 and pos <= hi:
            if best is None or abs(pos - approx) < abs(best - approx):
                best = pos
            pos = norm.find(mention, pos + 1)
        if best is None:
            dropped += 1
            continue
        kept.append(EntityAnnotation(best, best + len(mention), mention, ann.type_ids))
    kept.sort(key=lambda a: (a.start, a.end, a.mention))
    return Document(doc.doc_id, norm, tuple(kept)), dropped


# ---------------------------------------------------------------------------
# Tokenization

_SENTENCE_BREAK = re.compile(r"(?<=[.?!])\s+(?=[A-Z])")
_CHUNK = re.compile(r"\S+")
_PUNCT = frozenset(string.punctuation)


def _split_chunk(chunk: str, base: int) -> list[Token]:
    i, j = 0, len(chunk)
    lead: list[Token] = []
    while i < j and chunk[i] in _PUNCT:
        lead.append(Token(chunk[i], base + i, base + i + 1))
        i += 1
    trail: list[Token] = []
    while j > i and chunk[j - 1] in _PUNCT:
        trail.append(Token(chunk[j - 1], base + j - 1, base + j))
        j -= 1
    trail.reverse()
    mid = [Token(chunk[i:j], base + i, base + j)] if j > i else []
    return lead + mid + trail


def tokenize(text: str) -> list[TokenizedSentence]:
    """Split into sentences and tokens with character ranges.

    Internal punctuation (hyphens, apostrophes) stays inside the token;
    only leading and trailing punctuation chars are detached.
    """
    bounds: list[tuple[int, int]] = []
    prev = 0
    for m in _SENTENCE_BREAK.finditer(text):
        bounds.append((prev, m.start()))
        prev = m.end()
    bounds.append((prev, len(text)))

    sentences: list[TokenizedSentence] = []
    for lo, hi in bounds:
        tokens: list[Token] = []
        for cm in _CHUNK.finditer(text, lo, hi):
            tokens.extend(_split_chunk(cm.group(), cm.start()))
        if not tokens:
            continue
        sentences.append(
            TokenizedSentence(len(sentences), tuple(tokens), tokens[0].start, tokens[-1].end)
        )
    return sentences


# ---------------------------------------------------------------------------
# Sentence records and persistence


def document_sentences(doc: Document) -> tuple[list[SentenceRecord], int]:
    """Tokenize a normalized document and attach annotations per sentence.

    Offsets are rebased to the sentence.  Annotations crossing a sentence
    boundary fit no sentence and are counted as dropped.
    """
    records: list[SentenceRecord] = []
    assigned = 0
    for sent in tokenize(doc.text):
        anns = [a for a in doc.annotations if a.start >= sent.start and a.end <= sent.end]
        assigned += len(anns)
        records.append(
            SentenceRecord(
                sentence_id=f"{doc.doc_id}:{sent.sentence_id}",
                text=doc.text[sent.start : sent.end],
                tokens=tuple(
                    Token(t.surface, t.start - sent.start, t.end - sent.start) for t in sent.tokens
                ),
                annotations=tuple(
                    EntityAnnotation(a.start - sent.start, a.end - sent.start, a.mention, a.type_ids)
                    for a in anns
                ),
            )
        )
    return records, len(doc.annotations) - assigned


def write_sentences(records: list[SentenceRecord], path: str | Path) -> None:
    """Persist sentence records as line-delimited JSON, keys sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {
                "id": r.sentence_id,
                "text": r.text,
                "tokens": [[t.surface, t.start, t.end] for t in r.tokens],
                "annotations": [[a.start, a.end, a.mention, list(a.type_ids)] for a in r.annotations],
            }
            fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")


def read_sentences(path: str | Path) -> list[SentenceRecord]:
    records: list[SentenceRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                SentenceRecord(
                    sentence_id=obj["id"],
                    text=obj["text"],
                    tokens=tuple(Token(s, a, b) for s, a, b in obj["tokens"]),
                    annotations=tuple(
                        EntityAnnotation(s, e, m, tuple(ts)) for s, e, m, ts in obj["annotations"]
                    ),
                )
            )
    return records
