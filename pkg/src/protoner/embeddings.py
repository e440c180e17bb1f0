"""Static token embeddings with weighted sub-unit composition.

The table is frozen: nothing here is trained.  Tokens containing internal
hyphens or slashes decompose into C sub-units embedded independently; the
combined vector is the weighted sum over ell2-normalized sub-vectors with
w_i = 1 + 0.1*((C-i)/2)^2, so a plain token (C=1) comes out as 1.025 times
its normalized vector.  Lookup never fails: exact match, then lowercase,
then a unit vector hashed deterministically from the sub-unit string.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spans import MARKER

_SUBUNIT_SPLIT = re.compile(r"[-/]")
# salt places the marker vector far from any real token's hashed fallback
_MARKER_KEY = "\x00marker\x00"


def _hashed_unit_vector(key: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:16], "little")
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    v = gen.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]
    marker: np.ndarray = field(init=False)
    _cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.marker = _hashed_unit_vector(_MARKER_KEY, self.dim)

    def lookup_unit(self, unit: str) -> np.ndarray:
        """Exact, then lowercase, then deterministic hashed fallback."""
        hit = self.vectors.get(unit)
        if hit is None:
            hit = self.vectors.get(unit.lower())
        if hit is None:
            hit = _hashed_unit_vector(unit, self.dim)
        return hit


def subunits(token: str) -> list[str]:
    parts = [p for p in _SUBUNIT_SPLIT.split(token) if p]
    return parts if parts else [token]


def subunit_weight(c: int, i: int) -> float:
    return 1.0 + 0.1 * ((c - i) / 2.0) ** 2


def embed_token(token: str, table: EmbeddingTable) -> np.ndarray:
    """Weighted sum of normalized sub-unit vectors; the marker maps to its own vector."""
    if token == MARKER:
        return table.marker
    cached = table._cache.get(token)
    if cached is not None:
        return cached
    units = subunits(token)
    c = len(units)
    out = np.zeros(table.dim)
    for i, unit in enumerate(units):
        v = table.lookup_unit(unit)
        norm = np.linalg.norm(v)
        if norm > 0:
            v = v / norm
        out = out + subunit_weight(c, i) * v
    out.setflags(write=False)
    table._cache[token] = out
    return out


# ---------------------------------------------------------------------------
# Text format: header "count dim", then one token and dim floats per line


def load_embeddings(path: str | Path, expected_dim: int | None = 300) -> EmbeddingTable:
    """Read a word2vec-style text table; ``expected_dim=None`` accepts any width."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}:1: header must be 'vocab_count dim'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ValueError(f"{path}:1: non-integer header fields") from None
        if expected_dim is not None and dim != expected_dim:
            raise ValueError(f"{path}: embedding dim {dim} != expected {expected_dim}")
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, 2):
            fields = line.rstrip("\n").split(" ")
            if len(fields) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected token + {dim} floats, got {len(fields)} fields")
            token = fields[0]
            vec = np.array([float(x) for x in fields[1:]])
            if not np.isfinite(vec).all():
                raise ValueError(f"{path}:{lineno}: non-finite embedding for {token!r}")
            vec.setflags(write=False)
            vectors[token] = vec
    if len(vectors) != count:
        raise ValueError(f"{path}: header claims {count} rows, file has {len(vectors)}")
    return EmbeddingTable(dim, vectors)


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for token in sorted(table.vectors):
            row = " ".join(repr(float(x)) for x in table.vectors[token])
            fh.write(f"{token} {row}\n")
