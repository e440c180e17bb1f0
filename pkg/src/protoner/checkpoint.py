"""Byte-stable checkpoint files.

A checkpoint is a single JSON header line followed by the raw tensor
payload.  The header carries a caller-supplied ``meta`` mapping and the
tensor directory (name and shape, sorted by name); the payload is each
tensor's bytes as little-endian float64 in C order, concatenated in
directory order.  Identical state therefore produces identical bytes,
which makes checkpoints directly comparable across runs.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

_MAGIC = "protoner-checkpoint-v1"


def _directory(state: dict[str, np.ndarray]) -> list[dict]:
    return [
        {"name": name, "shape": list(state[name].shape)}
        for name in sorted(state)
    ]


def _payload(state: dict[str, np.ndarray]) -> bytes:
    chunks = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def serialize_state(state: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    if not state:
        raise ValueError("refusing to serialize an empty state dict")
    header = {
        "format": _MAGIC,
        "meta": meta or {},
        "tensors": _directory(state),
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    return text.encode("utf-8") + b"\n" + _payload(state)


def save_checkpoint(
    path: str | Path, state: dict[str, np.ndarray], meta: dict | None = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_state(state, meta))
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    split = raw.find(b"\n")
    if split < 0:
        raise ValueError(f"{path}: missing checkpoint header")
    header = json.loads(raw[:split].decode("utf-8"))
    if header.get("format") != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    state: dict[str, np.ndarray] = {}
    offset = split + 1
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = 8 * math.prod(shape)
        block = raw[offset : offset + size]
        if len(block) != size:
            raise ValueError(f"{path}: truncated payload at tensor {entry['name']!r}")
        state[entry["name"]] = np.frombuffer(block, dtype="<f8").reshape(shape).copy()
        offset += size
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return state, header["meta"]


def state_checksum(state: dict[str, np.ndarray]) -> str:
    """Hex digest of the serialized tensors; stable across runs."""
    return hashlib.sha256(serialize_state(state)).hexdigest()
