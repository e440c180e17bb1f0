"""Span encoder: frozen embeddings + sinusoidal positions, BiLSTM, projection.

Each marked span is embedded token by token (embedding width + position
width = LSTM input width), run through a single BiLSTM layer, and read out
at the marker position; a bias-free linear map takes the concatenated
forward/backward state to the span representation.

Sequences are batched by exact length, so every row in a batch runs for its
true length and right-padding cannot influence any state.  Projecting only
the marker rows equals projecting the full hidden matrix and reading one
row, because the projection acts row-wise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .embeddings import EmbeddingTable, embed_token
from .rng import Rng, xavier_uniform
from .spans import MarkedSpan

MAX_TOKENS = 300


def positional_encoding(length: int = MAX_TOKENS, d_pos: int = 200) -> np.ndarray:
    """Sinusoidal position matrix: sin on even columns, cos on odd ones."""
    if d_pos % 2 != 0:
        raise ValueError(f"d_pos must be even, got {d_pos}")
    if length < 1:
        raise ValueError("length must be >= 1")
    positions = np.arange(length)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_pos, 2) / d_pos)[None, :]
    angles = positions * rates
    out = np.empty((length, d_pos))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


@lru_cache(maxsize=8)
def _cached_positions(length: int, d_pos: int) -> np.ndarray:
    p = positional_encoding(length, d_pos)
    p.setflags(write=False)
    return p


@dataclass
class EncoderParams:
    """Trainable BiLSTM + projection weights; gate layout is [i, f, g, o]."""

    w_ih_f: Value
    w_hh_f: Value
    b_f: Value
    w_ih_b: Value
    w_hh_b: Value
    b_b: Value
    w_p: Value
    d_input: int
    hidden: int
    d_repr: int

    @staticmethod
    def init(
        rng: Rng, d_embed: int = 300, d_pos: int = 200, hidden: int = 1024, d_repr: int = 512
    ) -> "EncoderParams":
        if d_pos % 2 != 0:
            raise ValueError("d_pos must be even")
        d_input = d_embed + d_pos
        def w(name: str, fan_in: int, fan_out: int) -> Value:
            return xavier_uniform(rng.stream(f"encoder/{name}"), fan_in, fan_out)

        return EncoderParams(
            w_ih_f=w("w_ih_f", d_input, 4 * hidden),
            w_hh_f=w("w_hh_f", hidden, 4 * hidden),
            b_f=ad.param(np.zeros(4 * hidden)),
            w_ih_b=w("w_ih_b", d_input, 4 * hidden),
            w_hh_b=w("w_hh_b", hidden, 4 * hidden),
            b_b=ad.param(np.zeros(4 * hidden)),
            w_p=w("w_p", 2 * hidden, d_repr),
            d_input=d_input,
            hidden=hidden,
            d_repr=d_repr,
        )

    def parameters(self) -> dict[str, Value]:
        return {
            "encoder/w_ih_f": self.w_ih_f,
            "encoder/w_hh_f": self.w_hh_f,
            "encoder/b_f": self.b_f,
            "encoder/w_ih_b": self.w_ih_b,
            "encoder/w_hh_b": self.w_hh_b,
            "encoder/b_b": self.b_b,
            "encoder/w_p": self.w_p,
        }


def truncate_window(tokens: tuple[str, ...], marker: int, max_tokens: int) -> tuple[tuple[str, ...], int]:
    """Cut to ``max_tokens`` around the marker; the marker always survives."""
    if len(tokens) <= max_tokens:
        return tokens, marker
    start = min(max(marker - max_tokens // 2, 0), len(tokens) - max_tokens)
    return tokens[start : start + max_tokens], marker - start


def _lstm_direction(
    inputs: list[np.ndarray], w_ih: Value, w_hh: Value, b: Value, hidden: int
) -> list[Value]:
    """One direction over a length-uniform batch; returns the state per step."""
    batch = inputs[0].shape[0]
    h = ad.constant(np.zeros((batch, hidden)))
    c = ad.constant(np.zeros((batch, hidden)))
    states: list[Value] = []
    for x in inputs:
        z = ad.add(ad.add(ad.matmul(ad.constant(x), w_ih), ad.matmul(h, w_hh)), b)
        gate_i = ad.sigmoid(ad.slice_axis(z, 1, 0, hidden))
        gate_f = ad.sigmoid(ad.slice_axis(z, 1, hidden, 2 * hidden))
        gate_g = ad.tanh(ad.slice_axis(z, 1, 2 * hidden, 3 * hidden))
        gate_o = ad.sigmoid(ad.slice_axis(z, 1, 3 * hidden, 4 * hidden))
        c = ad.add(ad.mul(gate_f, c), ad.mul(gate_i, gate_g))
        h = ad.mul(gate_o, ad.tanh(c))
        states.append(h)
    return states


def _span_inputs(
    span: MarkedSpan, table: EmbeddingTable, positions: np.ndarray, max_tokens: int
) -> tuple[np.ndarray, int]:
    tokens, marker = truncate_window(span.tokens, span.marker_index, max_tokens)
    rows = np.stack([embed_token(t, table) for t in tokens])
    return np.hstack([rows, positions[: len(tokens)]]), marker


def encode_batch(
    spans: list[MarkedSpan],
    table: EmbeddingTable,
    params: EncoderParams,
    max_tokens: int = MAX_TOKENS,
) -> Value:
    """Encode spans into a (len(spans), d_repr) value, rows in input order."""
    if not spans:
        raise ValueError("encode_batch needs at least one span")
    d_pos = params.d_input - table.dim
    if d_pos <= 0 or d_pos % 2 != 0:
        raise ValueError(f"table dim {table.dim} incompatible with input width {params.d_input}")
    positions = _cached_positions(max_tokens, d_pos)

    prepared = [_span_inputs(s, table, positions, max_tokens) for s in spans]
    buckets: dict[int, list[int]] = {}
    for i, (x, _) in enumerate(prepared):
        buckets.setdefault(x.shape[0], []).append(i)

    rows: list[Value | None] = [None] * len(spans)
    for length in sorted(buckets):
        members = buckets[length]
        stacked = np.stack([prepared[i][0] for i in members])  # (B, L, d_input)
        steps = [np.ascontiguousarray(stacked[:, t, :]) for t in range(length)]
        fwd = _lstm_direction(steps, params.w_ih_f, params.w_hh_f, params.b_f, params.hidden)
        bwd_rev = _lstm_direction(
            steps[::-1], params.w_ih_b, params.w_hh_b, params.b_b, params.hidden
        )
        bwd = bwd_rev[::-1]  # bwd[t] is the backward state at step t
        for row, i in enumerate(members):
            marker = prepared[i][1]
            f_state = ad.slice_axis(fwd[marker], 0, row, row + 1)
            b_state = ad.slice_axis(bwd[marker], 0, row, row + 1)
            rows[i] = ad.concat([f_state, b_state], axis=1)
    assert all(r is not None for r in rows)
    return ad.matmul(ad.concat(rows, axis=0), params.w_p)  # type: ignore[arg-type]


def encode_sequence(
    span: MarkedSpan, table: EmbeddingTable, params: EncoderParams, max_tokens: int = MAX_TOKENS
) -> Value:
    """Single-span convenience wrapper; returns a (d_repr,) value."""
    return ad.reshape(encode_batch([span], table, params, max_tokens), (params.d_repr,))
