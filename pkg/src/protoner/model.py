"""Prototype bank, span projection network, losses, and prediction.

Every category owns M prototype rows of a single (N*M, D) parameter; rows
are kept unit-norm by explicit renormalization after each meta-update.
Spans are projected through affine -> BatchNorm -> GELU -> Dropout ->
affine -> LayerNorm, then compared to prototypes purely by cosine.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .embeddings import EmbeddingTable
from .encoder import MAX_TOKENS, EncoderParams, encode_batch
from .rng import Rng, xavier_uniform
from .spans import MarkedSpan

log = logging.getLogger(__name__)

EPS_RATIO = 1e-12
EPS_NORM = 1e-5  # batch/layer normalization variance floor


# ---------------------------------------------------------------------------
# Prototype bank


@dataclass
class PrototypeBank:
    """(N*M, D) trainable matrix; category ``categories[c]`` owns rows [cM, (c+1)M)."""

    categories: tuple[str, ...]
    m: int
    d: int
    matrix: Value

    @staticmethod
    def init(categories: tuple[str, ...], m: int, d: int, rng: Rng) -> "PrototypeBank":
        if not categories:
            raise ValueError("need at least one category")
        if m < 1 or d < 1:
            raise ValueError("m and d must be >= 1")
        n = len(categories)
        matrix = xavier_uniform(rng.stream("prototypes"), n * m, d)
        bank = PrototypeBank(tuple(categories), m, d, matrix)
        bank.renormalize()
        return bank

    def rows_for(self, category: str) -> tuple[int, int]:
        c = self.categories.index(category)
        return c * self.m, (c + 1) * self.m

    def gather(self, task_order: tuple[str, ...]) -> Value:
        """Prototype rows re-ordered to an episode's category order, (len*M, D)."""
        blocks = []
        for category in task_order:
            lo, hi = self.rows_for(category)
            blocks.append(ad.slice_axis(self.matrix, 0, lo, hi))
        return blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=0)

    def renormalize(self) -> None:
        """Project every row back onto the unit sphere (not part of the graph)."""
        norms = np.linalg.norm(self.matrix.data, axis=1, keepdims=True)
        np.divide(self.matrix.data, np.maximum(norms, 1e-12), out=self.matrix.data)

    def max_norm_error(self) -> float:
        return float(np.abs(np.linalg.norm(self.matrix.data, axis=1) - 1.0).max())

    def append_categories(self, new_categories: tuple[str, ...], rng: Rng) -> "PrototypeBank":
        """Fresh Xavier rows (then normalized) appended for held-out categories."""
        overlap = set(new_categories) & set(self.categories)
        if overlap:
            raise ValueError(f"categories already present: {sorted(overlap)}")
        extra = xavier_uniform(
            rng.stream("prototypes/extension"), len(new_categories) * self.m, self.d
        ).data
        extra /= np.maximum(np.linalg.norm(extra, axis=1, keepdims=True), 1e-12)
        # existing rows are copied bit-for-bit, not renormalized again
        data = np.vstack([self.matrix.data, extra])
        return PrototypeBank(
            self.categories + tuple(new_categories), self.m, self.d, ad.param(data)
        )


# ---------------------------------------------------------------------------
# Projection network


@dataclass
class ProjectionNet:
    """Affine -> BatchNorm -> GELU -> Dropout -> affine -> LayerNorm."""

    w1: Value
    b1: Value
    bn_gamma: Value
    bn_beta: Value
    w_out: Value
    b_out: Value
    ln_gamma: Value
    ln_beta: Value
    running_mean: np.ndarray
    running_var: np.ndarray
    dropout: float = 0.1
    momentum: float = 0.1

    @staticmethod
    def init(rng: Rng, d_in: int = 512, d_out: int = 50, dropout: float = 0.1) -> "ProjectionNet":
        return ProjectionNet(
            w1=xavier_uniform(rng.stream("projection/w1"), d_in, d_in),
            b1=ad.param(np.zeros(d_in)),
            bn_gamma=ad.param(np.ones(d_in)),
            bn_beta=ad.param(np.zeros(d_in)),
            w_out=xavier_uniform(rng.stream("projection/w_out"), d_in, d_out),
            b_out=ad.param(np.zeros(d_out)),
            ln_gamma=ad.param(np.ones(d_out)),
            ln_beta=ad.param(np.zeros(d_out)),
            running_mean=np.zeros(d_in),
            running_var=np.ones(d_in),
            dropout=dropout,
        )

    def parameters(self) -> dict[str, Value]:
        return {
            "projection/w1": self.w1,
            "projection/b1": self.b1,
            "projection/bn_gamma": self.bn_gamma,
            "projection/bn_beta": self.bn_beta,
            "projection/w_out": self.w_out,
            "projection/b_out": self.b_out,
            "projection/ln_gamma": self.ln_gamma,
            "projection/ln_beta": self.ln_beta,
        }

    def forward(
        self, x: Value, train: bool, dropout_stream: np.random.Generator | None = None
    ) -> Value:
        """Project (B, d_in) -> (B, d_out); batch statistics only in train mode."""
        batch = x.shape[0]
        h = ad.add(ad.matmul(x, self.w1), self.b1)

        if train:
            mu = ad.mean(h, axis=0)
            var = ad.mean(ad.square(ad.sub(h, mu)), axis=0)
            # running stats track data, not gradients
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.data
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var.data
            h_hat = ad.div(ad.sub(h, mu), ad.sqrt(ad.add(var, ad.constant(EPS_NORM))))
        else:
            h_hat = ad.div(
                ad.sub(h, ad.constant(self.running_mean)),
                ad.constant(np.sqrt(self.running_var + EPS_NORM)),
            )
        h = ad.add(ad.mul(h_hat, self.bn_gamma), self.bn_beta)
        h = ad.gelu(h)

        if train and self.dropout > 0.0:
            if dropout_stream is None:
                raise ValueError("train-mode forward needs a dropout stream")
            keep = (dropout_stream.uniform(size=h.shape) >= self.dropout) / (1.0 - self.dropout)
            h = ad.mul(h, ad.constant(keep))

        out = ad.add(ad.matmul(h, self.w_out), self.b_out)
        mu_row = ad.reshape(ad.mean(out, axis=1), (batch, 1))
        var_row = ad.reshape(ad.mean(ad.square(ad.sub(out, mu_row)), axis=1), (batch, 1))
        normalized = ad.div(ad.sub(out, mu_row), ad.sqrt(ad.add(var_row, ad.constant(EPS_NORM))))
        return ad.add(ad.mul(normalized, self.ln_gamma), self.ln_beta)


# ---------------------------------------------------------------------------
# Losses


def proto_repulsion_loss(prototypes: Value) -> Value:
    """Mean over rows of (largest cosine to any other row, plus one)."""
    rows = prototypes.shape[0]
    if rows < 2:
        raise ValueError("repulsion needs at least two prototypes")
    unit = ad.l2_normalize(prototypes, axis=-1)
    cos = ad.matmul(unit, ad.transpose(unit))
    # bury the self-similarity diagonal below any reachable cosine
    masked = ad.add(cos, ad.constant(np.diag(np.full(rows, -4.0))))
    return ad.add(ad.mean(ad.max_over_axis(masked, axis=1)), ad.constant(1.0))


def span_alignment_loss(
    prototypes: Value,
    spans: Value,
    n_ways: int,
    m_protos: int,
    k_shots: int,
    eps: float = EPS_RATIO,
) -> Value:
    """Ratio-form contrastive loss over squared cosine distances.

    ``prototypes``: (N*M, D) in episode category order; ``spans``: (N*K, D)
    ordered in category blocks of K.  Per category: min-pool the distance
    over its M prototypes, then divide the block-average distance by the
    distance mass over all spans.
    """
    if prototypes.shape != (n_ways * m_protos, prototypes.shape[1]):
        raise ad.ShapeError(
            f"prototypes shape {prototypes.shape} != ({n_ways * m_protos}, D)"
        )
    if spans.shape[0] != n_ways * k_shots:
        raise ad.ShapeError(f"spans rows {spans.shape[0]} != n_ways*k_shots {n_ways * k_shots}")

    unit_p = ad.l2_normalize(prototypes, axis=-1)
    unit_z = ad.l2_normalize(spans, axis=-1)
    cos = ad.matmul(unit_p, ad.transpose(unit_z))  # (N*M, N*K)
    dist = ad.square(ad.sub(ad.constant(1.0), cos))
    pooled = ad.min_over_axis(ad.reshape(dist, (n_ways, m_protos, n_ways * k_shots)), axis=1)

    own = np.zeros((n_ways, n_ways * k_shots))
    for c in range(n_ways):
        own[c, c * k_shots : (c + 1) * k_shots] = 1.0
    numer = ad.sum_(ad.mul(pooled, ad.constant(own)), axis=1)  # (N,)
    denom = ad.sum_(pooled, axis=1)
    if not float(np.all(denom.data > 0.0)):
        log.warning("span alignment loss: all-zero distance mass for some category")
    ratio = ad.div(
        ad.mul(numer, ad.constant(1.0 / k_shots)), ad.add(denom, ad.constant(eps))
    )
    return ad.sum_(ratio)


def cross_entropy_loss(
    prototypes: Value, spans: Value, n_ways: int, m_protos: int, k_shots: int
) -> Value:
    """Ablation objective: softmax cross-entropy over max-cosine category logits."""
    unit_p = ad.l2_normalize(prototypes, axis=-1)
    unit_z = ad.l2_normalize(spans, axis=-1)
    cos = ad.matmul(unit_p, ad.transpose(unit_z))  # (N*M, N*K)
    per_cat = ad.max_over_axis(
        ad.reshape(cos, (n_ways, m_protos, n_ways * k_shots)), axis=1
    )  # (N, N*K)
    logits = ad.transpose(per_cat)  # (N*K, N)
    gold = np.zeros((n_ways * k_shots, n_ways))
    for j in range(n_ways * k_shots):
        gold[j, j // k_shots] = 1.0
    lse = ad.log(ad.sum_(ad.exp(logits), axis=1))  # (N*K,)
    picked = ad.sum_(ad.mul(logits, ad.constant(gold)), axis=1)
    return ad.mean(ad.sub(lse, picked))


# ---------------------------------------------------------------------------
# Prediction


def predict_scores(
    z: np.ndarray, bank_matrix: np.ndarray, m_protos: int, pooling: str = "max"
) -> np.ndarray:
    """Category scores (B, N): pooled cosine against each category's prototypes."""
    if pooling not in ("max", "mean"):
        raise ValueError(f"unknown pooling {pooling!r}")
    zn = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    pn = bank_matrix / np.maximum(np.linalg.norm(bank_matrix, axis=1, keepdims=True), 1e-12)
    cos = zn @ pn.T  # (B, N*M)
    grouped = cos.reshape(z.shape[0], -1, m_protos)
    return grouped.max(axis=2) if pooling == "max" else grouped.mean(axis=2)


def predict(
    z: np.ndarray, bank: PrototypeBank, pooling: str = "max"
) -> list[tuple[str, float]]:
    """Best category and its pooled cosine per row; ties go to the lowest index."""
    scores = predict_scores(z, bank.matrix.data, bank.m, pooling)
    picks = scores.argmax(axis=1)
    return [(bank.categories[int(c)], float(scores[i, c])) for i, c in enumerate(picks)]


# ---------------------------------------------------------------------------
# Full model


@dataclass
class ProtoModel:
    """Encoder + projection + prototype bank over a frozen embedding table."""

    encoder: EncoderParams
    projection: ProjectionNet
    bank: PrototypeBank
    table: EmbeddingTable
    max_tokens: int = MAX_TOKENS

    @staticmethod
    def init(
        categories: tuple[str, ...],
        table: EmbeddingTable,
        rng: Rng,
        d_pos: int = 200,
        hidden: int = 1024,
        d_repr: int = 512,
        m_protos: int = 10,
        d_proto: int = 50,
        dropout: float = 0.1,
        max_tokens: int = MAX_TOKENS,
    ) -> "ProtoModel":
        return ProtoModel(
            encoder=EncoderParams.init(
                rng, d_embed=table.dim, d_pos=d_pos, hidden=hidden, d_repr=d_repr
            ),
            projection=ProjectionNet.init(rng, d_in=d_repr, d_out=d_proto, dropout=dropout),
            bank=PrototypeBank.init(categories, m_protos, d_proto, rng),
            table=table,
            max_tokens=max_tokens,
        )

    def parameters(self) -> dict[str, Value]:
        out = dict(self.encoder.parameters())
        out.update(self.projection.parameters())
        out["prototypes"] = self.bank.matrix
        return out

    def state(self) -> dict[str, np.ndarray]:
        """Full mutable state: trainable tensors plus BN running statistics."""
        out = {name: v.data for name, v in self.parameters().items()}
        out["projection/running_mean"] = self.projection.running_mean
        out["projection/running_var"] = self.projection.running_var
        return out

    def embed_spans(
        self, spans: list[MarkedSpan], train: bool, dropout_stream: np.random.Generator | None = None
    ) -> Value:
        encoded = encode_batch(spans, self.table, self.encoder, self.max_tokens)
        return self.projection.forward(encoded, train, dropout_stream)
