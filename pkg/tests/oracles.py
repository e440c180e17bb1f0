"""Independent reference implementations used only by tests.

Each oracle is written against the documented behavior, deliberately
structured differently from the library code it checks (explicit loops,
different accumulation order, or a closed-form solve).
"""

from __future__ import annotations

import numpy as np


def pagerank_power_oracle(
    vertices: tuple[str, ...],
    weights: np.ndarray,
    damping: float = 0.85,
    iters: int = 2000,
    tol: float = 1e-13,
) -> dict[str, float]:
    """Per-edge power iteration with explicit loops; renormalizes at the end."""
    n = len(vertices)
    out_weight = [float(sum(weights[i])) for i in range(n)]
    x = [1.0 / n] * n
    teleport = (1.0 - damping) / n
    for _ in range(iters):
        nxt = [teleport] * n
        for i in range(n):
            if out_weight[i] == 0.0:
                continue  # isolated vertex: its mass leaks, teleport only
            for j in range(n):
                if weights[i][j] != 0.0:
                    nxt[j] += damping * x[i] * float(weights[i][j]) / out_weight[i]
        if sum(abs(a - b) for a, b in zip(nxt, x)) < tol:
            x = nxt
            break
        x = nxt
    total = sum(x)
    return {v: x[i] / total for i, v in enumerate(vertices)}


def pagerank_solve_oracle(
    vertices: tuple[str, ...], weights: np.ndarray, damping: float = 0.85
) -> dict[str, float]:
    """Closed-form fixed point: solve (I - d P^T) x = (1-d)/n, then normalize."""
    n = len(vertices)
    degree = weights.sum(axis=1)
    p = np.zeros((n, n))
    rows = degree > 0
    p[rows] = weights[rows] / degree[rows, None]
    x = np.linalg.solve(np.eye(n) - damping * p.T, np.full(n, (1.0 - damping) / n))
    x = x / x.sum()
    return dict(zip(vertices, x.tolist()))


def span_loss_double_loop(
    spans: np.ndarray, prototypes: np.ndarray, k_shots: int, eps: float = 1e-12
) -> float:
    """Naive per-span, per-prototype evaluation of the alignment loss.

    ``spans``: (N*K, d) vectors ordered in category blocks of K, so span j's
    gold category is j // K; ``prototypes``: (N, M, d).  For each category c,
    min-pool squared cosine distance over its M prototypes, then take
    [(1/K) * sum over c's own block] / [sum over all spans + eps].
    Everything is explicit Python loops.
    """

    def cos(a: np.ndarray, b: np.ndarray) -> float:
        na = max(float(np.sqrt((a * a).sum())), 1e-12)
        nb = max(float(np.sqrt((b * b).sum())), 1e-12)
        return float((a * b).sum()) / (na * nb)

    n_categories, n_protos, _ = prototypes.shape
    total = 0.0
    for cat in range(n_categories):
        pooled = []
        for j in range(spans.shape[0]):
            dists = [(1.0 - cos(prototypes[cat, m], spans[j])) ** 2 for m in range(n_protos)]
            pooled.append(min(dists))
        own = sum(pooled[j] for j in range(cat * k_shots, (cat + 1) * k_shots))
        total += (own / k_shots) / (sum(pooled) + eps)
    return total
