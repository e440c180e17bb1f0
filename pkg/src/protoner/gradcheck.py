"""Central finite-difference checking for every autodiff primitive."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Value

__all__ = [
    "finite_difference",
    "check_grad",
    "primitive_checks",
    "run_primitive_suite",
    "full_loss_check",
]


def finite_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function wrt every entry of x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    base = x.astype(np.float64).copy()
    for i in range(base.size):
        xp = base.reshape(-1).copy()
        xm = xp.copy()
        xp[i] += step
        xm[i] -= step
        flat[i] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # the floor absorbs central-difference rounding noise (~1e-11 absolute) on
    # coordinates where the true derivative is exactly zero, e.g. a bias that
    # batch normalization cancels out
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_grad(
    build: Callable[[Sequence[Value]], Value],
    inputs: Sequence[np.ndarray],
    step: float = 1e-5,
) -> float:
    """Max relative error between backward() and finite differences.

    `build` maps parameter Values (one per input array) to a scalar Value.
    """
    worst = 0.0
    for k in range(len(inputs)):
        def scalar_at(x: np.ndarray) -> float:
            vals = [ad.param(inp if i != k else x) for i, inp in enumerate(inputs)]
            return build(vals).item()

        vals = [ad.param(inp) for inp in inputs]
        root = build(vals)
        ad.backward(root)
        analytic = vals[k].grad if vals[k].grad is not None else np.zeros_like(inputs[k])
        numeric = finite_difference(scalar_at, np.asarray(inputs[k], dtype=np.float64), step)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _weighted(rng: np.random.Generator, out_shape: tuple[int, ...]) -> Callable[[Value], Value]:
    """Fixed random projection to a scalar; frozen so FD and backward see one function."""
    w = ad.constant(rng.normal(size=out_shape))
    return lambda v: ad.sum_(ad.mul(v, w))


def _spread(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Random values with pairwise gaps, so argmin/argmax stay put under FD steps."""
    n = int(np.prod(shape))
    base = np.arange(n, dtype=np.float64) * 0.1 - 0.05 * n
    rng.shuffle(base)
    return (base + rng.uniform(-0.02, 0.02, size=n)).reshape(shape)


def primitive_checks(rng: np.random.Generator) -> dict[str, Callable[[], float]]:
    """One finite-difference check per primitive; each returns max relative error."""

    def r(*shape):
        return rng.normal(size=shape)

    def rpos(*shape):
        return rng.uniform(0.5, 2.0, size=shape)

    def wcheck(op, out_shape, inputs):
        w = _weighted(rng, out_shape)
        return lambda: check_grad(lambda v: w(op(v)), inputs)

    checks: dict[str, Callable[[], float]] = {
        "add": wcheck(lambda v: ad.add(v[0], v[1]), (3, 4), [r(3, 4), r(3, 4)]),
        "add_broadcast": wcheck(lambda v: ad.add(v[0], v[1]), (3, 4), [r(3, 4), r(4)]),
        "sub": wcheck(lambda v: ad.sub(v[0], v[1]), (3, 4), [r(3, 4), r(3, 4)]),
        "mul": wcheck(lambda v: ad.mul(v[0], v[1]), (3, 4), [r(3, 4), r(3, 4)]),
        "div": wcheck(lambda v: ad.div(v[0], v[1]), (3, 4), [r(3, 4), rpos(3, 4)]),
        "matmul": wcheck(lambda v: ad.matmul(v[0], v[1]), (3, 2), [r(3, 4), r(4, 2)]),
        "transpose": wcheck(lambda v: ad.transpose(v[0]), (4, 3), [r(3, 4)]),
        "reshape": wcheck(lambda v: ad.reshape(v[0], (4, 3)), (4, 3), [r(3, 4)]),
        "concat": wcheck(lambda v: ad.concat([v[0], v[1]], axis=1), (3, 6), [r(3, 2), r(3, 4)]),
        "slice": wcheck(lambda v: ad.slice_axis(v[0], 1, 1, 3), (3, 2), [r(3, 5)]),
        "tanh": wcheck(lambda v: ad.tanh(v[0]), (3, 4), [r(3, 4)]),
        "sigmoid": wcheck(lambda v: ad.sigmoid(v[0]), (3, 4), [r(3, 4)]),
        "gelu": wcheck(lambda v: ad.gelu(v[0]), (3, 4), [r(3, 4)]),
        "exp": wcheck(lambda v: ad.exp(v[0]), (3, 4), [r(3, 4)]),
        "log": wcheck(lambda v: ad.log(v[0]), (3, 4), [rpos(3, 4)]),
        "sqrt": wcheck(lambda v: ad.sqrt(v[0]), (3, 4), [rpos(3, 4)]),
        "square": wcheck(lambda v: ad.square(v[0]), (3, 4), [r(3, 4)]),
        "softmax": wcheck(lambda v: ad.softmax(v[0], axis=1), (3, 4), [r(3, 4)]),
        "l2_normalize": wcheck(lambda v: ad.l2_normalize(v[0], axis=-1), (3, 4), [r(3, 4) + 0.5]),
        "cosine_similarity": wcheck(
            lambda v: ad.cosine_similarity(v[0], v[1], axis=-1), (3,), [r(3, 4) + 0.3, r(3, 4) - 0.3]
        ),
        "mean": lambda: check_grad(lambda v: ad.mean(v[0]), [r(3, 4)]),
        "mean_axis": wcheck(lambda v: ad.mean(v[0], axis=0), (4,), [r(3, 4)]),
        "sum": lambda: check_grad(lambda v: ad.sum_(v[0]), [r(3, 4)]),
        "sum_axis": wcheck(lambda v: ad.sum_(v[0], axis=1), (3,), [r(3, 4)]),
        "min_over_axis": wcheck(lambda v: ad.min_over_axis(v[0], axis=1), (4,), [_spread(rng, (4, 5))]),
        "max_over_axis": wcheck(lambda v: ad.max_over_axis(v[0], axis=0), (5,), [_spread(rng, (4, 5))]),
    }
    return checks


def run_primitive_suite(rng: np.random.Generator, rel_tol: float = 1e-4) -> list[tuple[str, float, bool]]:
    results = []
    for name, fn in primitive_checks(rng).items():
        err = fn()
        results.append((name, err, err < rel_tol))
    return results


def full_loss_check(
    loss: str = "contrastive",
    n: int = 3,
    m: int = 2,
    k: int = 4,
    dim: int = 8,
    seed: int = 0,
    step: float = 1e-5,
) -> float:
    """Episode-loss gradient vs finite differences through the whole model.

    Builds a tiny encoder + projection + prototype bank over a random
    embedding table, then perturbs every trainable coordinate.  The dropout
    stream is re-seeded identically per evaluation so the masks cancel.
    Returns the worst per-tensor relative error.
    """
    from .embeddings import EmbeddingTable
    from .episodes import EpisodeTask
    from .model import ProtoModel
    from .rng import Rng
    from .spans import MARKER, MarkedSpan
    from .train import MetaConfig, episode_loss

    draw = np.random.default_rng(seed)
    vocab = [f"w{i:02d}" for i in range(16)]
    table = EmbeddingTable(dim=dim, vectors={w: draw.normal(size=dim) for w in vocab})
    categories = tuple(f"cat{i}" for i in range(n))
    support = {}
    for ci, c in enumerate(categories):
        spans = []
        for j in range(k):
            word = vocab[(ci * k + j) % len(vocab)]
            spans.append(
                MarkedSpan(
                    sentence_id=f"s{ci}:{j}",
                    start=1,
                    end=2,
                    tokens=(vocab[j], MARKER, word, vocab[-1 - j]),
                    label=c,
                )
            )
        support[c] = tuple(spans)
    task = EpisodeTask(
        index=0, categories=categories, support=support, validation={}, query={}
    )
    model = ProtoModel.init(
        categories, table, Rng(seed),
        d_pos=4, hidden=5, d_repr=6, m_protos=m, d_proto=dim, dropout=0.1,
    )
    cfg = MetaConfig(loss=loss)

    def evaluate() -> Value:
        return episode_loss(model, task, cfg, np.random.default_rng(seed))

    params = model.parameters()
    ad.zero_grad(params.values())
    root = evaluate()
    ad.backward(root)
    worst = 0.0
    for name, value in params.items():
        analytic = value.grad if value.grad is not None else np.zeros_like(value.data)
        numeric = np.zeros_like(value.data, dtype=np.float64)
        flat = value.data.reshape(-1)
        out = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = evaluate().item()
            flat[i] = orig - step
            down = evaluate().item()
            flat[i] = orig
            out[i] = (up - down) / (2.0 * step)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
