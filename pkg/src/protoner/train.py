"""First-order meta-training over episodic tasks.

Each outer epoch fine-tunes a clone of the shared parameters on one task's
support set (cosine-decayed learning rate, global gradient clipping), then
moves the shared parameters a fraction of the way toward the fine-tuned
ones and re-normalizes the prototype rows.  Early stopping tracks
validation macro-F1 and keeps the best weights.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .episodes import CategoryPools, EpisodeTask, sample_episodes
from .evaluate import macro_f1, predict_spans
from .model import (
    ProtoModel,
    cross_entropy_loss,
    predict_scores,
    proto_repulsion_loss,
    span_alignment_loss,
)
from .rng import Rng
from .spans import MarkedSpan

log = logging.getLogger(__name__)

LOSSES = ("contrastive", "ce")
OPTIMIZERS = ("adam", "sgd")


class NonFiniteLossError(RuntimeError):
    """Episode produced a NaN or infinite loss; the episode is abandoned."""


@dataclass
class MetaConfig:
    inner_epochs: int = 5
    inner_lr: float = 5e-4
    meta_step: float = 0.4
    clip_norm: float = 1.0
    outer_epochs: int = 200
    patience: int = 20
    optimizer: str = "adam"
    loss: str = "contrastive"
    hard_negatives: bool = True
    hard_negative_threshold: float = 0.5
    hard_negative_fraction: float = 0.3

    def __post_init__(self) -> None:
        if self.inner_epochs < 1:
            raise ValueError("inner_epochs must be >= 1")
        if not 0.0 <= self.meta_step <= 1.0:
            raise ValueError("meta_step must lie in [0, 1]")
        if self.inner_lr <= 0 or self.clip_norm <= 0:
            raise ValueError("inner_lr and clip_norm must be positive")
        if self.outer_epochs < 1 or self.patience < 1:
            raise ValueError("outer_epochs and patience must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.hard_negative_threshold <= 0:
            raise ValueError("hard_negative_threshold must be positive")
        if not 0.0 < self.hard_negative_fraction <= 1.0:
            raise ValueError("hard_negative_fraction must lie in (0, 1]")


def cosine_lr(base: float, epoch: int, total: int) -> float:
    """Decay from ``base`` at epoch 0 toward zero over ``total`` epochs."""
    return base * (1.0 + math.cos(math.pi * epoch / total)) / 2.0


# ---------------------------------------------------------------------------
# optimizers


class Sgd:
    def __init__(self) -> None:
        pass

    def step(self, params: dict[str, ad.Value], grads: dict[str, np.ndarray], lr: float) -> None:
        for name, value in params.items():
            value.data -= lr * grads[name]


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, ad.Value], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        for name, value in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(value.data)
                self.v[name] = np.zeros_like(value.data)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            value.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str):
    return Adam() if name == "adam" else Sgd()


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so the global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# parameter state trees


def get_state(model: ProtoModel) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in model.state().items()}


def set_state(model: ProtoModel, state: dict[str, np.ndarray]) -> None:
    current = model.state()
    if set(current) != set(state):
        raise ValueError(
            f"state trees differ: {sorted(set(current) ^ set(state))}"
        )
    for name, value in model.parameters().items():
        if value.data.shape != state[name].shape:
            raise ValueError(
                f"{name}: shape {state[name].shape} != expected {value.data.shape}"
            )
        np.copyto(value.data, state[name])
    model.projection.running_mean = state["projection/running_mean"].copy()
    model.projection.running_var = state["projection/running_var"].copy()


def reptile_update(
    model: ProtoModel,
    state_before: dict[str, np.ndarray],
    state_after: dict[str, np.ndarray],
    alpha: float,
) -> None:
    """Move toward the fine-tuned state by ``alpha``, then renormalize prototypes.

    alpha=1 copies the fine-tuned state exactly and alpha=0 restores the
    starting state exactly; both bypass interpolation arithmetic.
    """
    if set(state_before) != set(state_after):
        raise ValueError("state trees differ in parameter names")
    for name in state_before:
        if state_before[name].shape != state_after[name].shape:
            raise ValueError(
                f"{name}: shape {state_after[name].shape} != {state_before[name].shape}"
            )
    if alpha == 1.0:
        new = state_after
    elif alpha == 0.0:
        new = state_before
    else:
        new = {
            name: state_before[name] + alpha * (state_after[name] - state_before[name])
            for name in state_before
        }
    set_state(model, new)
    model.bank.renormalize()


# ---------------------------------------------------------------------------
# inner loop


def task_support_spans(task: EpisodeTask) -> tuple[list[MarkedSpan], int]:
    """Support spans flattened in task category order; returns (spans, k)."""
    sizes = {len(task.support[c]) for c in task.categories}
    if len(sizes) != 1:
        raise ValueError(f"uneven support sizes: {sorted(sizes)}")
    k = sizes.pop()
    spans = [s for c in task.categories for s in task.support[c]]
    return spans, k


def episode_loss(
    model: ProtoModel,
    task: EpisodeTask,
    cfg: MetaConfig,
    dropout_stream: np.random.Generator,
) -> ad.Value:
    spans, k = task_support_spans(task)
    z = model.embed_spans(spans, train=True, dropout_stream=dropout_stream)
    gathered = model.bank.gather(task.categories)
    n, m = len(task.categories), model.bank.m
    if cfg.loss == "ce":
        return cross_entropy_loss(gathered, z, n, m, k)
    align = span_alignment_loss(gathered, z, n, m, k)
    return ad.add(align, proto_repulsion_loss(model.bank.matrix))


def inner_loop(
    model: ProtoModel,
    task: EpisodeTask,
    cfg: MetaConfig,
    rng: Rng,
    stream_prefix: str = "meta",
    epochs: int | None = None,
) -> list[float]:
    """Fine-tune the model in place on one task's support set.

    Returns the per-epoch loss trace.  ``epochs=0`` is a test hook that
    leaves the model untouched.
    """
    epochs = cfg.inner_epochs if epochs is None else epochs
    optimizer = make_optimizer(cfg.optimizer)
    params = model.parameters()
    losses: list[float] = []
    for epoch in range(epochs):
        lr = cosine_lr(cfg.inner_lr, epoch, epochs)
        stream = rng.stream(f"{stream_prefix}/dropout/task{task.index:03d}/epoch{epoch}")
        loss = episode_loss(model, task, cfg, stream)
        if not np.isfinite(loss.data):
            raise NonFiniteLossError(
                f"task {task.index}: non-finite loss {loss.data!r} at inner epoch {epoch}"
            )
        ad.zero_grad(params.values())
        ad.backward(loss)
        grads = {
            name: (v.grad if v.grad is not None else np.zeros_like(v.data))
            for name, v in params.items()
        }
        clip_gradients(grads, cfg.clip_norm)
        optimizer.step(params, grads, lr)
        losses.append(float(loss.data))
    return losses


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class TrainResult:
    best_f1: float
    best_epoch: int
    epochs_run: int
    history: list[dict] = field(default_factory=list)
    notice: str | None = None


def validation_examples(pools: CategoryPools) -> list[tuple[MarkedSpan, str]]:
    return [
        (span, category)
        for category in pools.categories()
        for span in pools.validation[category]
    ]


def _validation_f1(model: ProtoModel, examples: list[tuple[MarkedSpan, str]]) -> float:
    predictions, _ = predict_spans(model, [s for s, _ in examples])
    return macro_f1(predictions, [g for _, g in examples], model.bank.categories)


def _task_schedule(n_tasks: int, outer_epochs: int, rng: Rng, stream_prefix: str) -> list[int]:
    """Visit every task once per pass, in a sampled order, until the budget."""
    order: list[int] = []
    passes = 0
    while len(order) < outer_epochs:
        perm = rng.stream(f"{stream_prefix}/order{passes}").permutation(n_tasks)
        order.extend(int(i) for i in perm)
        passes += 1
    return order[:outer_epochs]


def meta_train(
    model: ProtoModel,
    tasks: list[EpisodeTask],
    val_examples: list[tuple[MarkedSpan, str]],
    cfg: MetaConfig,
    rng: Rng,
    stream_prefix: str = "meta",
    log_path: str | Path | None = None,
) -> TrainResult:
    """Outer loop: fine-tune on a task, interpolate, validate, keep the best."""
    if not tasks:
        raise ValueError("need at least one task")
    if not val_examples:
        raise ValueError("validation set is empty")
    schedule = _task_schedule(len(tasks), cfg.outer_epochs, rng, stream_prefix)
    best_f1 = -math.inf
    best_epoch = -1
    best_state = get_state(model)
    since_improvement = 0
    history: list[dict] = []
    log_file = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        epochs_run = 0
        for outer, task_index in enumerate(schedule):
            task = tasks[task_index]
            state_before = get_state(model)
            record: dict = {"epoch": outer, "task": task.index, "lr": cfg.inner_lr}
            try:
                losses = inner_loop(model, task, cfg, rng, stream_prefix)
            except NonFiniteLossError as err:
                log.error("aborting episode: %s", err)
                set_state(model, state_before)
                record["aborted"] = str(err)
                losses = []
            else:
                state_after = get_state(model)
                reptile_update(model, state_before, state_after, cfg.meta_step)
            val_f1 = _validation_f1(model, val_examples)
            record["losses"] = losses
            record["val_f1"] = val_f1
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
            epochs_run = outer + 1
            if val_f1 > best_f1:
                best_f1, best_epoch = val_f1, outer
                best_state = get_state(model)
                since_improvement = 0
            else:
                since_improvement += 1
                if since_improvement >= cfg.patience:
                    break
    finally:
        if log_file:
            log_file.close()
    set_state(model, best_state)
    return TrainResult(best_f1=best_f1, best_epoch=best_epoch, epochs_run=epochs_run, history=history)


# ---------------------------------------------------------------------------
# hard negatives


def mine_hard_negatives(
    model: ProtoModel,
    pools: CategoryPools,
    threshold: float = 0.5,
    fraction: float = 0.3,
) -> tuple[CategoryPools, str | None]:
    """Resample support pools so confidently misclassified spans recur.

    A span is a hard negative of its gold category when the model predicts
    a different category with pooled cosine score >= threshold.  Each
    affected category's support pool is rebuilt with round(fraction * size)
    slots holding its hard negatives (repeated if few), the rest keeping
    the original spans in order.  Pool sizes never change.
    """
    new_support: dict[str, tuple[MarkedSpan, ...]] = {}
    total_hard = 0
    for category in pools.categories():
        pool = pools.support[category]
        if not pool:
            new_support[category] = pool
            continue
        predictions, vectors = predict_spans(model, list(pool))
        scores = predict_scores(vectors, model.bank.matrix.data, model.bank.m)
        hard = [
            (float(scores[i].max()), i)
            for i, pred in enumerate(predictions)
            if pred != category and float(scores[i].max()) >= threshold
        ]
        if not hard:
            new_support[category] = pool
            continue
        hard.sort(key=lambda pair: (-pair[0], pair[1]))
        total_hard += len(hard)
        n = len(pool)
        k = min(n, max(1, round(fraction * n)))
        hard_spans = {pool[i] for _, i in hard}
        rest = [s for s in pool if s not in hard_spans]
        # widen the hard block when the survivors cannot fill the pool
        k = max(k, n - len(rest))
        chosen = [pool[hard[i % len(hard)][1]] for i in range(k)]
        new_support[category] = tuple((chosen + rest)[:n])
    if total_hard == 0:
        return pools, "no hard negatives found; support pools unchanged"
    return (
        CategoryPools(pools.r_train, new_support, pools.validation, pools.query),
        None,
    )


def run_training(
    model: ProtoModel,
    pools: CategoryPools,
    cfg: MetaConfig,
    rng: Rng,
    k_shots: int,
    episode_count: int = 200,
    log_path: str | Path | None = None,
    val_shots: int | None = None,
    query_shots: int | None = None,
) -> TrainResult:
    """Full training profile: meta-train, then one hard-negative round if enabled.

    ``val_shots``/``query_shots`` default to what the smallest per-category
    pool can supply, capped at ``k_shots``.
    """
    n_ways = len(pools.categories())
    if val_shots is None:
        val_shots = min(k_shots, min(len(v) for v in pools.validation.values()))
    if query_shots is None:
        query_shots = min(k_shots, min(len(v) for v in pools.query.values()))
    tasks = sample_episodes(
        pools, n_ways, k_shots, episode_count, rng,
        val_shots=val_shots, query_shots=query_shots,
    )
    val_examples = validation_examples(pools)
    result = meta_train(model, tasks, val_examples, cfg, rng, "meta", log_path)
    if not cfg.hard_negatives:
        return result
    resampled, notice = mine_hard_negatives(
        model, pools, cfg.hard_negative_threshold, cfg.hard_negative_fraction
    )
    if notice is not None:
        log.info("%s", notice)
        result.notice = notice
        return result
    best_state = get_state(model)
    tasks2 = sample_episodes(
        resampled, n_ways, k_shots, episode_count, rng,
        val_shots=val_shots, query_shots=query_shots,
        stream_prefix="episodes-hardneg",
    )
    second = meta_train(model, tasks2, val_examples, cfg, rng, "meta-hardneg")
    history = result.history + [
        {**record, "round": "hard-negative"} for record in second.history
    ]
    if second.best_f1 > result.best_f1:
        return TrainResult(
            best_f1=second.best_f1,
            best_epoch=result.epochs_run + second.best_epoch,
            epochs_run=result.epochs_run + second.epochs_run,
            history=history,
        )
    set_state(model, best_state)
    return TrainResult(
        best_f1=result.best_f1,
        best_epoch=result.best_epoch,
        epochs_run=result.epochs_run + second.epochs_run,
        history=history,
    )
