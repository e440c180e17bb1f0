"""Deterministic, named random streams built on the counter-based Philox generator."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Value, param

__all__ = ["Rng", "xavier_uniform"]


@dataclass(frozen=True)
class Rng:
    """Seeded source of independent named streams.

    Streams are derived from (seed, name), so adding draws to one stage can
    never perturb another. Philox is counter-based and platform-stable:
    identical seeds produce identical streams everywhere.
    """

    seed: int
    algorithm: str = "philox"

    def stream(self, name: str) -> np.random.Generator:
        digest = hashlib.sha256(name.encode("utf-8")).digest()
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest[:16], "little")]
        if self.algorithm != "philox":
            raise ValueError(f"unknown rng algorithm: {self.algorithm!r}")
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def xavier_uniform(
    stream: np.random.Generator,
    fan_in: int,
    fan_out: int,
    shape: tuple[int, ...] | None = None,
) -> Value:
    """Trainable tensor with entries uniform in +-sqrt(6 / (fan_in + fan_out)).

    `shape` defaults to (fan_in, fan_out).
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"xavier_uniform: fans must be >= 1, got ({fan_in}, {fan_out})")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return param(stream.uniform(-bound, bound, size=shape))
