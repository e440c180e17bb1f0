"""Run configuration: one JSON file describing an end-to-end experiment.

The file is a flat JSON object with three nested sections, all optional;
missing fields take the defaults below.  ``ablation`` switches exactly
one ingredient off so comparison runs differ in a single knob.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import MAX_TOKENS
from .train import MetaConfig

ABLATIONS = ("none", "single-proto", "ce-loss", "hard-neg-off")
POOLINGS = ("max", "mean")


@dataclass(frozen=True)
class DimsConfig:
    """Model width knobs; defaults match the full-size configuration."""

    d_pos: int = 200
    hidden: int = 1024
    d_repr: int = 512
    m_protos: int = 10
    d_proto: int = 50
    dropout: float = 0.1
    max_tokens: int = MAX_TOKENS

    def __post_init__(self) -> None:
        for name in ("d_pos", "hidden", "d_repr", "m_protos", "d_proto", "max_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    """Everything a pipeline run needs beyond the input file paths."""

    seed: int = 42
    ways: int | None = None  # None trains over every category in the pools
    k_shots: int = 10
    val_shots: int | None = None  # None falls back to k_shots
    query_shots: int | None = None
    episode_count: int = 200
    support_ratio: float = 0.7
    depth_limit: int = 3
    min_freq: int = 100
    exclude_unknown: bool = False
    pooling: str = "max"
    ablation: str = "none"
    dims: DimsConfig = field(default_factory=DimsConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)

    def __post_init__(self) -> None:
        if self.k_shots < 1 or self.episode_count < 1:
            raise ValueError("k_shots and episode_count must be >= 1")
        if self.ways is not None and self.ways < 2:
            raise ValueError("ways must be >= 2 when given")
        if not 0.3 <= self.support_ratio <= 0.8:
            raise ValueError("support_ratio must lie in [0.3, 0.8]")
        if self.depth_limit < 1 or self.min_freq < 1:
            raise ValueError("depth_limit and min_freq must be >= 1")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")

    def resolved(self) -> "RunConfig":
        """Apply the ablation switch; exactly one field changes."""
        if self.ablation == "single-proto":
            return dataclasses.replace(
                self, dims=dataclasses.replace(self.dims, m_protos=1)
            )
        if self.ablation == "ce-loss":
            return dataclasses.replace(
                self, meta=dataclasses.replace(self.meta, loss="ce")
            )
        if self.ablation == "hard-neg-off":
            return dataclasses.replace(
                self, meta=dataclasses.replace(self.meta, hard_negatives=False)
            )
        return self


def config_to_dict(config: RunConfig) -> dict:
    out = dataclasses.asdict(config)
    return out


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    unknown = set(data) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    if "dims" in data:
        data["dims"] = DimsConfig(**data["dims"])
    if "meta" in data:
        data["meta"] = MetaConfig(**data["meta"])
    return RunConfig(**data)


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a JSON object")
    return config_from_dict(data)


def save_config(config: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path
