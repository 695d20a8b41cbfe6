"""Model and training configuration records.

Both records are frozen dataclasses that round-trip through plain JSON
dictionaries; unknown keys are rejected so typos in config files surface early.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

ENCODERS = ("paper-backbone", "tiny")
ORIENTATIONS = ("current_queries_previous", "previous_queries_current")
PICK_MODES = ("random_k_of_m", "fixed_last_k")


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int] = (224, 224)
    feature_channels: int = 320
    feature_grid: tuple[int, int] = (14, 14)
    n_prev_pool: int = 4
    n_prev_pick: int = 2
    attention_heads: int = 4
    attention_depth: int = 1
    attention_orientation: str = "current_queries_previous"
    kernel_size: int = 3
    use_tpe: bool = True
    use_man: bool = True
    use_dcn: bool = True
    use_contour_loss: bool = True
    image_only: bool = False
    beta: float = 1.0
    n_c: int = 128
    symmetric_contour: bool = False
    encoder: str = "paper-backbone"
    encoder_widths: tuple[int, ...] = (16, 24, 32)
    decoder_channels: int = 32

    def __post_init__(self) -> None:
        # JSON gives lists; normalise to tuples so equality and hashing work.
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "feature_grid", tuple(int(v) for v in self.feature_grid))
        object.__setattr__(self, "encoder_widths", tuple(int(v) for v in self.encoder_widths))
        self.validate()

    def validate(self) -> None:
        counts = {
            "feature_channels": self.feature_channels,
            "n_prev_pool": self.n_prev_pool,
            "n_prev_pick": self.n_prev_pick,
            "attention_heads": self.attention_heads,
            "attention_depth": self.attention_depth,
            "kernel_size": self.kernel_size,
            "n_c": self.n_c,
            "decoder_channels": self.decoder_channels,
        }
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.n_prev_pick > self.n_prev_pool:
            raise ConfigError(
                f"n_prev_pick ({self.n_prev_pick}) exceeds n_prev_pool ({self.n_prev_pool})"
            )
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.feature_channels % self.attention_heads:
            raise ConfigError(
                f"attention_heads ({self.attention_heads}) must divide "
                f"feature_channels ({self.feature_channels})"
            )
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.attention_orientation not in ORIENTATIONS:
            raise ConfigError(f"attention_orientation must be one of {ORIENTATIONS}")
        if len(self.input_size) != 2 or len(self.feature_grid) != 2:
            raise ConfigError("input_size and feature_grid must be (height, width) pairs")
        for size, grid in zip(self.input_size, self.feature_grid):
            if size < 1 or grid < 1 or size % grid:
                raise ConfigError(
                    f"input_size {self.input_size} must be a multiple of feature_grid {self.feature_grid}"
                )
        strides = {s // g for s, g in zip(self.input_size, self.feature_grid)}
        if len(strides) != 1:
            raise ConfigError("input_size/feature_grid must give the same stride on both axes")
        stride = strides.pop()
        if stride & (stride - 1):
            raise ConfigError(f"encoder stride {stride} must be a power of two")
        if self.encoder == "paper-backbone" and stride != 16:
            raise ConfigError("paper-backbone geometry is fixed at stride 16")

    @property
    def stride(self) -> int:
        return self.input_size[0] // self.feature_grid[0]

    @property
    def head_dim(self) -> int:
        return self.feature_channels // self.attention_heads

    @classmethod
    def tiny(cls, **overrides: Any) -> "ModelConfig":
        """Desk-scale configuration: small from-scratch encoder, 32 channels."""
        base = dict(
            encoder="tiny",
            feature_channels=32,
            attention_heads=4,
            encoder_widths=(8, 16, 24),
            decoder_channels=16,
        )
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        return cls(**_checked_keys(cls, data))


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    learning_rate: float = 0.0001
    batch_size: int = 4
    momentum: float = 0.9
    weight_decay: float = 0.0001
    seed: int = 0
    pick_mode: str = "random_k_of_m"
    lr_schedule: str = "constant"

    def __post_init__(self) -> None:
        if self.iterations < 0 or int(self.iterations) != self.iterations:
            raise ConfigError("iterations must be a non-negative integer")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        for name in ("learning_rate", "momentum", "weight_decay"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be finite and non-negative, got {value}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.pick_mode not in PICK_MODES:
            raise ConfigError(f"pick_mode must be one of {PICK_MODES}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be 'constant' or 'cosine'")

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        return cls(**_checked_keys(cls, data))


def _checked_keys(cls: type, data: dict[str, Any]) -> dict[str, Any]:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return dict(data)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def load_config_file(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    """Read a JSON file with optional ``model`` and ``train`` sections.

    A flat file is also accepted: keys are routed to whichever record owns them.
    """
    raw = json.loads(Path(path).read_text())
    return split_config_dict(raw)


def split_config_dict(raw: dict[str, Any]) -> tuple[ModelConfig, TrainConfig]:
    if "model" in raw or "train" in raw:
        model_raw = dict(raw.get("model", {}))
        train_raw = dict(raw.get("train", {}))
    else:
        model_keys = {f.name for f in dataclasses.fields(ModelConfig)} | {"preset"}
        train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(raw) - model_keys - train_keys
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        model_raw = {k: v for k, v in raw.items() if k in model_keys}
        train_raw = {k: v for k, v in raw.items() if k in train_keys}
    preset = model_raw.pop("preset", None)
    if preset == "tiny":
        model = ModelConfig.tiny(**model_raw)
    elif preset in (None, "full"):
        model = ModelConfig.from_dict(model_raw)
    else:
        raise ConfigError(f"unknown model preset {preset!r}")
    return model, TrainConfig.from_dict(train_raw)
