"""Model and run configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Dimensions, beam widths and optimisation settings.

    Defaults give 150-unit LSTMs, 50-dimensional word and character
    projections, a 100-dimensional alignment space, beams of 5, mini-batches
    of 40 pairs, 100 NCE negatives and a patience of 5 epochs.
    """

    d_lstm: int = 150
    d_sw: int = 50
    d_tw: int = 50
    d_sc: int = 50
    d_tc: int = 50
    d_z: int = 100
    k_w: int = 5
    k_c: int = 5
    batch_size: int = 40
    nce_negatives: int = 100
    nce_threshold: int = 5000
    patience_epochs: int = 5
    max_epochs: int = 100
    learning_rate: float = 0.2
    lr_decay_patience: int = 2
    grad_clip: float = 5.0
    init_scale: float = 0.1
    forget_bias: float = 1.0
    seed: int = 0
    max_word_len: int = 64
    max_sent_len: int = 128
    supervision_weight: float = 1.0
    min_count: int = 2
    distill_epochs: int = 500
    distill_lr: float = 0.01
    length_normalize: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("d_lstm", "d_sw", "d_tw", "d_sc", "d_tc", "d_z", "batch_size",
                     "nce_negatives", "max_word_len", "max_sent_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.k_w < 1 or self.k_c < 1:
            raise ConfigError("beam widths must be >= 1")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        if self.patience_epochs < 1:
            raise ConfigError("patience_epochs must be >= 1")
        if self.learning_rate < 0 or self.supervision_weight < 0:
            raise ConfigError("learning_rate and supervision_weight must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def halved(self) -> "ModelConfig":
        """Same settings with every layer size halved."""
        return self.replace(
            d_lstm=self.d_lstm // 2, d_sw=self.d_sw // 2, d_tw=self.d_tw // 2,
            d_sc=self.d_sc // 2, d_tc=self.d_tc // 2, d_z=self.d_z // 2,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RunConfig:
    """Model settings plus the files a training run reads and writes."""

    train_src: str
    train_tgt: str
    dev_src: str
    dev_tgt: str
    checkpoint_dir: str
    mode: str = "char"
    alignments: str | None = None
    vocab_dir: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self, check_paths=True):
        if self.mode not in ("word", "char"):
            raise ConfigError(f"mode must be 'word' or 'char', got {self.mode!r}")
        if check_paths:
            for name in ("train_src", "train_tgt", "dev_src", "dev_tgt", "alignments"):
                path = getattr(self, name)
                if path is not None and not Path(path).is_file():
                    raise ConfigError(f"{name}: no such file {path}")
            if self.vocab_dir is not None and not Path(self.vocab_dir).is_dir():
                raise ConfigError(f"vocab_dir: no such directory {self.vocab_dir}")
        return self

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        model = ModelConfig.from_dict(data.pop("model", {}))
        try:
            run = cls(model=model, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return run

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self):
        out = {name: getattr(self, name) for name in
               ("train_src", "train_tgt", "dev_src", "dev_tgt", "checkpoint_dir",
                "mode", "alignments", "vocab_dir")}
        out["model"] = self.model.to_dict()
        return out
