from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from retemp.errors import ConfigError

ABLATIONS = ("dynamic", "relation-aware", "skip")
DECODERS = ("convtranse", "distmult")
COMPOSITIONS = ("sum", "mult")
PRECISIONS = ("f32", "f64")
ATTENTION_MODES = ("vector", "scalar")


@dataclass
class TrainConfig:
    dim: int = 200
    history_length: int = 3
    layers: int = 2
    dropout: float = 0.2
    lr: float = 1e-3
    epochs: int = 30
    patience: int = 5
    seed: int = 0
    ablate: tuple[str, ...] = ()
    decoder: str = "convtranse"
    composition: str = "sum"
    channels: int = 50
    kernel_size: int = 3
    decoder_bias: bool = True
    attention: str = "vector"
    single_phase: bool = False
    precision: str = "f64"
    rrelu_lower: float = 1 / 8
    rrelu_upper: float = 1 / 3

    def __post_init__(self):
        self.ablate = tuple(sorted(set(self.ablate)))
        self.validate()

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.history_length < 1:
            raise ConfigError(f"history_length must be >= 1, got {self.history_length}")
        if self.layers < 0:
            raise ConfigError(f"layers must be >= 0, got {self.layers}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be a positive odd number, got {self.kernel_size}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if not 0 < self.rrelu_lower <= self.rrelu_upper < 1:
            raise ConfigError("rrelu bounds must satisfy 0 < lower <= upper < 1")
        for name, value, allowed in [("decoder", self.decoder, DECODERS),
                                     ("composition", self.composition, COMPOSITIONS),
                                     ("precision", self.precision, PRECISIONS),
                                     ("attention", self.attention, ATTENTION_MODES)]:
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        bad = set(self.ablate) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown ablation(s) {sorted(bad)}; expected {ABLATIONS}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def has(self, ablation: str) -> bool:
        return ablation in self.ablate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablate"] = list(self.ablate)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        d = dict(d)
        if "ablate" in d:
            d["ablate"] = tuple(d["ablate"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def with_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    d = config.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)


CONFIG_KEYS = tuple(f.name for f in fields(TrainConfig))
