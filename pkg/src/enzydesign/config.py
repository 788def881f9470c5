"""Model hyperparameters shared across the enzyme and substrate modules."""
from __future__ import annotations

from dataclasses import dataclass, asdict, fields


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d: int = 64
    num_heads: int = 4
    attention_sublayers: int = 6
    interleave_period: int = 2          # neighborhood sub-layer after each block
    k_neighbors: int = 30
    substrate_layers: int = 3
    substrate_feature_dim: int = 5
    max_len: int = 512
    ffn_multiplier: int = 4
    coord_loss_weight: float = 1.0      # weight on the squared coordinate residual
    layer_norm_eps: float = 1e-5
    bond_length: float = 3.75
    knn_mode: str = "dynamic"           # or "frozen"
    freeze_motif_coords: bool = False

    def validate(self) -> "ModelConfig":
        if self.d % self.num_heads != 0:
            raise ConfigError(
                f"d={self.d} not divisible by num_heads={self.num_heads}")
        if self.interleave_period < 1:
            raise ConfigError("interleave_period must be >= 1")
        if self.interleave_period > self.attention_sublayers:
            raise ConfigError(
                f"interleave_period={self.interleave_period} exceeds "
                f"attention_sublayers={self.attention_sublayers}")
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")
        if self.knn_mode not in ("dynamic", "frozen"):
            raise ConfigError(f"unknown knn_mode {self.knn_mode!r}")
        if self.coord_loss_weight < 0:
            raise ConfigError("coord_loss_weight must be >= 0")
        return self

    @property
    def neighborhood_sublayers(self) -> int:
        return self.attention_sublayers // self.interleave_period

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()
