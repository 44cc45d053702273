"""Model and training configuration, JSON-round-trippable."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Everything that determines parameter shapes and the training run.

    ``visual_feature_dim`` is the width of the precomputed per-image
    token rows; it may stay 0 for views with no visual feature and must
    be positive otherwise. ``mask_mode`` selects how the per-sample mask
    count is drawn: ``fixed`` takes floor(ratio * observed) with a
    minimum of one, ``bernoulli`` flips a ratio-weighted coin per
    feature.
    """

    d_model: int
    n_layers: int
    n_heads: int
    ff_dim: int
    n_visual_in: int = 256
    n_visual_latent: int = 32
    visual_feature_dim: int = 0
    mask_ratio: float = 0.15
    mask_mode: str = "fixed"
    seed: int = 0
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 64
    checkpoint_every: int = 0  # 0 keeps only the final checkpoint

    def __post_init__(self) -> None:
        for name in ("d_model", "n_layers", "n_heads", "ff_dim",
                     "n_visual_in", "n_visual_latent", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio must be in (0, 1)")
        if self.mask_mode not in ("fixed", "bernoulli"):
            raise ConfigError(f"unknown mask_mode {self.mask_mode!r}")
        if self.visual_feature_dim < 0:
            raise ConfigError("visual_feature_dim must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")


def config_to_doc(config: ModelConfig) -> dict:
    return asdict(config)


def config_from_doc(doc: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    try:
        return ModelConfig(**doc)
    except TypeError as exc:  # missing required key
        raise ConfigError(str(exc)) from exc


def loads_config(text: str) -> ModelConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return config_from_doc(doc)


def dumps_config(config: ModelConfig) -> str:
    return json.dumps(config_to_doc(config), indent=2, sort_keys=True) + "\n"
