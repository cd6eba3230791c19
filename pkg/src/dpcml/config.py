"""Model configuration: every hyperparameter of the training/evaluation engine."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

SAMPLERS = ("uniform", "popularity", "hard")
DCRS_VARIANTS = ("full", "lower-only", "upper-only", "off")
SCORE_VARIANTS = ("euclidean", "spherical")
EVAL_EXCLUDE_MODES = ("train", "train+valid")


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


@dataclass
class ModelConfig:
    """All knobs of the model and its optimizer.

    Defaults follow the reference hyperparameter protocol: batch size 256,
    100 epochs, embedding dimension 100, 10 sampled negatives per positive,
    diversity weight 10 with band [0.1, 0.5].
    """

    num_user_vectors: int = 5      # vectors per user (C)
    dim: int = 100                 # embedding dimension
    margin: float = 1.0            # safe margin of the hinge ranking loss
    dcrs_weight: float = 10.0      # trade-off weight of the diversity regularizer
    dcrs_lower: float = 0.1        # lower edge of the allowed diversity band
    dcrs_upper: float = 0.5        # upper edge of the allowed diversity band
    num_negatives: int = 10        # sampled negatives per positive
    sampler: str = "uniform"
    dcrs_variant: str = "full"
    variant: str = "euclidean"     # score variant
    radius: float = 1.0            # norm-ball radius (math.inf disables clipping)
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    eval_exclude: str = "train+valid"

    def validate(self) -> "ModelConfig":
        if self.num_user_vectors < 1:
            raise ConfigError("num_user_vectors must be >= 1")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if not self.margin > 0:
            raise ConfigError("margin must be > 0")
        if self.dcrs_weight < 0:
            raise ConfigError("dcrs_weight must be >= 0")
        if self.dcrs_variant not in DCRS_VARIANTS:
            raise ConfigError(f"unknown dcrs_variant {self.dcrs_variant!r}")
        if self.dcrs_variant == "full" and self.dcrs_lower > self.dcrs_upper:
            raise ConfigError(
                f"dcrs_lower={self.dcrs_lower} exceeds dcrs_upper={self.dcrs_upper}"
            )
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.variant not in SCORE_VARIANTS:
            raise ConfigError(f"unknown score variant {self.variant!r}")
        if not self.radius > 0:
            raise ConfigError("radius must be > 0")
        if not self.lr >= 0:
            raise ConfigError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ConfigError("adam_eps must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.eval_exclude not in EVAL_EXCLUDE_MODES:
            raise ConfigError(f"unknown eval_exclude mode {self.eval_exclude!r}")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if math.isinf(d["radius"]):
            d["radius"] = "inf"
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        raw = dict(raw)
        if raw.get("radius") == "inf":
            raw["radius"] = math.inf
        return cls(**raw).validate()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(raw)


# Named presets. "dpcml1"/"dpcml2" are the uniform- and hard-sampling variants
# of the multi-vector model; the "cml-*" presets degenerate to classic
# single-vector collaborative metric learning.
PRESETS: dict[str, dict] = {
    "dpcml1": {"sampler": "uniform", "num_user_vectors": 5, "dcrs_weight": 10.0},
    "dpcml2": {"sampler": "hard", "num_user_vectors": 5, "dcrs_weight": 10.0,
               "num_negatives": 10},
    "cml-uniform": {"sampler": "uniform", "num_user_vectors": 1, "dcrs_weight": 0.0,
                    "dcrs_variant": "off"},
    "cml-hard": {"sampler": "hard", "num_user_vectors": 1, "dcrs_weight": 0.0,
                 "dcrs_variant": "off"},
}


def preset_config(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    merged = dict(PRESETS[name])
    merged.update(overrides)
    return ModelConfig(**merged).validate()
