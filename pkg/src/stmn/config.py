"""Run configuration: JSON sections validated into dataclasses.

Defaults follow the reference recipe (Adam 1e-4 with betas 0.9/0.999,
x0.1 every 50 epochs for 200 epochs, 8 identities x 4 sequences, M=10,
N=5, alpha=0.3, L=6). ``benchmark_config`` is the shorter desk-scale
schedule used by the ablation and acceptance runs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import EncoderConfig
from .synth_data import SynthConfig


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class ModelSection:
    D: int = 64
    M: int = 10
    N: int = 5
    L: int = 6
    stem_channels: tuple[int, ...] = (16, 32, 64)
    stem_strides: tuple[int, ...] = (2, 2, 1)


@dataclass
class LossSection:
    alpha: float = 0.3
    margin: float = 0.3


@dataclass
class OptimSection:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_every: int = 50
    decay_factor: float = 0.1
    epochs: int = 200
    memory_lr_mult: float = 1.0  # learning-rate multiplier for memory keys and values


@dataclass
class BatchSection:
    P: int = 8
    S: int = 4


@dataclass
class VariantSection:
    enable_sm: bool = True
    enable_tm: bool = True
    enable_spread: bool = True
    mlp_baseline: bool = False


@dataclass
class TrainSection:
    flip_prob: float = 0.5
    erase_prob: float = 0.5
    checkpoint_every: int = 50


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    optim: OptimSection = field(default_factory=OptimSection)
    data: SynthConfig = field(default_factory=SynthConfig)
    batch: BatchSection = field(default_factory=BatchSection)
    variant: VariantSection = field(default_factory=VariantSection)
    train: TrainSection = field(default_factory=TrainSection)
    seed: int = 0

    def encoder_config(self) -> EncoderConfig:
        c, h, w = self.data.image_size
        return EncoderConfig(in_channels=c, input_hw=(h, w), stem_channels=self.model.stem_channels,
                             stem_strides=self.model.stem_strides, D=self.model.D)

    def dataset_config(self) -> SynthConfig:
        """Synthetic data settings with the run seed substituted (one seed drives everything)."""
        return dataclasses.replace(self.data, seed=self.seed)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, SynthConfig):
                out[f.name] = {k: v for k, v in value.to_dict().items() if k != "seed"}
            elif dataclasses.is_dataclass(value):
                out[f.name] = {k: list(v) if isinstance(v, tuple) else v
                               for k, v in dataclasses.asdict(value).items()}
            else:
                out[f.name] = value
        return out

    def with_variant(self, **flags) -> "RunConfig":
        return dataclasses.replace(self, variant=dataclasses.replace(self.variant, **flags))

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, seed=seed)


_SECTIONS = {
    "model": ModelSection,
    "loss": LossSection,
    "optim": OptimSection,
    "data": SynthConfig,
    "batch": BatchSection,
    "variant": VariantSection,
    "train": TrainSection,
}


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return tuple(value)
    return value


def _build_section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(name, "section must be an object")
    defaults = cls() if cls is not SynthConfig else SynthConfig()
    allowed = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown key")
        if cls is SynthConfig and key == "seed":
            raise ConfigError("data.seed", "data generation follows the top-level seed")
        kwargs[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key))
    try:
        return dataclasses.replace(defaults, **kwargs)
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from exc


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    kwargs = {}
    for key, value in raw.items():
        if key == "seed":
            kwargs["seed"] = _coerce("seed", value, 0)
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value)
        else:
            raise ConfigError(key, "unknown key")
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    m, o, b, l = cfg.model, cfg.optim, cfg.batch, cfg.loss
    for key, value in (("model.D", m.D), ("model.M", m.M), ("model.N", m.N), ("model.L", m.L)):
        if value < 1:
            raise ConfigError(key, "must be positive")
    if o.lr <= 0:
        raise ConfigError("optim.lr", "must be positive")
    if not (0 <= o.beta1 < 1 and 0 <= o.beta2 < 1):
        raise ConfigError("optim.beta1", "betas must lie in [0, 1)")
    if o.epochs < 0:
        raise ConfigError("optim.epochs", "must be non-negative")
    if o.memory_lr_mult <= 0:
        raise ConfigError("optim.memory_lr_mult", "must be positive")
    if o.decay_every < 1:
        raise ConfigError("optim.decay_every", "must be positive")
    if b.P < 2:
        raise ConfigError("batch.P", "need at least two identities per batch")
    if b.S < 2:
        raise ConfigError("batch.S", "need at least two sequences per identity")
    if b.P > cfg.data.n_train_identities:
        raise ConfigError("batch.P", "exceeds the number of training identities")
    if l.alpha < 0:
        raise ConfigError("loss.alpha", "must be non-negative")
    if l.margin < 0:
        raise ConfigError("loss.margin", "must be non-negative")
    if cfg.variant.enable_tm and cfg.variant.mlp_baseline:
        raise ConfigError("variant.mlp_baseline", "cannot be combined with enable_tm")
    if cfg.train.checkpoint_every < 1:
        raise ConfigError("train.checkpoint_every", "must be positive")
    try:
        cfg.encoder_config()
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    return config_from_dict(raw)


def benchmark_config(seed: int = 0) -> RunConfig:
    """Desk-scale schedule for the synthetic benchmark."""
    return RunConfig(
        optim=OptimSection(lr=1e-3, epochs=150, decay_every=100, memory_lr_mult=10.0),
        train=TrainSection(checkpoint_every=1000),
        seed=seed,
    )
