"""Run configuration: explicit hyperparameter records plus a flat-key
structured-text config file format (``section.key = value``, one per line,
``#`` comments). Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .losses import LossConfig


@dataclass(frozen=True)
class TrainConfig:
    """Every training hyperparameter, serializable as flat keys."""

    epochs: int = 100
    batch_size: int = 32          # paper-scale default is 256
    lr: float = 2e-3
    beta1: float = 0.91
    beta2: float = 0.9993
    eps: float = 1e-8
    weight_decay: float = 0.01    # unspecified upstream; decoupled, configurable
    warmup_fraction: float = 0.10
    tau: float = 0.07
    lam: float = 0.2
    K: float = 0.1
    d: int = 64
    heads: int = 4
    layers: int = 2
    seed: int = 0
    c_init: float = 1.0
    shared_encoder: bool = False

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("TrainConfig: betas must lie in (0, 1)")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ConfigError("TrainConfig: warmup_fraction must be in [0, 1)")
        if not (self.lr > 0):
            raise ConfigError("TrainConfig: lr must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("TrainConfig: epochs and batch_size must be >= 1")
        if self.d < 1 or self.heads < 1 or self.layers < 0:
            raise ConfigError("TrainConfig: invalid model dimensions")
        if self.d % self.heads != 0:
            raise ConfigError("TrainConfig: d must be divisible by heads")
        if not (self.c_init > 0 and np.isfinite(self.c_init)):
            raise ConfigError("TrainConfig: c_init must be finite and > 0")
        # alpha init is 1/sqrt(d); tau/lam/K validated via LossConfig
        try:
            self.loss_config()
        except UsageError as e:
            raise ConfigError(str(e)) from e

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, lam=self.lam, K=self.K)

    @property
    def alpha_init(self) -> float:
        return 1.0 / np.sqrt(self.d)


@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale synthetic paired-hierarchy dataset description."""

    n_classes: int = 16
    captions_per_class: int = 4
    L_t: int = 8
    L_p: int = 16
    width: int = 64
    snr: float = 4.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "captions_per_class", "L_t", "L_p", "width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"SynthSpec: {name} must be >= 1")
        if not self.snr > 0:
            raise ConfigError("SynthSpec: snr must be > 0")  # snr=inf means no noise


_SECTIONS = {"train": TrainConfig, "synth": SynthSpec}
# loss.* keys alias into TrainConfig for convenience
_LOSS_ALIASES = {"loss.tau": "train.tau", "loss.lambda": "train.lam",
                 "loss.k": "train.K"}


def _coerce(raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as bool")
    try:
        return target_type(raw)
    except ValueError as e:
        raise ConfigError(f"cannot parse {raw!r} as {target_type.__name__}") from e


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a flat dict; duplicate keys rejected."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    synth: SynthSpec

    @staticmethod
    def from_flat(flat: dict[str, str]) -> "RunConfig":
        kwargs: dict[str, dict] = {name: {} for name in _SECTIONS}
        for key, raw in flat.items():
            key = _LOSS_ALIASES.get(key, key)
            if "." not in key:
                raise ConfigError(f"unknown key {key!r} (expected section.key)")
            section, sub = key.split(".", 1)
            if (section, sub) not in _FIELD_TYPES:
                raise ConfigError(f"unknown key {key!r}")
            kwargs[section][sub] = _coerce(raw, _FIELD_TYPES[(section, sub)])
        return RunConfig(train=TrainConfig(**kwargs["train"]),
                         synth=SynthSpec(**kwargs["synth"]))

    @staticmethod
    def from_file(path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return RunConfig.from_flat(parse_config_text(fh.read()))

    def to_flat(self) -> dict[str, str]:
        flat: dict[str, str] = {}
        for section, obj in (("train", self.train), ("synth", self.synth)):
            for f in dataclasses.fields(obj):
                flat[f"{section}.{f.name}"] = repr(getattr(obj, f.name))
        return flat


# resolve concrete field types once (dataclass .type may be a string)
_FIELD_TYPES: dict[tuple[str, str], type] = {}
for _section, _klass in _SECTIONS.items():
    _hints = typing.get_type_hints(_klass)
    for _f in dataclasses.fields(_klass):
        _FIELD_TYPES[(_section, _f.name)] = _hints[_f.name]
