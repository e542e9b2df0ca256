"""Training configuration: JSON schema with strict validation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field

from ..augment import KINDS
from ..encoder import EncoderConfig
from ..errors import ConfigError
from ..objectives import ABLATION_MODES, LossWeights


@dataclass
class AugConfig:
    menu: list = field(default_factory=lambda: list(KINDS))
    crop_delta: float = 0.8
    reorder_delta: float = 0.2
    mask_gamma: float = 0.3
    insert_ratio: float = 0.2

    def validate(self):
        if not self.menu or any(m not in KINDS for m in self.menu):
            raise ConfigError(f"aug.menu must be a non-empty subset of {KINDS}")
        if not 0 < self.crop_delta <= 1 or not 0 < self.reorder_delta <= 1:
            raise ConfigError("aug.crop_delta and aug.reorder_delta must be in (0, 1]")
        if not 0 < self.mask_gamma < 1:
            raise ConfigError("aug.mask_gamma must be in (0, 1)")
        if not 0 < self.insert_ratio <= 1:
            raise ConfigError("aug.insert_ratio must be in (0, 1]")
        return self


@dataclass
class IntentConfig:
    k: int = 128
    eps: float = 0.05
    iters: int = 3

    def validate(self):
        if self.k < 1 or self.eps <= 0 or self.iters < 1:
            raise ConfigError("intent.k >= 1, intent.eps > 0, intent.iters >= 1 required")
        return self


@dataclass
class OptimConfig:
    lr: float = 0.001
    batch_size: int = 512
    epochs: int = 200
    patience: int = 10

    def validate(self):
        if self.lr <= 0 or self.batch_size < 2 or self.epochs < 1 or self.patience < 0:
            raise ConfigError("optim: lr > 0, batch_size >= 2, epochs >= 1, patience >= 0 required")
        return self


@dataclass
class AblationConfig:
    mode: str = "full"

    def validate(self):
        if self.mode not in ABLATION_MODES:
            raise ConfigError(f"ablation.mode must be one of {ABLATION_MODES}")
        return self


@dataclass
class EvalConfig:
    ks: list = field(default_factory=lambda: [5, 20])
    batch_size: int = 256

    def validate(self):
        if not self.ks or any(k < 1 for k in self.ks) or self.batch_size < 1:
            raise ConfigError("eval.ks must be positive integers")
        return self


@dataclass
class DataConfig:
    prepared: str = ""
    user_fraction: float = 1.0
    subsample_seed: int = 0

    def validate(self):
        if not 0 < self.user_fraction <= 1:
            raise ConfigError("data.user_fraction must be in (0, 1]")
        return self


@dataclass
class TrainConfig:
    seed: int
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/default"
    dtype: str = "float32"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    intent: IntentConfig = field(default_factory=IntentConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be 'float32' or 'float64'")
        for part in (self.data, self.encoder, self.aug, self.intent, self.loss,
                     self.optim, self.ablation, self.eval):
            part.validate()
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["loss"]["lambda"] = d["loss"].pop("lam")
        return d

    def hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes):
        return from_dict({**self.to_dict(), **changes})


# keys whose JSON spelling differs from the attribute
_ALIASES = {LossWeights: {"lambda": "lam"}}


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name: f for f in dataclasses.fields(cls)}
    aliases = _ALIASES.get(cls, {})
    kwargs = {}
    for key, value in raw.items():
        attr = aliases.get(key, key)
        where = f"{path}.{key}" if path else key
        if attr not in names:
            raise ConfigError(f"unknown config key {where!r}")
        hint = hints[attr]
        if dataclasses.is_dataclass(hint):
            kwargs[attr] = _build(hint, value, where)
        else:
            kwargs[attr] = _coerce(hint, value, where)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _coerce(hint, value, where):
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if hint is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    return value


def from_dict(raw):
    if "seed" not in raw:
        raise ConfigError("config: 'seed' is required")
    return _build(TrainConfig, raw, "").validate()


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(raw)


def complexity_budget(config, num_users, epochs):
    """Per-task operation-count terms for one run (``a`` = epochs, ``C`` = 2 classes)."""
    a, L, d = epochs, config.encoder.max_len, config.encoder.d
    K, B, C, U = config.intent.k, config.optim.batch_size, 2, num_users
    terms = {
        "main": a * L * L * U * d,
        "cluster": a * K * U * d,
        "distill": a * B * U * d * d,
        "adversarial": a * C * U * d,
    }
    terms["dominant"] = terms["main"] + terms["distill"]
    return terms
