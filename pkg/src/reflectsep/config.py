"""Engine configuration and its flat ``key = value`` file format.

Grammar, one entry per line::

    # comment
    key = value

Blank lines and ``#`` comments are ignored. Values are parsed according to the
field type: ``true/false/yes/no/1/0`` for booleans, ``none`` (or empty) for
optional fields. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, fields

from .errors import ConfigError
from .losses import LossWeights

BACKBONE_ENV = "REFLECTSEP_BACKBONE_WEIGHTS"


@dataclass
class EngineConfig:
    iterations: int = 5000
    learning_rate: float = 1e-4
    # None: alpha shares learning_rate
    alpha_learning_rate: typing.Optional[float] = None
    alpha_init: float = 0.1
    image_size: int = 224
    seed: int = 0
    backbone_weights_path: typing.Optional[str] = None
    backbone_source: str = "places365"

    lambda1: float = 0.1
    lambda2: float = 0.1
    lambda3: float = 1.0
    omega1: float = 0.1
    omega2: float = 0.1
    gamma1: float = 0.005
    gamma2: float = 0.001
    scales: int = 3

    base_channels: int = 32
    depth: int = 5
    norm_kind: str = "batch"
    skip: bool = True

    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-2

    disable_alpha: bool = False
    disable_exclusion: bool = False
    disable_cross: bool = False
    disable_reg: bool = False
    disable_embedding: bool = False

    device: str = "cpu"
    log_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0.0 < self.alpha_init < 0.5:
            raise ConfigError("alpha_init must lie in (0, 0.5)")
        if self.image_size < 32 or self.image_size % (2 ** self.depth):
            raise ConfigError(f"image_size must be a positive multiple of {2 ** self.depth}")
        if self.backbone_source not in ("places365", "imagenet", "random"):
            raise ConfigError("backbone_source must be places365, imagenet or random")
        try:
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_weights(self) -> LossWeights:
        """Loss weights with the ablation switches applied."""
        return LossWeights(
            lambda1=0.0 if self.disable_exclusion else self.lambda1,
            lambda2=0.0 if self.disable_cross else self.lambda2,
            lambda3=0.0 if self.disable_reg else self.lambda3,
            omega1=self.omega1,
            omega2=self.omega2,
            gamma1=self.gamma1,
            gamma2=self.gamma2,
            scales=self.scales,
        )

    def replace(self, **changes) -> "EngineConfig":
        unknown = set(changes) - field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def field_names() -> set[str]:
    return {f.name for f in fields(EngineConfig)}


_TYPES = typing.get_type_hints(EngineConfig)


def parse_value(key: str, text: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    tp = _TYPES[key]
    text = text.strip()
    optional = typing.get_origin(tp) is typing.Union and type(None) in typing.get_args(tp)
    if optional:
        if text.lower() in ("", "none", "null"):
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    try:
        if tp is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} (expected {tp.__name__})") from None


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        out[key] = parse_value(key, value)
    return out


def read_config_file(path: str | os.PathLike) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            try:
                values[key] = parse_value(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return values


def dump_config(cfg: EngineConfig, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in cfg.to_dict().items():
            fh.write(f"{key} = {'none' if value is None else value}\n")


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> EngineConfig:
    """Defaults, then the config file, then ``overrides`` (highest precedence)."""
    values = {}
    if path is not None:
        values.update(read_config_file(path))
    if overrides:
        unknown = set(overrides) - field_names()
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(overrides)
    if values.get("backbone_weights_path") is None and os.environ.get(BACKBONE_ENV):
        values["backbone_weights_path"] = os.environ[BACKBONE_ENV]
    return EngineConfig(**values)
