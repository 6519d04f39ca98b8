"""Flat key=value run configuration.

One schema covers the network and the training loop; files hold `key = value`
lines with `#` comments. Unknown keys are rejected, and every run logs the
fully resolved configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .datasets import DATASET_SPECS
from .network import NetworkConfig

__all__ = ["TrainConfig", "ConfigError", "parse_config_text",
           "parse_overrides", "resolve_config", "config_to_text"]


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # network
    variant: str = "PTN-S"
    n_classes: int = 10
    polar_h: int = 0
    polar_w: int = 0
    max_radius: float = 0.0
    wrap_padding: bool = True
    augment_rotation: bool = False
    origin_shift_frac: float = 0.05
    test_time_rotations: int = 1
    # data
    dataset: str = "rotmnist"
    data_dir: str = "data"
    # optimization
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.dataset not in DATASET_SPECS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected "
                              f"one of {', '.join(DATASET_SPECS)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")

    @property
    def input_size(self):
        return DATASET_SPECS[self.dataset].canvas

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            variant=self.variant,
            input_size=self.input_size,
            n_classes=self.n_classes,
            polar_h=self.polar_h,
            polar_w=self.polar_w,
            max_radius=self.max_radius,
            wrap_padding=self.wrap_padding,
            augment_rotation=self.augment_rotation,
            origin_shift_frac=self.origin_shift_frac,
            test_time_rotations=self.test_time_rotations,
        )


_FIELDS = {f.name: f.type for f in fields(TrainConfig)}


def _convert(key, raw):
    kind = _FIELDS[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def parse_config_text(text):
    """key = value lines -> dict; rejects unknown keys with their location."""
    values = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln}: expected key = value")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def parse_overrides(pairs):
    """CLI key=value override strings -> dict, same schema as the file."""
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = (s.strip() for s in pair.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, raw)
    return values


def resolve_config(path=None, overrides=(), **extra) -> TrainConfig:
    """defaults <- file <- overrides <- keyword extras."""
    values = {}
    if path is not None:
        with open(path) as f:
            values.update(parse_config_text(f.read()))
    values.update(parse_overrides(overrides))
    for key, val in extra.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    return TrainConfig(**values)


def config_to_text(cfg: TrainConfig) -> str:
    lines = ["# resolved run configuration"]
    for f in fields(TrainConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"
