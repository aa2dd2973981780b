"""Flat ``key = value`` configuration: defaults < file < command line."""

from __future__ import annotations

import os
from typing import Iterable, Mapping, Optional

from .augmentation import MixupConfig
from .losses import LossConfig
from .training import TrainConfig

DATA_DEFAULTS = {"split_seed": 42, "test_ratio": 0.2, "label_column": ""}


class ConfigError(ValueError):
    """Unknown key or badly typed value."""


def defaults() -> dict:
    out = dict(TrainConfig().flat())
    out.update(DATA_DEFAULTS)
    return out


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key] = value
    return values


def parse_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), path)


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        out[key] = value
    return out


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    return raw


def resolve(*layers: Optional[Mapping]) -> dict:
    """Merge layers over the defaults; later layers win."""
    base = defaults()
    for layer in layers:
        for key, raw in (layer or {}).items():
            if key not in base:
                raise ConfigError(f"unknown config key {key!r}")
            base[key] = _coerce(key, raw, base[key])
    return base


def train_config(resolved: Mapping) -> TrainConfig:
    top, loss, mix = {}, {}, {}
    for key, value in resolved.items():
        if key.startswith("loss."):
            loss[key[5:]] = value
        elif key.startswith("mixup."):
            mix[key[6:]] = value
        elif key not in DATA_DEFAULTS:
            top[key] = value
    try:
        return TrainConfig(loss=LossConfig(**loss), mixup=MixupConfig(**mix), **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def render(resolved: Mapping) -> str:
    return "\n".join(f"{k} = {v}" for k, v in resolved.items())
