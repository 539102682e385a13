"""Declarative ``key = value`` configuration files."""

from __future__ import annotations

import ast
import os
from dataclasses import fields

from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _value(raw: str):
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key.replace("-", "_")] = _value(raw)
    return out


def load_config(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, str) else f"{k} = {v}\n" for k, v in values.items())


MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"n_tokens"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def split_config(values: dict, extra_keys=()) -> tuple[dict, dict, dict]:
    """Partition into model settings, train settings and command settings.

    Unknown keys are an error so typos do not pass silently.
    """
    model, train, other = {}, {}, {}
    for key, val in values.items():
        if key in MODEL_KEYS:
            model[key] = val
        elif key in TRAIN_KEYS:
            train[key] = val
        elif key in extra_keys:
            other[key] = val
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return model, train, other
