"""Run configuration files and their digests.

A config file is JSON with a schema version and optional ``model`` and
``train`` sections::

    {"schema_version": 1,
     "model": {"recursion_depth": 4, "block_kind": "se"},
     "train": {"epochs": 300, "learning_rate": 1e-4, "lr_decay": {"factor": 0.5, "every_n_epochs": 100}}}

Unknown keys anywhere are errors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

SCHEMA_VERSION = 1
_TOP_KEYS = {"schema_version", "model", "train"}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "model": self.model.to_dict(), "train": self.train.to_dict()}

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(obj) -> str:
    """Short sha256 of the canonical JSON form."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def parse_config(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {d.get('schema_version')!r}")
    try:
        model = ModelConfig.from_dict(d.get("model", {}))
        train = TrainConfig.from_dict(d.get("train", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(model, train)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return parse_config(raw)


def with_overrides(cfg: RunConfig, model: dict | None = None, train: dict | None = None) -> RunConfig:
    """Apply flag overrides (None values are ignored) and re-validate."""
    m = {**cfg.model.to_dict(), **{k: v for k, v in (model or {}).items() if v is not None}}
    t = {**cfg.train.to_dict(), **{k: v for k, v in (train or {}).items() if v is not None}}
    return parse_config({"schema_version": SCHEMA_VERSION, "model": m, "train": t})
