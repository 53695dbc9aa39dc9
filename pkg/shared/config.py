"""Centralized configuration with sane defaults.
Values can be provided via (in order):
- Environment variables / .env (highest priority for runtime settings)
- a JSON config file passed with --config (run settings)
- Built-in defaults
CLI flags override both layers for run settings.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Type, TypeVar

from dotenv import load_dotenv

from shared.errors import ConfigError

# Ensure .env is loaded for the CLI and scripts as well
load_dotenv(override=False)

DEFAULT_SEED = 20180101

T = TypeVar("T")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


@dataclass(frozen=True)
class RuntimeConfig:
    log_level: str = os.getenv("TRACKREID_LOG_LEVEL", "INFO")
    default_seed: int = _env_int("TRACKREID_SEED", DEFAULT_SEED)
    # 1 keeps the determinism contract the default behaviour
    threads: int = _env_int("TRACKREID_THREADS", 1)
    embedding_db_name: str = os.getenv("TRACKREID_EMBEDDING_DB", "embeddings.db")


CONFIG = RuntimeConfig()


def load_config_file(path: Optional[Path]) -> dict:
    """Load a JSON config file (one object keyed by config field names)."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object at top level")
    return data


def resolve_layers(
    cls: Type[T],
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> T:
    """Build `cls` from defaults < file values < overrides.

    `None` overrides are ignored so unset CLI flags fall through. Unknown
    keys are rejected.
    """
    names = {f.name for f in dataclasses.fields(cls)}
    merged: dict[str, Any] = {}
    for layer in (file_values or {}, overrides or {}):
        unknown = sorted(set(layer) - names)
        if unknown:
            raise ConfigError(f"unknown config keys for {cls.__name__}: {unknown}")
        merged.update({k: v for k, v in layer.items() if v is not None})
    try:
        obj = cls(**merged)
    except TypeError as e:
        raise ConfigError(str(e))
    validate = getattr(obj, "validate", None)
    if callable(validate):
        validate()
    return obj


def dump_config(obj: Any, path: Path) -> None:
    """Write a dataclass config as sorted JSON (provenance for a run)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dataclasses.asdict(obj), f, indent=2, sort_keys=True)
        f.write("\n")
