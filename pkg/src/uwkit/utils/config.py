"""Configuration management for uwkit.

Two layers:

- ``CONFIG`` holds process-level settings read at startup from env vars,
  falling back to hardcoded defaults (data root, device, log level).
- ``load_run_config`` builds a ``RunConfig`` for one command. Priority is
  CLI flag > JSON config file > model defaults. Unknown keys are rejected.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from uwkit.exceptions import ConfigError
from uwkit.models.schemas import RunConfig

logger = logging.getLogger(__name__)


def _uwkit_home() -> Path:
    xdg = os.getenv("XDG_DATA_HOME", str(Path.home() / ".local" / "share"))
    return Path(xdg) / "uwkit"


UWKIT_HOME = _uwkit_home()


def _env(name: str, default: str = "") -> str:
    value = os.getenv(name)
    return default if value is None else value


class Config:
    """Process-level configuration.

    Priority: env var > hardcoded default.
    """

    def __init__(self):
        self.data_root = Path(_env("UWKIT_DATA_ROOT", default=str(UWKIT_HOME / "data")))
        self.log_level = _env("UWKIT_LOG_LEVEL", default="INFO")
        self.device = _env("UWKIT_DEVICE", default="cpu")
        self.num_threads = self._read_num_threads()

    @staticmethod
    def _read_num_threads() -> int | None:
        env = _env("UWKIT_NUM_THREADS")
        return int(env) if env else None

    def corpus_path(self, name: str) -> Path:
        """Resolve a corpus name against the data root; absolute paths pass through."""
        path = Path(name)
        return path if path.is_absolute() or path.exists() else self.data_root / name


CONFIG = Config()


def _deep_update(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_update(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: Path) -> dict[str, Any]:
    try:
        document = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return document


def load_run_config(path: Path | None = None, overrides: dict[str, Any] | None = None,
                    base: dict[str, Any] | None = None) -> RunConfig:
    """Resolve a RunConfig: overrides > file values > ``base`` > defaults.

    ``overrides`` is a nested dict, e.g. ``{"seed": 3, "distill": {"alpha": 0.0}}``;
    ``None`` values are ignored so unset CLI flags never clobber the file.
    """
    values: dict[str, Any] = dict(base or {})
    if path:
        values = _deep_update(values, read_config_file(path))
    if overrides:
        values = _deep_update(values, _drop_none(overrides))
    try:
        config = RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration:\n{e}")
    logger.debug(f"Resolved run config: {config.model_dump_json()}")
    return config


def _drop_none(values: dict[str, Any]) -> dict[str, Any]:
    cleaned = {}
    for key, value in values.items():
        if isinstance(value, dict):
            value = _drop_none(value)
            if value:
                cleaned[key] = value
        elif value is not None:
            cleaned[key] = value
    return cleaned
