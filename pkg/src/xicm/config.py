"""Flat key=value configuration with provenance.

Keys use section dots (``gateway.timeout``).  Resolution precedence is
flag > environment > file > default, and every resolved value remembers
where it came from so ``--print-config`` can show a provenance dump.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import ConfigError

# key -> (default, type)
SCHEMA: dict[str, tuple[Any, type]] = {
    "seed": (7, int),
    "k": (18, int),
    "feature_mode": ("vis_out+lang", str),
    "epsilon": (0.01, float),
    "dataset": ("", str),
    "features": ("", str),
    "predictor": ("", str),
    "gateway.endpoint": ("", str),
    "gateway.model": ("", str),
    "gateway.api_key": ("", str),
    "gateway.temperature": (0.0, float),
    "gateway.max_output_tokens": (512, int),
    "gateway.timeout": (30.0, float),
    "gateway.max_retries": (3, int),
    "gateway.concurrency": (4, int),
    "bench.tasks": ("unseen", str),
    "bench.runs": (3, int),
    "bench.rollouts": (25, int),
    "bench.selection": ("dynamics", str),
    "bench.backend": ("echo_nearest", str),
    "cache_dir": ("", str),
}

ENV_MAP = {
    "gateway.endpoint": "XICM_LLM_ENDPOINT",
    "gateway.model": "XICM_LLM_MODEL",
    "gateway.api_key": "XICM_LLM_API_KEY",
}

_SECRET_KEYS = {"gateway.api_key"}


def _coerce(key: str, raw: Any) -> Any:
    want = SCHEMA[key][1]
    if isinstance(raw, want):
        return raw
    text = str(raw).strip()
    try:
        if want is int:
            return int(text)
        if want is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {want.__name__})") from exc


def parse_config_file(path: str | Path) -> dict[str, Any]:
    """Read ``key=value`` lines; '#' starts a comment; unknown keys error."""
    values: dict[str, Any] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


@dataclass
class ResolvedValue:
    value: Any
    source: str  # default | file | env | flag


class CliConfig:
    """Merged configuration view with per-key provenance."""

    def __init__(self, resolved: dict[str, ResolvedValue]):
        self._resolved = resolved

    def __getitem__(self, key: str) -> Any:
        return self._resolved[key].value

    def get(self, key: str, default: Any = None) -> Any:
        entry = self._resolved.get(key)
        return default if entry is None else entry.value

    def source(self, key: str) -> str:
        return self._resolved[key].source

    def provenance_dump(self) -> str:
        lines = []
        for key in sorted(self._resolved):
            entry = self._resolved[key]
            value = "<redacted>" if key in _SECRET_KEYS and entry.value else entry.value
            lines.append(f"{key}={value}  # {entry.source}")
        return "\n".join(lines)

    @classmethod
    def resolve(
        cls,
        file_path: str | Path | None = None,
        flag_values: dict[str, Any] | None = None,
        env: dict[str, str] | None = None,
    ) -> "CliConfig":
        env = os.environ if env is None else env
        file_values = parse_config_file(file_path) if file_path else {}
        flag_values = flag_values or {}
        resolved: dict[str, ResolvedValue] = {}
        for key, (default, _) in SCHEMA.items():
            value, source = default, "default"
            if key in file_values:
                value, source = file_values[key], "file"
            env_name = ENV_MAP.get(key)
            if env_name and env.get(env_name):
                value, source = _coerce(key, env[env_name]), "env"
            if key in flag_values and flag_values[key] is not None:
                value, source = _coerce(key, flag_values[key]), "flag"
            resolved[key] = ResolvedValue(value, source)
        return cls(resolved)


def parse_overrides(pairs: list[str]) -> dict[str, Any]:
    """Positional ``key=value`` overrides (treated as flags)."""
    out: dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, raw = (part.strip() for part in pair.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out
