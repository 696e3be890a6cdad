"""Flat ``key = value`` config files, overrides, and config hashing."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import ConfigError


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse UTF-8 text of `key = value` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}: line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}: line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    path = Path(path)
    return parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))


def apply_overrides(cfg: dict[str, str], sets) -> dict[str, str]:
    """Apply repeatable `--set key=value` overrides after file parsing."""
    out = dict(cfg)
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def reject_unknown(cfg: dict, known, context: str):
    """Unknown keys are config errors: they are almost always typos."""
    unknown = sorted(set(cfg) - set(known))
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}; known keys: {sorted(known)}")


def config_hash(cfg: dict) -> str:
    """Short digest over the sorted key=value pairs."""
    canon = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def get_int(cfg: dict, key: str, default=None) -> int:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required integer key {key!r}")
        return default
    try:
        return int(str(cfg[key]))
    except ValueError:
        raise ConfigError(f"key {key!r} must be an integer, got {cfg[key]!r}")


def get_float(cfg: dict, key: str, default=None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required numeric key {key!r}")
        return default
    try:
        return float(str(cfg[key]))
    except ValueError:
        raise ConfigError(f"key {key!r} must be a number, got {cfg[key]!r}")


def get_bool(cfg: dict, key: str, default: bool) -> bool:
    if key not in cfg:
        return default
    value = str(cfg[key]).lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise ConfigError(f"key {key!r} must be a boolean, got {cfg[key]!r}")


def get_str(cfg: dict, key: str, default=None) -> str:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    return str(cfg[key])


def get_float_list(cfg: dict, key: str, default=None) -> list[float]:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required list key {key!r}")
        return list(default)
    try:
        return [float(v) for v in str(cfg[key]).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"key {key!r} must be a comma-separated number list, got {cfg[key]!r}")
