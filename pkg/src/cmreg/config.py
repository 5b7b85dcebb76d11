"""Plain-text ``key=value`` configuration files and dataclass overrides."""
from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {i}: expected key=value")
        k, v = line.split("=", 1)
        k = k.strip()
        if not k:
            raise ConfigError(f"{source}: line {i}: empty key")
        out[k] = v.strip()
    return out


def read_kv(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_kv(path.read_text(), str(path))


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in raw.replace(",", " ").split() if p]
            typ = type(default[0]) if default else float
            return tuple(typ(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def apply_overrides(obj, values: dict, prefix: str):
    """Return a copy of dataclass ``obj`` with ``prefix.field[.sub]`` keys applied.

    Unknown keys under the prefix are an error so typos do not pass silently.
    """
    mine = {k[len(prefix) + 1:]: v for k, v in values.items() if k.startswith(prefix + ".")}
    if not mine:
        return obj
    fields = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    nested = {}
    for k, v in mine.items():
        head, _, rest = k.partition(".")
        if head not in fields:
            raise ConfigError(f"unknown config key {prefix}.{k}")
        if rest:
            nested.setdefault(head, {})[rest] = v
        else:
            changes[head] = _coerce(v, getattr(obj, head), f"{prefix}.{k}")
    for head, sub in nested.items():
        inner = getattr(obj, head)
        if not dataclasses.is_dataclass(inner):
            raise ConfigError(f"config key {prefix}.{head} has no sub-fields")
        changes[head] = apply_overrides(inner, {f"x.{k}": v for k, v in sub.items()}, "x")
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


__all__ = ["ConfigError", "parse_kv", "read_kv", "apply_overrides"]
