"""Flat ``key = value`` config files.

Blank lines and lines starting with ``#`` are ignored. Values are kept as
strings here; callers coerce them against their dataclass field types with
:func:`coerce_into`.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def read_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def write_config(path, values: dict) -> None:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def _coerce(value: str, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("none", ""):
            return None
        return _coerce(value, args[0])
    if origin in (tuple, list):
        (inner, *_rest) = typing.get_args(tp) or (str,)
        items = [v.strip() for v in value.strip("()[]").split(",") if v.strip()]
        return tuple(_coerce(v, inner) for v in items)
    if tp is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if tp in (int, float, str):
        try:
            return tp(value)
        except ValueError as exc:
            raise ConfigError(f"cannot parse {value!r} as {tp.__name__}") from exc
    return value


def coerce_into(cls, values: dict, *, strict: bool = False):
    """Build dataclass ``cls`` from string ``values``; unknown keys are dropped
    unless ``strict``."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if strict and unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            continue
        kwargs[key] = _coerce(value, hints[key]) if isinstance(value, str) else value
    return cls(**kwargs)
