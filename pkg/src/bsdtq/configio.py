"""JSON <-> config-dataclass conversion with field-level diagnostics.

Config documents are plain JSON objects mirroring the config dataclasses.
Errors name the offending field with a dotted path so CLI users can find
it, e.g. ``config.boost.shrinkage: expected a number``.
"""

from __future__ import annotations

import types
import typing
from dataclasses import MISSING, fields, is_dataclass

from .errors import ConfigError

__all__ = ["config_from_dict", "config_to_dict"]


def config_from_dict(cls, doc, path: str = "config"):
    """Build a config dataclass from a parsed JSON object."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
    kwargs = {}
    for f in fields(cls):
        if f.name in doc:
            kwargs[f.name] = _coerce(hints[f.name], doc[f.name], f"{path}.{f.name}")
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ConfigError(f"{path}.{f.name}: required field missing")
    try:
        return cls(**kwargs)
    except ValueError as err:
        raise ConfigError(f"{path}: {err}") from err


def _coerce(hint, value, path: str):
    origin = typing.get_origin(hint)
    if origin is typing.Union or isinstance(hint, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            if len(args) == len(typing.get_args(hint)):
                raise ConfigError(f"{path}: null not allowed")
            return None
        return _coerce(args[0], value, path)
    if is_dataclass(hint):
        return config_from_dict(hint, value, path)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected an array")
        item_hints = typing.get_args(hint)
        item_hint = item_hints[0] if item_hints else str
        return tuple(_coerce(item_hint, v, f"{path}[{i}]")
                     for i, v in enumerate(value))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported config field type {hint!r}")


def config_to_dict(cfg) -> dict:
    """Inverse of :func:`config_from_dict`; output is JSON-serializable."""
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if is_dataclass(value):
            out[f.name] = config_to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out
