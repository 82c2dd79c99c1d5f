"""Canonical key/value text serialization.

A record is a header line ``@TypeName`` followed by one ``key=value``
line per field, in declaration order. Nested records are flattened with
a dotted prefix (``policy.sensitivity_level=3``). Records in a stream are
separated by a blank line.

Value encoding:

* booleans: ``true`` / ``false``
* integers: decimal; floats: Python ``repr`` (round-trips exactly)
* enums: their value
* embeddings: comma-separated float reprs
* jurisdiction sets: sorted comma-separated codes; the wildcard is ``*``
* strings: backslash escapes for ``\\``, newline and carriage return
* ``None``: the key is omitted

Field names are part of the format and never change.
"""

from __future__ import annotations

import dataclasses
import enum
import typing
from collections.abc import Iterable, Mapping
from typing import Any

import numpy as np

from .errors import ValidationError
from .model import ALL, AllJurisdictions

__all__ = ["register", "dumps", "loads", "dumps_many", "loads_many", "encode_record", "parse_records"]

_REGISTRY: dict[str, type] = {}


def register(cls: type) -> type:
    """Make a dataclass (de)serializable under its class name."""
    _REGISTRY[cls.__name__] = cls
    return cls


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "\\" and i + 1 < len(s):
            nxt = s[i + 1]
            out.append({"n": "\n", "r": "\r", "\\": "\\"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _encode_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return _encode_value(value.value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, str):
        return _escape(value)
    if isinstance(value, AllJurisdictions):
        return "*"
    if isinstance(value, np.ndarray):
        return ",".join(repr(float(x)) for x in value)
    if isinstance(value, (set, frozenset)):
        return ",".join(_escape(str(v)) for v in sorted(value))
    if isinstance(value, (list, tuple)):
        return ",".join(_escape(str(v)) for v in value)
    raise TypeError(f"cannot encode {type(value).__name__}")


def _flatten(obj: Any, prefix: str = "") -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    if dataclasses.is_dataclass(obj):
        items = [(f.name, getattr(obj, f.name)) for f in dataclasses.fields(obj)]
    else:
        items = list(obj.items())
    for name, value in items:
        key = prefix + name
        if value is None:
            continue
        if dataclasses.is_dataclass(value) or isinstance(value, Mapping):
            pairs.extend(_flatten(value, key + "."))
        else:
            pairs.append((key, _encode_value(value)))
    return pairs


def encode_record(type_name: str, fields: Mapping[str, Any] | Any) -> str:
    lines = [f"@{type_name}"]
    lines.extend(f"{k}={v}" for k, v in _flatten(fields))
    return "\n".join(lines) + "\n"


def dumps(obj: Any) -> str:
    if not dataclasses.is_dataclass(obj):
        raise TypeError("dumps expects a dataclass instance")
    return encode_record(type(obj).__name__, obj)


def dumps_many(objs: Iterable[Any]) -> str:
    return "\n".join(dumps(o) for o in objs)


def parse_records(text: str) -> list[tuple[str, dict[str, str]]]:
    """Split ``text`` into ``(type_name, {key: raw_value})`` pairs."""
    records: list[tuple[str, dict[str, str]]] = []
    current: dict[str, str] | None = None
    # only \n delimits lines; str.splitlines would also split on \x1c-\x1e, \x85, \u2028 ...
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            current = None
            continue
        if line.startswith("@"):
            current = {}
            records.append((line[1:].strip(), current))
            continue
        if current is None:
            raise ValidationError(f"line {lineno}: field outside of a record")
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"line {lineno}: expected key=value")
        key = key.strip()
        if key in current:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        current[key] = value
    return records


def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValidationError(f"expected true/false, got {raw!r}")


def decode_value(tp: Any, raw: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        non_none = [a for a in args if a is not type(None)]
        if AllJurisdictions in non_none:
            return ALL if raw == "*" else frozenset(_unescape(x) for x in raw.split(",") if x)
        return decode_value(non_none[0], raw)
    try:
        if tp is bool:
            return _parse_bool(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return _unescape(raw)
        if tp is np.ndarray:
            return np.array([float(x) for x in raw.split(",")], dtype=np.float64)
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            return tp(raw)
        if origin in (frozenset, set):
            return frozenset(_unescape(x) for x in raw.split(",") if x)
        if origin in (tuple, list):
            items = [x for x in raw.split(",") if x]
            inner = args[0] if args else str
            return tuple(decode_value(inner, x) for x in items)
    except ValueError as exc:
        raise ValidationError(f"cannot decode {raw!r} as {tp}: {exc}")
    raise TypeError(f"unsupported field type {tp!r}")


def _build(cls: type, flat: Mapping[str, str], prefix: str = "") -> Any:
    hints = typing.get_type_hints(cls)
    kwargs: dict[str, Any] = {}
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        key = prefix + f.name
        inner = [a for a in typing.get_args(tp) if a is not type(None)]
        base = inner[0] if typing.get_origin(tp) is typing.Union and len(inner) == 1 else tp
        if dataclasses.is_dataclass(base):
            sub_prefix = key + "."
            if any(k.startswith(sub_prefix) for k in flat):
                kwargs[f.name] = _build(base, flat, sub_prefix)
            continue
        if typing.get_origin(base) in (Mapping, dict) or base is Mapping:
            sub_prefix = key + "."
            vtype = typing.get_args(base)[1] if typing.get_args(base) else str
            kwargs[f.name] = {
                k[len(sub_prefix):]: decode_value(vtype, v) for k, v in flat.items() if k.startswith(sub_prefix)
            }
            continue
        if key in flat:
            kwargs[f.name] = decode_value(tp, flat[key])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"incomplete {cls.__name__} record: {exc}")


def loads_many(text: str) -> list[Any]:
    out = []
    for type_name, flat in parse_records(text):
        cls = _REGISTRY.get(type_name)
        if cls is None:
            raise ValidationError(f"unknown record type {type_name!r}")
        out.append(_build(cls, flat))
    return out


def loads(text: str) -> Any:
    objs = loads_many(text)
    if len(objs) != 1:
        raise ValidationError(f"expected exactly one record, found {len(objs)}")
    return objs[0]


def build(cls: type, flat: Mapping[str, str]) -> Any:
    """Construct ``cls`` from an already-parsed flat record."""
    return _build(cls, flat)


def _register_model_types() -> None:
    from . import model

    for cls in (model.PolicyProfile, model.AgentProfile, model.Chunk, model.Subscription, model.PolicyDecision):
        register(cls)


_register_model_types()
