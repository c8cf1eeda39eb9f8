"""Plain-text ``key = value`` configuration files.

Lines starting with ``#`` are comments, lists are comma separated. Parsing is
delegated to :mod:`configparser` with an implicit top-level section.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError

_SECTION = "config"


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#",), interpolation=None, delimiters=("=", ":")
    )
    try:
        parser.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return dict(parser[_SECTION])


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_kv(text, source=str(path))


def check_keys(values: dict, allowed, source: str = "config") -> None:
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"{source}: unknown keys {', '.join(unknown)}")


def as_float(values: dict, key: str, default=None) -> float:
    if key not in values:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return float(default)
    try:
        return float(values[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {values[key]!r}") from exc


def as_int(values: dict, key: str, default=None) -> int:
    if key not in values:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return int(default)
    try:
        return int(values[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {values[key]!r}") from exc


def as_list(values: dict, key: str, convert=str, default=None) -> list:
    if key not in values:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return list(default)
    items = [item.strip() for item in values[key].split(",") if item.strip()]
    try:
        return [convert(item) for item in items]
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {values[key]!r}") from exc
