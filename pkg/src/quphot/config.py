"""Flat declarative run configuration with explicit units in every key."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUTDIR_ENV = "QUPHOT_OUTDIR"


class ConfigError(ValueError):
    """Malformed configuration or flags (CLI exit status 2)."""


@dataclass(frozen=True)
class Option:
    name: str
    type: type
    default: object = None
    help: str = ""
    choices: tuple | None = None

    @property
    def flag(self):
        return "--" + self.name.replace("_", "-")


def _coerce(option, value):
    if value is None:
        return None
    if option.type is bool:
        if isinstance(value, bool):
            return value
        text = str(value).lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{option.name}: expected a boolean, got {value!r}")
    try:
        if option.type is int and isinstance(value, float):
            if not value.is_integer():
                raise ValueError
            value = int(value)
        elif option.type is int and isinstance(value, str):
            value = int(float(value)) if float(value).is_integer() else int(value)
        else:
            value = option.type(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{option.name}: cannot read {value!r} as {option.type.__name__}") from None
    if option.choices and value not in option.choices:
        raise ConfigError(f"{option.name}: {value!r} not in {option.choices}")
    return value


def load_file(path):
    """Read a flat TOML file; nested tables are rejected."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: nested table [{key}] not allowed; keys must be flat")
    return data


def resolve(options, file_values, flag_values):
    """Defaults, then config-file values, then explicit flags."""
    known = {o.name: o for o in options}
    unknown = sorted(set(file_values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    params = {o.name: o.default for o in options}
    for key, value in file_values.items():
        params[key] = _coerce(known[key], value)
    for key, value in flag_values.items():
        if value is not None:
            params[key] = _coerce(known[key], value)
    return params


def preset_path(name):
    """Path of a preset shipped with the package (``name`` without .toml)."""
    ref = resources.files("quphot") / "presets" / f"{name}.toml"
    if not ref.is_file():
        raise ConfigError(f"no preset named {name!r}")
    return str(ref)


def default_outdir():
    return os.environ.get(OUTDIR_ENV, ".")
