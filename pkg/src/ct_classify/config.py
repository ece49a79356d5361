"""TOML configuration loading with per-module sections.

A config file groups options under ``[imaging]``, ``[augment]``, and
``[train]`` tables whose keys mirror the corresponding dataclass fields.
Command-line flags always take precedence over file values.
"""

from __future__ import annotations

from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KNOWN_SECTIONS = ("imaging", "augment", "train")


def load_config(path) -> dict:
    """Parse a TOML config file into a dict of section dicts."""
    raw = Path(path).read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ValueError(f"invalid config file {path}: {exc}") from exc
    for section in data:
        if section not in KNOWN_SECTIONS:
            raise ValueError(
                f"unknown config section [{section}] in {path}; "
                f"expected one of {', '.join(KNOWN_SECTIONS)}")
        if not isinstance(data[section], dict):
            raise ValueError(f"config section [{section}] must be a table")
    return data


def merged_value(flag_value, config: dict, section: str, key: str, default):
    """Resolve one option: explicit flag, then config file, then default."""
    if flag_value is not None:
        return flag_value
    if section in config and key in config[section]:
        return config[section][key]
    return default
