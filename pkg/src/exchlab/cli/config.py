"""Configuration handling for the experiment runner.

One JSON file describes a run; command-line flags override individual
keys one-to-one via dotted paths. Every key must already exist in the
subcommand's default tree, so typos fail fast with a message naming the
offending key. Subtrees whose legal contents depend on another key (for
example free-form model-parameter bags) are declared open and accepted
wholesale.

The fully resolved configuration is what gets hashed into output
headers: two runs with the same hash saw byte-identical settings.
"""

from __future__ import annotations

import copy
import hashlib
import json

__all__ = [
    "ConfigError",
    "canonical_json",
    "config_hash",
    "load_config",
    "parse_override",
]


class ConfigError(Exception):
    """Invalid run configuration; the message names the offending key."""


def canonical_json(value) -> str:
    """Stable JSON encoding: sorted keys, no whitespace."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical encoding of the resolved config."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def parse_override(text: str) -> tuple[str, object]:
    """Split a KEY=VALUE override; the value parses as JSON when it can.

    A value that is not valid JSON is kept as a raw string, so
    ``--set scheme=causal`` works without inner quoting.
    """
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _is_open(path: str, open_paths: frozenset[str]) -> bool:
    return any(path == p or path.startswith(p + ".") for p in open_paths)


def _check_scalar(path: str, old, new):
    """Replacements must keep the default's rough type (None = untyped)."""
    if old is None:
        return
    if isinstance(old, bool):
        if not isinstance(new, bool):
            raise ConfigError(f"config key {path} expects true/false")
        return
    if isinstance(old, (int, float)):
        if isinstance(new, bool) or not isinstance(new, (int, float)):
            raise ConfigError(f"config key {path} expects a number")
        return
    if isinstance(old, str):
        if not isinstance(new, str):
            raise ConfigError(f"config key {path} expects a string")
        return
    if isinstance(old, list):
        if not isinstance(new, list):
            raise ConfigError(f"config key {path} expects a list")
        return


def _merge(dest: dict, src: dict, path: str, open_paths: frozenset[str]) -> None:
    for key, value in src.items():
        if not isinstance(key, str):
            raise ConfigError(f"config keys must be strings, got {key!r}")
        full = f"{path}.{key}" if path else key
        if key not in dest:
            if _is_open(full, open_paths):
                dest[key] = copy.deepcopy(value)
                continue
            raise ConfigError(f"unknown config key: {full}")
        old = dest[key]
        if isinstance(old, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {full} expects an object")
            _merge(old, value, full, open_paths)
            continue
        if isinstance(value, dict) and not _is_open(full, open_paths):
            raise ConfigError(f"config key {full} does not take an object")
        _check_scalar(full, old, value)
        dest[key] = copy.deepcopy(value)


def _nest(dotted: str, value) -> dict:
    out = value
    for part in reversed(dotted.split(".")):
        if not part:
            raise ConfigError(f"override key {dotted!r} has an empty segment")
        out = {part: out}
    return out


def load_config(
    defaults: dict,
    config_path: str | None,
    overrides: list[str] | tuple[str, ...] = (),
    open_paths: tuple[str, ...] = (),
) -> dict:
    """Resolve defaults <- config file <- overrides, validating keys."""
    config = copy.deepcopy(defaults)
    open_set = frozenset(open_paths)
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        _merge(config, data, "", open_set)
    for item in overrides:
        key, value = parse_override(item)
        _merge(config, _nest(key, value), "", open_set)
    return config
