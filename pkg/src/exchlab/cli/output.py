"""Deterministic experiment artifacts: CSV and JSON with provenance headers.

Every file opens with the subcommand name, a schema version, the package
version, the SHA-256 of the resolved configuration, and the resolved
configuration itself, so an artifact alone identifies the run that
produced it. Floats are written with ``repr`` (shortest round-trip
form), rows are sorted before writing, and line endings are pinned to
"\\n", so rerunning a command with the same config yields a
byte-identical file regardless of worker count or platform line
conventions.

CSV cells never contain commas: columns are numbers, identifiers, or
simple words by construction.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

import numpy as np

from exchlab import __version__
from exchlab.cli.config import ConfigError, canonical_json, config_hash

__all__ = ["SCHEMA_VERSION", "format_cell", "write_csv", "write_json"]

SCHEMA_VERSION = "1"


def format_cell(value) -> str:
    """One CSV cell: ints plain, floats via repr, bools lowercase."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _header_lines(command: str, config: dict, extra_meta: Sequence[tuple[str, object]]) -> list[str]:
    lines = [
        f"# command: {command}",
        f"# schema_version: {SCHEMA_VERSION}",
        f"# package_version: {__version__}",
        f"# config_hash: {config_hash(config)}",
        f"# config: {canonical_json(config)}",
    ]
    lines.extend(f"# {key}: {format_cell(value)}" for key, value in extra_meta)
    return lines


def write_csv(
    path: str,
    command: str,
    config: dict,
    columns: Sequence[str],
    rows: Iterable[tuple],
    extra_meta: Sequence[tuple[str, object]] = (),
) -> None:
    """Write header comments, a column line, and sorted data rows."""
    materialized = [tuple(row) for row in rows]
    for row in materialized:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} cells but there are {len(columns)} columns")
    lines = _header_lines(command, config, extra_meta)
    lines.append(",".join(columns))
    for row in sorted(materialized):
        lines.append(",".join(format_cell(cell) for cell in row))
    _write_text(path, "\n".join(lines) + "\n")


def _jsonable(value):
    """json.dumps fallback for numpy scalars and arrays."""
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__} to JSON")


def write_json(path: str, command: str, config: dict, payload: dict) -> None:
    """Write one sorted-keys JSON document carrying the provenance block."""
    doc = {
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config_hash": config_hash(config),
        "config": config,
    }
    overlap = set(doc) & set(payload)
    if overlap:
        raise ValueError(f"payload keys collide with provenance keys: {sorted(overlap)}")
    doc.update(payload)
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write output file {path}: {exc}") from exc
