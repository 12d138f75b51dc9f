"""Figure specifications: which CSV columns to draw, grouped how, to where.

A spec is a small JSON object. Validation is strict (unknown or
mistyped keys are rejected with the offending key named) so a typo in a
spec file fails loudly instead of silently rendering the wrong figure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields


class FigSpecError(ValueError):
    """A figure spec, or the data it points at, cannot be honored."""


_REQUIRED = ("input_csvs", "x_column", "y_column", "group_column", "output_path")
_STRING_FIELDS = ("x_column", "y_column", "group_column", "output_path", "title", "x_label", "y_label")


@dataclass(frozen=True)
class FigureSpec:
    """One figure: line-plus-band curves of y vs x, one curve per group.

    ``band_column`` names a per-row standard error; curves get a +/- 1 SE
    band when it is set. ``groups`` optionally pins which group values to
    draw and in what order; a listed group with no rows is an error.
    Label fields default to the column names when empty.
    """

    input_csvs: tuple[str, ...]
    x_column: str
    y_column: str
    group_column: str
    output_path: str
    band_column: str | None = None
    groups: tuple[str, ...] | None = None
    title: str = ""
    x_label: str = ""
    y_label: str = ""

    def __post_init__(self) -> None:
        if not self.input_csvs:
            raise FigSpecError("spec key input_csvs must list at least one file")
        if not self.output_path:
            raise FigSpecError("spec key output_path must not be empty")
        if not self.output_path.endswith(".png"):
            raise FigSpecError(
                "spec key output_path must end in .png (the only format "
                "rendered byte-identically)"
            )
        if self.groups is not None and len(self.groups) == 0:
            raise FigSpecError("spec key groups must list at least one value when given")

    @property
    def referenced_columns(self) -> tuple[str, ...]:
        cols = [self.x_column, self.y_column, self.group_column]
        if self.band_column is not None:
            cols.append(self.band_column)
        return tuple(cols)

    @classmethod
    def from_dict(cls, raw: dict) -> "FigureSpec":
        if not isinstance(raw, dict):
            raise FigSpecError("figure spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise FigSpecError(f"unknown spec key: {key}")
        for key in _REQUIRED:
            if key not in raw:
                raise FigSpecError(f"missing spec key: {key}")
        data = dict(raw)
        data["input_csvs"] = _string_tuple("input_csvs", data["input_csvs"])
        if data.get("groups") is not None:
            data["groups"] = _string_tuple("groups", data["groups"])
        for key in _STRING_FIELDS:
            if key in data and not isinstance(data[key], str):
                raise FigSpecError(f"spec key {key} must be a string")
        band = data.get("band_column")
        if band is not None and not isinstance(band, str):
            raise FigSpecError("spec key band_column must be a string or null")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str) -> "FigureSpec":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise FigSpecError(f"cannot read spec file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FigSpecError(f"spec file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)


def _string_tuple(key: str, value) -> tuple[str, ...]:
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
        raise FigSpecError(f"spec key {key} must be a list of strings")
    return tuple(value)
