"""Curve rendering: one line (plus optional +/-1 SE band) per group.

Rendering is pure: a given spec and CSV contents always produce the
same PNG bytes. Everything that could drift is pinned — the Agg
backend, figure geometry, fonts, colors, and the PNG metadata (no
timestamps, no library version strings).
"""

from __future__ import annotations

import csv
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from plots.figspec import FigSpecError, FigureSpec

# Fixed palette (cycled) so curve colors never depend on library defaults.
_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

_STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.family": "DejaVu Sans",
    "font.size": 10.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.framealpha": 0.9,
}

_MIN_ROWS_PER_GROUP = 2


def read_rows(paths: Sequence[str], required: Sequence[str]) -> list[dict[str, str]]:
    """Concatenate data rows from the given CSVs, skipping '#' comments.

    Every file must carry all required columns; the first file missing
    one fails the whole read with the column and file named.
    """
    rows: list[dict[str, str]] = []
    for path in paths:
        try:
            with open(path, encoding="utf-8", newline="") as fh:
                reader = csv.DictReader(line for line in fh if not line.startswith("#"))
                header = reader.fieldnames
                if header is None:
                    raise FigSpecError(f"{path} has no header row")
                for column in required:
                    if column not in header:
                        raise FigSpecError(f"column '{column}' not found in {path}")
                rows.extend(reader)
        except OSError as exc:
            raise FigSpecError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise FigSpecError(f"no data rows in {', '.join(paths)}")
    return rows


def _as_float(value: str, column: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise FigSpecError(f"column '{column}' holds non-numeric value {value!r}") from exc


def _series(rows: list[dict[str, str]], spec: FigureSpec) -> tuple[list[float], list[float], list[float] | None]:
    """Sorted-by-x (x, y, band) float series for one group's rows."""
    triples = []
    for row in rows:
        x = _as_float(row[spec.x_column], spec.x_column)
        y = _as_float(row[spec.y_column], spec.y_column)
        band = _as_float(row[spec.band_column], spec.band_column) if spec.band_column else 0.0
        triples.append((x, y, band))
    triples.sort(key=lambda t: t[0])
    xs = [t[0] for t in triples]
    ys = [t[1] for t in triples]
    bands = [t[2] for t in triples] if spec.band_column else None
    return xs, ys, bands


def _group_sort_key(name: str) -> tuple:
    """Numeric-aware ordering so '10' sorts after '2', not before."""
    try:
        return (0, float(name), "")
    except ValueError:
        return (1, 0.0, name)


def plot_curves(spec: FigureSpec) -> str:
    """Render the figure a spec describes; returns the written path."""
    rows = read_rows(spec.input_csvs, spec.referenced_columns)
    by_group: dict[str, list[dict[str, str]]] = {}
    for row in rows:
        by_group.setdefault(row[spec.group_column], []).append(row)

    if spec.groups is not None:
        group_order = list(spec.groups)
        for name in group_order:
            if name not in by_group:
                raise FigSpecError(
                    f"group '{name}' has no rows (column {spec.group_column})"
                )
    else:
        group_order = sorted(by_group, key=_group_sort_key)
    for name in group_order:
        if len(by_group[name]) < _MIN_ROWS_PER_GROUP:
            raise FigSpecError(
                f"group '{name}' has {len(by_group[name])} row(s); "
                f"need at least {_MIN_ROWS_PER_GROUP} to draw a curve"
            )

    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        try:
            for i, name in enumerate(group_order):
                xs, ys, bands = _series(by_group[name], spec)
                color = _PALETTE[i % len(_PALETTE)]
                ax.plot(xs, ys, label=name, color=color, linewidth=1.6)
                if bands is not None:
                    lo = [y - b for y, b in zip(ys, bands)]
                    hi = [y + b for y, b in zip(ys, bands)]
                    ax.fill_between(xs, lo, hi, color=color, alpha=0.2, linewidth=0)
            ax.set_xlabel(spec.x_label or spec.x_column)
            ax.set_ylabel(spec.y_label or spec.y_column)
            if spec.title:
                ax.set_title(spec.title)
            ax.legend(title=spec.group_column)
            fig.tight_layout()
            try:
                fig.savefig(spec.output_path, format="png", metadata={"Software": "plots"})
            except OSError as exc:
                raise FigSpecError(f"cannot write {spec.output_path}: {exc}") from exc
        finally:
            plt.close(fig)
    return spec.output_path
