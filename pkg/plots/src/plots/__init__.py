"""Reproducible figure generation for experiment CSVs.

Reads the documented CSV outputs of the exchlab command-line runner and
renders grouped curves with +/-1 standard-error bands from JSON figure
specs. Same spec and data always yield byte-identical PNGs.
"""

from plots.figspec import FigSpecError, FigureSpec
from plots.main import main
from plots.render import plot_curves, read_rows

__all__ = [
    "FigSpecError",
    "FigureSpec",
    "main",
    "plot_curves",
    "read_rows",
]
