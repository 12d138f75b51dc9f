"""Command-line entry point: render one figure per spec file.

Usage:
    plots FIGSPEC.json [FIGSPEC.json ...]

Each argument is a JSON figure spec (see figspec.FigureSpec). Exit
status 0 when every figure renders, 2 on any spec or data problem.
"""

from __future__ import annotations

import argparse
import sys

from plots.figspec import FigSpecError, FigureSpec
from plots.render import plot_curves

EXIT_OK = 0
EXIT_SPEC_ERROR = 2


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots",
        description="Render grouped curve figures from experiment CSVs.",
    )
    parser.add_argument("specs", nargs="+", metavar="FIGSPEC", help="JSON figure spec file")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for path in args.specs:
        try:
            written = plot_curves(FigureSpec.from_file(path))
        except FigSpecError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SPEC_ERROR
        print(written)
    return EXIT_OK


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
