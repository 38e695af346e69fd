"""One command per figure kind, reading benchmark CSVs and writing an image."""

from __future__ import annotations

import argparse
import sys

from .render import FigureSpec, SchemaError, render


def _run(kind: str, description: str, argv: list[str] | None) -> int:
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("csvs", nargs="+", help="input CSV files")
    parser.add_argument("-o", "--output", required=True, help="output image path")
    parser.add_argument("--labels", default=None,
                        help="comma-separated legend labels, one per input")
    args = parser.parse_args(argv)
    labels = tuple(tok.strip() for tok in args.labels.split(",")) if args.labels else ()
    try:
        spec = FigureSpec(inputs=tuple(args.csvs), kind=kind, output=args.output,
                          labels=labels)
        path = render(spec)
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


def main_flux(argv: list[str] | None = None) -> int:
    return _run("flux_overlay", "Overlay scalar-flux profiles from flux CSVs", argv)


def main_rank(argv: list[str] | None = None) -> int:
    return _run("rank_evolution", "Rank evolution from diagnostics CSVs", argv)


def main_eta(argv: list[str] | None = None) -> int:
    return _run("eta_bound",
                "Normal-component estimate and rejection bound from diagnostics CSVs",
                argv)


if __name__ == "__main__":
    sys.exit(main_flux())
