#!/usr/bin/env python3
"""Render the residual (experiment minus theory) figure from a summary CSV.

Usage:
    python plot_residual.py --summary summary.csv --out figures_out --format svg
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import figlib  # noqa: E402


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--summary", required=True, help="summary CSV from the experiment run")
    parser.add_argument("--theory", help="accepted for interface symmetry; unused")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--format", default="svg", choices=figlib.IMAGE_FORMATS)
    args = parser.parse_args(argv)

    try:
        summary = figlib.load_summary(args.summary)
    except figlib.SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    fig, meta = figlib.build_residual_figure(summary)
    path = figlib.save_figure(fig, args.out, "residual", args.format)
    print(f"wrote {path} ({meta['n_points']} points)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
