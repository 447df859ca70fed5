#!/usr/bin/env python3
"""Render the free-energy comparison figure from harness CSV outputs.

Usage:
    python plot_free_energy.py --summary summary.csv --theory theory.csv \
        --out figures_out --format svg
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import figlib  # noqa: E402


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--summary", required=True, help="summary CSV from the experiment run")
    parser.add_argument("--theory", required=True, help="theory curve CSV")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--format", default="svg", choices=figlib.IMAGE_FORMATS)
    args = parser.parse_args(argv)

    try:
        summary = figlib.load_summary(args.summary)
        theory = figlib.load_theory(args.theory)
    except figlib.SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    fig, meta = figlib.build_free_energy_figure(summary, theory)
    if not meta["theory_drawn"]:
        print("warning: theory CSV has no rows; plotting points only", file=sys.stderr)
    path = figlib.save_figure(fig, args.out, "free_energy", args.format)
    print(f"wrote {path} ({meta['n_points']} points)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
