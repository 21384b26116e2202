"""Command line entry: render every recognized sweep CSV in a directory."""

from __future__ import annotations

import argparse
import sys

from .render import SchemaError, render_directory


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render_figures",
        description="Regenerate result figures from beamkit sweep CSV files")
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory holding <kind>_agg.csv files")
    parser.add_argument("--out", dest="out_dir", required=True,
                        help="directory for the rendered images")
    args = parser.parse_args(argv)

    try:
        results = render_directory(args.in_dir, args.out_dir)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    if not results:
        print("no sweep CSV files found", file=sys.stderr)
        return 1
    for meta in results:
        print(f"wrote {meta['output']} ({meta['n_series']} series)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
