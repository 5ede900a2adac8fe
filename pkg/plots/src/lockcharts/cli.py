"""Command-line front end: one chart per invocation.

Example::

    lockplots --in results.csv --kind wmd --out wmd.png
    lockplots --in overhead.csv --kind overhead --out overhead.png

Exit codes: 0 ok, 2 bad input (unknown kind, schema mismatch, missing
columns, empty grid, unwritable output).
"""

from __future__ import annotations

import argparse
import sys

from .charts import DEFAULT_CAP, KINDS, PlotSpec, render


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lockplots",
        description="Render comparison charts from measurement CSV files.")
    parser.add_argument("--in", dest="inputs", action="append", required=True,
                        metavar="CSV", help="input CSV; repeat to combine")
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--out", required=True, metavar="IMAGE",
                        help="output image path (.png or .svg)")
    parser.add_argument("--cap", type=float, default=DEFAULT_CAP,
                        help="clip normalized values above this "
                             "(default %(default)s)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        spec = PlotSpec(inputs=tuple(args.inputs), kind=args.kind,
                        out=args.out, cap=args.cap)
        info = render(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    clipped = f", {info.clipped} clipped" if info.clipped else ""
    print(f"{info.kind}: {info.panels} panel(s), {info.series} series, "
          f"{info.points} points{clipped} -> {spec.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
