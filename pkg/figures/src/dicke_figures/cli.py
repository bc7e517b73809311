"""Command line entry: dicke-figures render --kind ... --in ... --out ..."""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, PlotSpec, RenderError, render


def build_parser():
    parser = argparse.ArgumentParser(prog="dicke-figures")
    subs = parser.add_subparsers(dest="command", required=True)
    rd = subs.add_parser("render", help="render one figure from a CSV file")
    rd.add_argument("--kind", required=True, choices=KINDS)
    rd.add_argument("--in", dest="path", required=True, metavar="CSV")
    rd.add_argument("--out", required=True, metavar="IMAGE")
    rd.add_argument("--metric", default="fidelity",
                    help="heatmap color / default y column")
    rd.add_argument("--n-spins", type=float, default=None,
                    help="normalize spin axes by N (otherwise taken from the "
                         "JSON sidecar when present)")
    rd.add_argument("--x", default=None, help="lines: x column")
    rd.add_argument("--y", default=None, help="lines: comma-separated y columns")
    rd.add_argument("--series", default=None, help="lines: group by column")
    rd.add_argument("--title", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    spec = PlotSpec(
        path=args.path, kind=args.kind, out=args.out, metric=args.metric,
        n_spins=args.n_spins, x=args.x,
        y=[c for c in (args.y or "").split(",") if c],
        series=args.series, title=args.title)
    try:
        out = render(spec)
    except RenderError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
