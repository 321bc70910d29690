"""boardplot command line: render boardsim CSVs to PNG figures."""

from __future__ import annotations

import argparse
import glob
import sys
from pathlib import Path

from .render import KINDS, PlotJob, RenderError, render


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"grid must be ROWSxCOLS, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="boardplot",
        description="Render boardsim CSV outputs as PNG figures")
    p.add_argument("--input", required=True,
                   help="CSV path (glob patterns allowed for heatmap-grid)")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--grid", type=_parse_grid, default=None,
                   help="panel layout for heatmap-grid, e.g. 2x5")
    p.add_argument("--no-timestamp", action="store_true",
                   help="suppress the timestamp annotation (deterministic "
                        "bytes)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    inputs = sorted(glob.glob(args.input)) or [args.input]
    try:
        job = PlotJob(inputs=[Path(p) for p in inputs], kind=args.kind,
                      out=Path(args.out), grid=args.grid,
                      timestamp=not args.no_timestamp)
        out = render(job)
    except RenderError as e:
        print(f"boardplot: {e}", file=sys.stderr)
        return 1
    print(f"boardplot: wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
