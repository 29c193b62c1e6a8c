"""Command-line entry point: trace CSV in, PNG out."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import PlotMode, PlotSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gossipq-plot", description=__doc__)
    parser.add_argument("csv", help="trace CSV produced by the experiment runner")
    parser.add_argument("output", help="output PNG path")
    parser.add_argument(
        "--mode",
        choices=[m.value for m in PlotMode],
        default=PlotMode.COST_VS_BOUND.value,
        help="'cost' plots averages against bounds, 'gap' plots bound minus average",
    )
    parser.add_argument("--agents", default=None, help="comma-separated agent ids to keep")
    parser.add_argument("--freeze-iter", type=int, default=None,
                        help="iteration where learning stopped, drawn as a vertical marker")
    parser.add_argument("--max-points", type=int, default=5000)
    args = parser.parse_args(argv)

    agents = None
    if args.agents:
        agents = tuple(int(a) for a in args.agents.split(","))
    spec = PlotSpec(
        csv_path=Path(args.csv),
        output_path=Path(args.output),
        mode=PlotMode(args.mode),
        agents=agents,
        freeze_iteration=args.freeze_iter,
        max_points=args.max_points,
    )
    try:
        out = render(spec)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
