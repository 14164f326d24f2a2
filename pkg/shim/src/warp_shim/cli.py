"""Console entry points: ``warp-shim`` (serve) and ``warp-plots`` (render)."""

from __future__ import annotations

import argparse
import json
import sys

from .plots import MissingSeriesError, render_plots
from .serve import serve_http, serve_stdio
from .stub import StubModel, StubParams


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="warp-shim",
        description="Detector adapter speaking wire protocol v1 "
                    "(deterministic image-statistics stub model)",
    )
    parser.add_argument("--weights", default=None,
                        help="optional JSON file with stub rule parameters")
    parser.add_argument("--conf", type=float, default=0.25,
                        help="confidence threshold reported and applied")
    parser.add_argument("--http", type=int, default=None, metavar="PORT",
                        help="serve over HTTP instead of stdio")
    parser.add_argument("--name", default=None, help="override detector name")
    args = parser.parse_args(argv)

    if not (0.0 <= args.conf <= 1.0):
        parser.error(f"--conf must be in [0, 1], got {args.conf}")

    try:
        params = StubParams.from_weights(args.weights)
    except (OSError, ValueError) as e:
        error = {"type": "ERROR", "request_id": None,
                 "message": f"cannot load weights: {e}"}
        sys.stdout.write(json.dumps(error) + "\n")
        sys.stdout.flush()
        return 1

    model = StubModel(params, conf_threshold=args.conf)
    if args.name:
        model.name = args.name
    if args.http is not None:
        return serve_http(model, args.http)
    return serve_stdio(model)


def plots_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="warp-plots",
        description="Render loss-curve and heatmap images from a run directory",
    )
    parser.add_argument("run_dir", help="directory containing the CSV series")
    parser.add_argument("--out", default=None, help="output directory (default: <run>/plots)")
    args = parser.parse_args(argv)
    try:
        written = render_plots(args.run_dir, args.out)
    except MissingSeriesError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
