"""The figures command: render plots from estimator CSV outputs.

    figures sweep --in results.csv --vary n --out sweep.png
    figures embeddings --in group_embeddings.csv --dims 3 --out emb.png
    figures heatmap --in lobe_diff.csv --out heat.png

Exit 0 on success, 1 on usage or input errors.
"""

import argparse
import sys

from .plots import plot_embeddings, plot_heatmap, plot_sweep


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="figures", description="Render figures from estimator CSV outputs."
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("sweep", help="error-vs-parameter curves from benchmark rows")
    p.add_argument("--in", dest="inp", required=True, help="results.csv path")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--vary", default="n", help="x-axis column (default: n)")
    p.add_argument("--metric", default="arfe", help="metric rows to plot")
    p.set_defaults(func=lambda a: plot_sweep(a.inp, a.vary, a.metric, a.out))

    p = sub.add_parser("embeddings", help="per-group latent scatter colored by lobe")
    p.add_argument("--in", dest="inp", required=True, help="group_embeddings.csv path")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--dims", type=int, default=3, help="2 or 3 leading dimensions")
    p.set_defaults(func=lambda a: plot_embeddings(a.inp, a.out, dims=a.dims))

    p = sub.add_parser("heatmap", help="lobe-pair difference heatmap with stars")
    p.add_argument("--in", dest="inp", required=True, help="lobe_diff.csv path")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.set_defaults(func=lambda a: plot_heatmap(a.inp, a.out))

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if not hasattr(args, "func"):
        parser.print_help()
        return 1
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"figures: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
