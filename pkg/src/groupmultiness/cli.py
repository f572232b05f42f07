"""Command-line front end.

Subcommands cover the full workflow: ``generate`` draws a synthetic
dataset with its ground truth, ``fit`` estimates the decomposition,
``tune`` cross-validates the penalty multipliers, ``benchmark`` runs a
parameter sweep over competing methods, ``analyze`` runs the two-group
comparison pipeline, and ``metrics`` scores a fit against a stored
ground truth.

Exit codes: 0 on success, 1 on usage or input errors, 2 when a fit
fails numerically.  Configs and metadata are JSON; matrices and tables
are CSV.  All outputs are deterministic given the inputs and seeds,
apart from recorded wall times.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import analysis, metrics as metrics_mod, solver, tuning
from .data_model import (
    ComponentRanks,
    DatasetError,
    GroupIndex,
    MultiplexDataset,
    NumericalError,
    load_dataset,
    load_decomposition,
    save_dataset,
    save_decomposition,
)
from .edge_family import EdgeFamily
from .sampler import AngleSpec, sample_components, sample_layers

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    """Bad flags or malformed input files; maps to exit code 1."""


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _parse_sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"--m expects comma-separated integers, got {text!r}") from exc
    if not sizes or any(m < 1 for m in sizes):
        raise UsageError("--m needs at least one positive group size")
    return sizes


def _resolve_threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.threads
    env = os.environ.get("GMN_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"GMN_THREADS={env!r} is not an integer") from exc
    return os.cpu_count() or 1


def _read_json(path: str | Path, what: str) -> dict | list:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {p} is not valid JSON: {exc}") from exc


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


# ---------------------------------------------------------------- generate


def _cmd_generate(args) -> None:
    sizes = _parse_sizes(args.m)
    if args.K is not None and args.K != len(sizes):
        raise UsageError(f"--K {args.K} contradicts --m with {len(sizes)} groups")
    angles = AngleSpec(
        s_vw=args.svw, s_vu=args.svu, s_ww=args.sww, s_wu=args.swu, s_uu=args.suu
    )
    fam = EdgeFamily(args.edge_family, sigma2=args.sigma2)
    gt = sample_components(args.n, args.d, sizes, angles, seed=2 * args.seed)
    ds = sample_layers(gt, fam, has_loops=args.loops, seed=2 * args.seed + 1)
    out = Path(args.out)
    save_dataset(ds, out)
    save_decomposition(
        gt.grams,
        out / "ground_truth",
        positions=gt.positions,
        extra={
            "generator": {
                "n": args.n,
                "d": args.d,
                "group_sizes": list(sizes),
                "angles": asdict(angles),
                "edge_family": fam.kind,
                "sigma2": fam.sigma2,
                "has_loops": args.loops,
                "seed": args.seed,
            }
        },
    )
    print(f"wrote {ds.M} layers on {ds.n} nodes to {out} (truth in {out / 'ground_truth'})")


# --------------------------------------------------------------------- fit


def _load_ranks(path: str, ds: MultiplexDataset) -> ComponentRanks:
    obj = _read_json(path, "rank")
    try:
        d_layer = {}
        for label, r in obj["d_layer"].items():
            k, l = (int(x) for x in str(label).split("_"))
            d_layer[GroupIndex(k, l)] = int(r)
        ranks = ComponentRanks(
            d_shared=int(obj["d_shared"]),
            d_group=tuple(int(r) for r in obj["d_group"]),
            d_layer=d_layer,
        )
    except (KeyError, ValueError, TypeError, AttributeError) as exc:
        raise UsageError(
            f"rank file {path} needs fields d_shared (int), d_group (list), "
            f"d_layer (map like '1_2': int): {exc}"
        ) from exc
    if set(d_layer) != set(ds.keys()):
        raise UsageError(f"rank file {path} does not cover the dataset's layers")
    return ranks


def _write_trace_csv(path: Path, traces: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "subproblem", "loss"])
        for name in sorted(traces):
            for i, value in enumerate(traces[name].penalized):
                writer.writerow([i, name, _fmt(value)])


def _hyper_overrides(args) -> dict:
    overrides = {}
    if args.eta is not None:
        overrides["eta1"] = args.eta
        overrides["eta2"] = args.eta
    if args.tol is not None:
        overrides["tol"] = args.tol
    if args.max_iter is not None:
        overrides["max_iter"] = args.max_iter
    return overrides


def _cmd_fit(args) -> None:
    ds = load_dataset(args.dataset, force_symmetrize=args.force_symmetrize)
    fam = ds.edge_family
    if args.edge_family is not None:
        fam = EdgeFamily(args.edge_family, sigma2=ds.edge_family.sigma2)
    overrides = _hyper_overrides(args)
    cv_report = None
    if args.tune:
        tuned = tuning.tune(
            ds, tuning.CVConfig(folds=args.folds, seed=args.seed), fam=fam
        )
        hp = replace(tuned.hyperparams, **overrides) if overrides else tuned.hyperparams
        cv_report = tuned.to_json()
    else:
        c1, c2 = 1.0, 1.0
        if args.hyper is not None:
            pair = _parse_floats(args.hyper, "--hyper")
            if len(pair) != 2:
                raise UsageError("--hyper expects exactly two numbers: c1,c2")
            c1, c2 = pair
        hp = solver.default_hyperparams(ds, c1=c1, c2=c2, fam=fam, **overrides)
    ranks = _load_ranks(args.oracle_ranks, ds) if args.oracle_ranks else None
    result = solver.fit(ds, hp, fam=fam, refit=args.refit, oracle_ranks=ranks, extract=True)
    out = Path(args.out) if args.out else Path(args.dataset) / "fit"
    save_decomposition(
        result.decomposition,
        out,
        hyperparams=hp.to_json(),
        traces={name: tr.to_json() for name, tr in result.traces.items()},
        wall_time=result.wall_time,
        positions=result.positions,
        extra={
            "edge_family": fam.kind,
            "refit": bool(args.refit) and ranks is None,
            "diagnostics": result.diagnostics,
        },
    )
    _write_trace_csv(out / "trace.csv", result.traces)
    if cv_report is not None:
        (out / "cv.json").write_text(json.dumps(cv_report, indent=2) + "\n")
    ranks_found = result.decomposition.ranks()
    print(
        f"fit written to {out}: rank(S)={ranks_found.d_shared}, "
        f"rank(Q)={list(ranks_found.d_group)}"
    )


# -------------------------------------------------------------------- tune


def _cmd_tune(args) -> None:
    ds = load_dataset(args.dataset, force_symmetrize=args.force_symmetrize)
    fam = ds.edge_family
    if args.edge_family is not None:
        fam = EdgeFamily(args.edge_family, sigma2=ds.edge_family.sigma2)
    grid = tuning.DEFAULT_GRID if args.grid is None else _parse_floats(args.grid, "--grid")
    cfg = tuning.CVConfig(
        folds=args.folds,
        train_fraction=args.train_fraction,
        grid=grid,
        seed=args.seed,
        partition=args.partition,
        refit=args.refit,
        alpha_grid=grid if args.tune_alpha else None,
    )
    result = tuning.tune(ds, cfg, fam=fam)
    out = Path(args.out) if args.out else Path(args.dataset) / "cv.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_json(), indent=2) + "\n")
    chosen = [res.chosen_c for res in result.first_stage]
    print(f"cv report written to {out}: first-stage c={chosen}, "
          f"second-stage c={result.second_stage.chosen_c}")


# --------------------------------------------------------------- benchmark


def _cmd_benchmark(args) -> None:
    obj = _read_json(args.config, "sweep config")
    if not isinstance(obj, dict):
        raise UsageError(f"sweep config {args.config} must be a JSON object")
    try:
        cfg = metrics_mod.SweepConfig.from_json(obj)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"sweep config {args.config}: {exc}") from exc
    result = metrics_mod.run_sweep(cfg, threads=_resolve_threads(args))
    for failure in result.failures:
        print(f"warning: {failure}", file=sys.stderr)
    if not result.rows:
        raise NumericalError("every sweep task failed; no rows to write")
    result.write_csv(args.out)
    print(f"{len(result.rows)} rows written to {args.out}")


# ----------------------------------------------------------------- analyze


def _node_names(ds: MultiplexDataset) -> list[str]:
    if ds.node_labels is not None:
        return list(ds.node_labels)
    return [str(i) for i in range(ds.n)]


def _load_lobes(path: str, ds: MultiplexDataset) -> list[str]:
    obj = _read_json(path, "lobe")
    if isinstance(obj, list):
        if len(obj) != ds.n:
            raise UsageError(
                f"lobe list in {path} has {len(obj)} labels but the dataset has {ds.n} nodes"
            )
        return [str(x) for x in obj]
    if isinstance(obj, dict):
        names = _node_names(ds)
        missing = [name for name in names if name not in obj]
        if missing:
            shown = ", ".join(missing[:5])
            raise UsageError(f"lobe map in {path} is missing node(s): {shown}")
        return [str(obj[name]) for name in names]
    raise UsageError(f"lobes file {path} must be a JSON list or a node-to-lobe object")


def _write_embeddings_csv(
    path: Path, result: analysis.AnalysisResult, names: list[str], dims: int
) -> list[str]:
    notes = []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "lobe", "group"] + [f"dim{j + 1}" for j in range(dims)])
        for g, W in enumerate(result.embeddings, start=1):
            width = W.shape[1]
            if width < dims:
                notes.append(f"group {g} embedding has {width} of {dims} requested "
                             "dimensions; remainder written as zero")
            for i, name in enumerate(names):
                row = [name, result.lobes[i], g]
                row += [_fmt(W[i, j]) if j < width else _fmt(0.0) for j in range(dims)]
                writer.writerow(row)
    return notes


def _write_lobe_csv(path: Path, table: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lobe_a", "lobe_b", "diff", "p", "q", "stars"])
        for row in table:
            writer.writerow(
                [row["lobe_a"], row["lobe_b"], _fmt(row["diff"]), _fmt(row["p"]),
                 _fmt(row["q"]), row["stars"]]
            )


def _cmd_analyze(args) -> None:
    ds = load_dataset(args.dataset, force_symmetrize=args.force_symmetrize)
    lobes = _load_lobes(args.lobes, ds)
    regress = ds.covariates is not None if args.regress is None else args.regress
    cfg = analysis.AnalysisConfig(
        c1=args.c1,
        c2=args.c2,
        tune=args.tune,
        cv_folds=args.folds,
        n_perm=args.nperm,
        seed=args.seed,
        dims=args.dims,
        fisher=args.fisher,
        regress=regress,
    )
    result = analysis.run_analysis(ds, lobes, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pad_notes = _write_embeddings_csv(
        out / "group_embeddings.csv", result, _node_names(ds), args.dims
    )
    _write_lobe_csv(out / "lobe_diff.csv", result.table)
    meta = {
        "aligned": result.aligned,
        "dims": args.dims,
        "n_perm": args.nperm,
        "n_perm_effective": result.n_perm_effective,
        "seed": args.seed,
        "fisher": cfg.fisher,
        "regress": cfg.regress,
        "tuned": cfg.tune,
        "hyperparams": result.hyperparams.to_json(),
        "lobe_labels": sorted(set(lobes)),
        "notes": result.notes + pad_notes,
    }
    (out / "analysis.json").write_text(json.dumps(meta, indent=2) + "\n")
    significant = sum(1 for row in result.table if row["stars"])
    print(f"analysis written to {out}: {len(result.table)} lobe pairs, "
          f"{significant} significant, aligned={str(result.aligned).lower()}")


# ----------------------------------------------------------------- metrics


def _cmd_metrics(args) -> None:
    root = Path(args.dataset)
    truth_dir = Path(args.truth) if args.truth else root / "ground_truth"
    fit_dir = Path(args.fit) if args.fit else root / "fit"
    truth, _ = load_decomposition(truth_dir)
    est, _ = load_decomposition(fit_dir)
    if set(truth.R) != set(est.R):
        raise UsageError(
            f"layer keys differ between {truth_dir} and {fit_dir}; "
            "these fits describe different datasets"
        )
    keys = sorted(est.R, key=lambda key: (key.k, key.l))
    per = {
        "S": metrics_mod.rfe(truth.S, est.S),
        "Q": {str(k): metrics_mod.rfe(truth.Q[k - 1], est.Q[k - 1])
              for k in range(1, truth.K + 1)},
        "R": {key.label(): metrics_mod.rfe(truth.R[key], est.R[key]) for key in keys},
        "theta": {key.label(): metrics_mod.rfe(truth.theta(key), est.theta(key))
                  for key in keys},
    }
    report = {
        "rfe": per,
        "arfe": {
            "S": per["S"],
            "Q": float(np.mean(list(per["Q"].values()))),
            "R": float(np.mean(list(per["R"].values()))),
            "theta": float(np.mean(list(per["theta"].values()))),
        },
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
    print(text)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmn",
        description="Fit and study shared/group/individual latent components "
        "of grouped multiplex networks.",
    )
    parser.add_argument(
        "--threads", type=int, default=None,
        help="cap on worker threads (default: GMN_THREADS, else machine parallelism)",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    gen = sub.add_parser("generate", help="sample a synthetic dataset plus ground truth")
    gen.add_argument("--n", type=int, required=True, help="number of nodes")
    gen.add_argument("--d", type=int, required=True, help="latent dimension per component")
    gen.add_argument("--K", type=int, default=None,
                     help="number of groups (must match --m when given)")
    gen.add_argument("--m", required=True,
                     help="comma-separated layers per group, e.g. 3,3")
    gen.add_argument("--svw", type=float, default=0.0, help="shared/group subspace cosine")
    gen.add_argument("--svu", type=float, default=0.0,
                     help="shared/individual subspace cosine")
    gen.add_argument("--sww", type=float, default=0.0, help="group/group subspace cosine")
    gen.add_argument("--swu", type=float, default=0.0,
                     help="group/individual subspace cosine")
    gen.add_argument("--suu", type=float, default=0.0,
                     help="individual/individual subspace cosine")
    gen.add_argument("--edge-family", choices=("gaussian", "bernoulli_logit"),
                     default="gaussian", help="observation model for the layers")
    gen.add_argument("--sigma2", type=float, default=1.0,
                     help="gaussian noise variance (ignored for bernoulli)")
    gen.add_argument("--loops", action=argparse.BooleanOptionalAction, default=True,
                     help="keep self-loop (diagonal) entries")
    gen.add_argument("--seed", type=int, default=0, help="generator seed")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.set_defaults(func=_cmd_generate)

    fit = sub.add_parser("fit", help="fit the decomposition of a dataset directory")
    fit.add_argument("dataset", help="dataset directory (manifest.json plus layer CSVs)")
    fit.add_argument("--out", default=None,
                     help="output directory (default: <dataset>/fit)")
    hyper = fit.add_mutually_exclusive_group()
    hyper.add_argument("--hyper", default=None,
                       help="penalty multipliers c1,c2 (default 1,1)")
    hyper.add_argument("--tune", action="store_true",
                       help="pick multipliers by edge cross-validation first")
    fit.add_argument("--refit", action=argparse.BooleanOptionalAction, default=True,
                     help="re-estimate retained eigenvalues by least squares")
    fit.add_argument("--edge-family", choices=("gaussian", "bernoulli_logit"),
                     default=None, help="override the dataset's stated edge family")
    fit.add_argument("--eta", type=float, default=None, help="step size for both stages")
    fit.add_argument("--tol", type=float, default=None,
                     help="relative improvement threshold for convergence")
    fit.add_argument("--max-iter", type=int, default=None,
                     help="iteration cap per subproblem")
    fit.add_argument("--oracle-ranks", default=None,
                     help="JSON file of known ranks; switches to hard thresholding")
    fit.add_argument("--folds", type=int, default=5,
                     help="cross-validation folds used with --tune")
    fit.add_argument("--seed", type=int, default=0,
                     help="cross-validation mask seed used with --tune")
    fit.add_argument("--force-symmetrize", action="store_true",
                     help="average away layer asymmetry above the tolerance")
    fit.set_defaults(func=_cmd_fit)

    tune = sub.add_parser("tune", help="cross-validate penalty multipliers")
    tune.add_argument("dataset", help="dataset directory")
    tune.add_argument("--out", default=None,
                      help="report path (default: <dataset>/cv.json)")
    tune.add_argument("--folds", type=int, default=5, help="number of edge folds")
    tune.add_argument("--train-fraction", type=float, default=0.8,
                      help="fraction of entries kept for training in each fold")
    tune.add_argument("--grid", default=None,
                      help="comma-separated multiplier grid "
                      "(default 0.03,0.1,0.3,1,3,10)")
    tune.add_argument("--partition", action="store_true",
                      help="make folds a partition instead of independent resamples")
    tune.add_argument("--tune-alpha", action="store_true",
                      help="also grid-search the penalty ratio (slower)")
    tune.add_argument("--refit", action=argparse.BooleanOptionalAction, default=True,
                      help="refit eigenvalues inside each candidate fit")
    tune.add_argument("--edge-family", choices=("gaussian", "bernoulli_logit"),
                      default=None, help="override the dataset's stated edge family")
    tune.add_argument("--seed", type=int, default=0, help="fold mask seed")
    tune.add_argument("--force-symmetrize", action="store_true",
                      help="average away layer asymmetry above the tolerance")
    tune.set_defaults(func=_cmd_tune)

    bench = sub.add_parser("benchmark", help="run a method sweep from a JSON config")
    bench.add_argument("--config", required=True, help="sweep config JSON file")
    bench.add_argument("--out", required=True, help="tidy results CSV to write")
    bench.set_defaults(func=_cmd_benchmark)

    ana = sub.add_parser("analyze", help="two-group comparison with permutation test")
    ana.add_argument("--dataset", required=True, help="dataset directory (two groups)")
    ana.add_argument("--lobes", required=True,
                     help="JSON node labels: a list in node order or a node-to-lobe map")
    ana.add_argument("--nperm", type=int, default=100,
                     help="number of label permutations")
    ana.add_argument("--dims", type=int, default=3,
                     help="embedding dimensions to export and align")
    ana.add_argument("--out", required=True, help="output directory")
    ana.add_argument("--c1", type=float, default=1.0,
                     help="first-stage penalty multiplier")
    ana.add_argument("--c2", type=float, default=1.0,
                     help="second-stage penalty multiplier")
    ana.add_argument("--tune", action="store_true",
                     help="cross-validate multipliers before the observed fit")
    ana.add_argument("--folds", type=int, default=5,
                     help="cross-validation folds used with --tune")
    ana.add_argument("--fisher", action=argparse.BooleanOptionalAction, default=True,
                     help="variance-stabilize correlations entrywise before fitting")
    ana.add_argument("--regress", action=argparse.BooleanOptionalAction, default=None,
                     help="regress covariates out of edges "
                     "(default: only when the dataset carries covariates)")
    ana.add_argument("--seed", type=int, default=0, help="permutation seed")
    ana.add_argument("--force-symmetrize", action="store_true",
                     help="average away layer asymmetry above the tolerance")
    ana.set_defaults(func=_cmd_analyze)

    met = sub.add_parser("metrics", help="score a fit against a ground-truth directory")
    met.add_argument("dataset", nargs="?", default=".",
                     help="dataset directory holding ground_truth/ and fit/")
    met.add_argument("--truth", default=None,
                     help="ground-truth decomposition directory "
                     "(default: <dataset>/ground_truth)")
    met.add_argument("--fit", default=None,
                     help="fitted decomposition directory (default: <dataset>/fit)")
    met.add_argument("--out", default=None, help="also write the JSON report here")
    met.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "func", None) is None:
        parser.print_help()
        return 1
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
