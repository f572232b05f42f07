#!/usr/bin/env python3
"""Run the benchmark sweeps in scripts/configs and tabulate mean errors.

Each JSON config describes one sweep: the varying parameter (n, layer
count, or a subspace angle), the base experiment, the seed list, and the
methods to compare. Raw per-seed rows land in <out>/<name>.csv with the
same schema as `gmn benchmark`; a mean-over-seeds table per config is
printed to stdout.

Typical runs:

    python3 scripts/run_sweeps.py                      # everything
    python3 scripts/run_sweeps.py --only n_sweep layer_sweep
    python3 scripts/run_sweeps.py --seeds 2 --threads 4   # quick pass

The full set at 10 seeds takes tens of minutes single-threaded; use
--seeds for a smoke run.
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from groupmultiness import SweepConfig, run_sweep

CONFIG_DIR = Path(__file__).resolve().parent / "configs"


def load_configs(only: list[str] | None) -> dict[str, SweepConfig]:
    import json

    paths = sorted(CONFIG_DIR.glob("*.json"))
    if only:
        wanted = {name.removesuffix(".json") for name in only}
        paths = [p for p in paths if p.stem in wanted]
        missing = wanted - {p.stem for p in paths}
        if missing:
            raise SystemExit(f"no config named {sorted(missing)} in {CONFIG_DIR}")
    if not paths:
        raise SystemExit(f"no sweep configs found in {CONFIG_DIR}")
    return {p.stem: SweepConfig.from_json(json.loads(p.read_text())) for p in paths}


def mean_table(result) -> str:
    cfg = result.config
    components = sorted({row["component"] for row in result.rows})
    lines = [f"{cfg.vary:>10}  {'method':<12}" + "".join(f"{c:>10}" for c in components)]
    for value in cfg.values:
        for method in cfg.methods:
            cells = []
            for comp in components:
                means = result.mean_value(method, comp)
                cells.append(f"{means[value]:>10.4f}" if value in means else f"{'-':>10}")
            lines.append(f"{value:>10}  {method:<12}" + "".join(cells))
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="results", help="output directory for CSVs")
    parser.add_argument("--only", nargs="*", help="config names to run (default: all)")
    parser.add_argument("--seeds", type=int, help="truncate every config to this many seeds")
    parser.add_argument("--threads", type=int, default=1, help="parallel fit workers")
    args = parser.parse_args(argv)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    configs = load_configs(args.only)
    for name, cfg in configs.items():
        if args.seeds is not None:
            cfg = replace(cfg, seeds=cfg.seeds[: args.seeds])
        started = time.perf_counter()
        result = run_sweep(cfg, threads=args.threads)
        result.write_csv(out_dir / f"{name}.csv")
        print(f"== {name}: {len(result.rows)} rows in {time.perf_counter() - started:.1f}s "
              f"-> {out_dir / f'{name}.csv'}")
        for failure in result.failures:
            print(f"   failed task: {failure}", file=sys.stderr)
        print(mean_table(result))
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
