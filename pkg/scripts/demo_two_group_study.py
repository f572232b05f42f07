#!/usr/bin/env python3
"""Synthetic two-group connectome study run end to end through the CLI.

Builds a correlation-style multiplex dataset with a planted group
difference: nodes split into front/back lobes, and the smaller subject
group carries an extra front-lobe coupling that the control group
lacks, so the front-front similarity difference should come out large,
negative (group 2 minus group 1), and significant while the other lobe
pairs stay null. Per-subject age/sex covariates with a small linear
edge effect are included so the regression step has something to
remove. The dataset goes through `gmn analyze` (Fisher transform,
covariate regression, fit, permutation test, BH correction) and the
lobe-difference table is printed.

    python3 scripts/demo_two_group_study.py --out demo_study --nperm 200
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from groupmultiness.cli import main as gmn
from groupmultiness.data_model import GroupIndex, MultiplexDataset, save_dataset
from groupmultiness.edge_family import EdgeFamily


def build_dataset(n: int, m1: int, m2: int, seed: int) -> tuple[MultiplexDataset, list[str]]:
    rng = np.random.default_rng(seed)
    half = n // 2
    lobes = ["front"] * half + ["back"] * (n - half)

    v = rng.normal(size=(n, 2)) / np.sqrt(n)
    # Group 1 gets a front-lobe coupling on top of the shared structure.
    w1 = np.zeros((n, 1))
    w1[:half, 0] = 1.3 / np.sqrt(n)
    w2 = np.zeros((n, 1))

    layers: dict[GroupIndex, np.ndarray] = {}
    covariates: dict[GroupIndex, dict] = {}
    for k, wk, m in ((1, w1, m1), (2, w2, m2)):
        for l in range(1, m + 1):
            key = GroupIndex(k, l)
            age = float(rng.integers(20, 70))
            male = float(rng.integers(0, 2))
            u = rng.normal(size=(n, 1)) * 0.2 / np.sqrt(n)
            theta = n * (v @ v.T + wk @ wk.T + u @ u.T)
            theta += 0.004 * (age - 45.0) + rng.normal(size=(n, n)) * 0.05
            corr = np.tanh((theta + theta.T) / 6.0)
            np.fill_diagonal(corr, 0.0)
            layers[key] = corr
            covariates[key] = {"age": age, "male": male}

    ds = MultiplexDataset(
        n=n,
        group_sizes=(m1, m2),
        layers=layers,
        edge_family=EdgeFamily("gaussian"),
        has_loops=False,
        node_labels=tuple(f"node{i:02d}" for i in range(n)),
        covariates=covariates,
    )
    return ds, lobes


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="demo_study", help="study directory")
    parser.add_argument("--n", type=int, default=40, help="nodes")
    parser.add_argument("--m1", type=int, default=4, help="subjects in group 1")
    parser.add_argument("--m2", type=int, default=8, help="subjects in group 2")
    parser.add_argument("--nperm", type=int, default=200, help="permutations")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)

    root = Path(args.out)
    ds, lobes = build_dataset(args.n, args.m1, args.m2, args.seed)
    save_dataset(ds, root / "dataset")
    lobes_file = root / "lobes.json"
    lobes_file.write_text(json.dumps(lobes, indent=1))

    code = gmn([
        "analyze",
        "--dataset", str(root / "dataset"),
        "--lobes", str(lobes_file),
        "--out", str(root / "analysis"),
        "--nperm", str(args.nperm),
        "--seed", str(args.seed),
        "--dims", "1",
        "--c1", "0.3", "--c2", "0.3",
    ])
    if code != 0:
        print(f"analyze exited with {code}", file=sys.stderr)
        return code

    with open(root / "analysis" / "lobe_diff.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    print(f"\nLobe similarity differences (group 2 - group 1), {args.nperm} permutations:")
    for row in rows:
        print(f"  {row['lobe_a']:>6} vs {row['lobe_b']:<6} diff={float(row['diff']):+.3f} "
              f"p={float(row['p']):.4f} q={float(row['q']):.4f} {row['stars']}")
    print(f"\nOutputs in {root / 'analysis'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
