"""Error metrics and the synthetic sweep driver.

A sweep varies one knob (node count, total layers, or one of the five
subspace overlaps), replicates each point over seeds, fits the selected
methods, and records relative Frobenius errors per component in a tidy
table: one row per (method, point, seed, component).  Failures at a
point are recorded and the sweep keeps going, so a long run cannot be
lost to one bad draw.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from math import sqrt
from pathlib import Path

import numpy as np

from . import baselines, solver, tuning
from .data_model import MultiplexDataset
from .edge_family import EdgeFamily
from .sampler import AngleSpec, GroundTruth, sample_components, sample_layers

__all__ = [
    "rfe",
    "arfe",
    "SweepConfig",
    "SweepResult",
    "run_sweep",
]

CSV_COLUMNS = (
    "method",
    "n",
    "M",
    "K",
    "s_vw",
    "s_vu",
    "s_ww",
    "s_wu",
    "s_uu",
    "seed",
    "metric",
    "component",
    "value",
)

VARY_CHOICES = ("n", "M", "s_vw", "s_vu", "s_ww", "s_wu", "s_uu")
METHOD_CHOICES = ("gmn", "multiness", "oracle", "mase", "oracle-est")


def rfe(Z: np.ndarray, Z_hat: np.ndarray) -> float:
    """Relative Frobenius error ||Z - Z_hat||_F / ||Z||_F."""
    Z = np.asarray(Z, dtype=float)
    Z_hat = np.asarray(Z_hat, dtype=float)
    if Z.shape != Z_hat.shape:
        raise ValueError("shape mismatch between truth and estimate")
    denom = np.linalg.norm(Z)
    if denom == 0.0:
        raise ValueError("relative error undefined for a zero ground truth")
    return float(np.linalg.norm(Z - Z_hat) / denom)


def arfe(Zs, Z_hats) -> float:
    """Mean relative Frobenius error over matched matrix sequences."""
    Zs, Z_hats = list(Zs), list(Z_hats)
    if len(Zs) != len(Z_hats):
        raise ValueError("sequences have different lengths")
    if not Zs:
        raise ValueError("empty sequences")
    return float(np.mean([rfe(Z, Z_hat) for Z, Z_hat in zip(Zs, Z_hats)]))


@dataclass(frozen=True)
class SweepConfig:
    """One-knob sweep layout: the varying parameter plus the base point."""

    vary: str
    values: tuple
    n: int = 200
    d: int = 3
    K: int = 4
    m_per_group: int = 4
    angles: AngleSpec = AngleSpec()
    edge_family: str = "gaussian"
    sigma2: float = 1.0
    has_loops: bool = True
    seeds: tuple[int, ...] = tuple(range(10))
    methods: tuple[str, ...] = ("gmn",)
    c1: float = 1.0
    c2: float = 1.0
    tune: bool = False
    cv_folds: int = 5

    def __post_init__(self):
        if self.vary not in VARY_CHOICES:
            raise ValueError(f"vary must be one of {VARY_CHOICES}")
        if len(self.values) == 0:
            raise ValueError("values must be nonempty")
        unknown = set(self.methods) - set(METHOD_CHOICES)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if len(self.seeds) == 0:
            raise ValueError("need at least one seed")
        for point in self.points():
            if point.d * (1 + point.K + point.M) > point.n:
                raise ValueError(
                    f"point {self.vary}={getattr(point, 'value')} violates the "
                    f"dimension budget d(1+K+M) <= n"
                )

    def family(self) -> EdgeFamily:
        if self.edge_family == "gaussian":
            return EdgeFamily("gaussian", sigma2=self.sigma2)
        return EdgeFamily(self.edge_family)

    def points(self) -> list["SweepPoint"]:
        out = []
        for value in self.values:
            n, m, angles = self.n, self.m_per_group, self.angles
            if self.vary == "n":
                n = int(value)
            elif self.vary == "M":
                M = int(value)
                if M % self.K != 0:
                    raise ValueError(f"M={M} is not divisible by K={self.K}")
                m = M // self.K
            else:
                angles = replace(angles, **{self.vary: float(value)})
            out.append(
                SweepPoint(
                    value=value, n=n, d=self.d, K=self.K, m_per_group=m, angles=angles
                )
            )
        return out

    @staticmethod
    def from_json(obj: dict) -> "SweepConfig":
        kwargs = dict(obj)
        if "angles" in kwargs and isinstance(kwargs["angles"], dict):
            kwargs["angles"] = AngleSpec(**kwargs["angles"])
        for name in ("values", "seeds", "methods"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return SweepConfig(**kwargs)

    def to_json(self) -> dict:
        return {
            "vary": self.vary,
            "values": list(self.values),
            "n": self.n,
            "d": self.d,
            "K": self.K,
            "m_per_group": self.m_per_group,
            "angles": {
                "s_vw": self.angles.s_vw,
                "s_vu": self.angles.s_vu,
                "s_ww": self.angles.s_ww,
                "s_wu": self.angles.s_wu,
                "s_uu": self.angles.s_uu,
            },
            "edge_family": self.edge_family,
            "sigma2": self.sigma2,
            "has_loops": self.has_loops,
            "seeds": list(self.seeds),
            "methods": list(self.methods),
            "c1": self.c1,
            "c2": self.c2,
            "tune": self.tune,
            "cv_folds": self.cv_folds,
        }


@dataclass(frozen=True)
class SweepPoint:
    value: object
    n: int
    d: int
    K: int
    m_per_group: int
    angles: AngleSpec

    @property
    def M(self) -> int:
        return self.K * self.m_per_group

    @property
    def group_sizes(self) -> tuple[int, ...]:
        return (self.m_per_group,) * self.K


@dataclass
class SweepResult:
    """Tidy rows plus any per-task failures."""

    config: SweepConfig
    rows: list[dict]
    failures: list[str]

    def aggregate(self) -> list[dict]:
        """Mean and sd of value over seeds per (method, point, component)."""
        groups: dict[tuple, list[float]] = {}
        meta: dict[tuple, dict] = {}
        for row in self.rows:
            key = (
                row["method"], row["n"], row["M"], row["K"],
                row["s_vw"], row["s_vu"], row["s_ww"], row["s_wu"], row["s_uu"],
                row["metric"], row["component"],
            )
            groups.setdefault(key, []).append(row["value"])
            meta[key] = {c: row[c] for c in CSV_COLUMNS if c not in ("seed", "value")}
        out = []
        for key in sorted(groups, key=str):
            vals = np.array(groups[key])
            rec = dict(meta[key])
            rec["mean"] = float(vals.mean())
            rec["sd"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            rec["count"] = len(vals)
            out.append(rec)
        return out

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)

    def mean_value(self, method: str, component: str, **point_filter) -> dict:
        """Mean value per sweep point for one method/component, keyed by point value."""
        out: dict = {}
        for rec in self.aggregate():
            if rec["method"] != method or rec["component"] != component:
                continue
            if any(rec[k] != v for k, v in point_filter.items()):
                continue
            out[rec[self.config.vary]] = rec["mean"]
        return out


def _sample(point: SweepPoint, fam: EdgeFamily, has_loops: bool, seed: int):
    gt = sample_components(
        point.n, point.d, point.group_sizes, point.angles, seed=2 * seed
    )
    ds = sample_layers(gt, fam, has_loops=has_loops, seed=2 * seed + 1)
    return gt, ds


def _theta_rows(gt: GroundTruth, theta_hat: dict) -> list[tuple[str, float]]:
    keys = gt.keys()
    return [("theta", arfe([gt.theta(k) for k in keys], [theta_hat[k] for k in keys]))]


def _component_rows(gt: GroundTruth, S, Qs, R) -> list[tuple[str, float]]:
    keys = gt.keys()
    rows = [("S", rfe(gt.grams.S, S))]
    rows.append(("Q", arfe(gt.grams.Q, Qs)))
    rows.append(("R", arfe([gt.grams.R[k] for k in keys], [R[k] for k in keys])))
    return rows


def _fit_method(
    method: str, gt: GroundTruth, ds: MultiplexDataset, cfg: SweepConfig, seed: int
) -> list[tuple[str, float]]:
    fam = ds.edge_family
    keys = gt.keys()
    if method == "gmn":
        if cfg.tune:
            tuned = tuning.tune(
                ds, tuning.CVConfig(folds=cfg.cv_folds, seed=seed), fam
            )
            hp = tuned.hyperparams
        else:
            hp = solver.default_hyperparams(ds, c1=cfg.c1, c2=cfg.c2, fam=fam)
        res = solver.fit(ds, hp, fam)
        dec = res.decomposition
        theta = {k: dec.theta(k) for k in keys}
        return _theta_rows(gt, theta) + _component_rows(gt, dec.S, dec.Q, dec.R)
    if method == "multiness":
        layers = [ds.layers[k] for k in keys]
        n, M = ds.n, ds.M
        if cfg.tune:
            cv = tuning.tune_first_stage(
                layers, tuning.CVConfig(folds=cfg.cv_folds, seed=seed), fam,
                has_loops=ds.has_loops,
            )
            lam = cv.chosen_value
            alphas = [cv.chosen_alpha_scale / sqrt(M)] * M
        else:
            lam, alphas = baselines.multiness_defaults(n, M, c=cfg.c1)
        res = baselines.fit_multiness(
            layers, lam, alphas, fam, has_loops=ds.has_loops
        )
        theta = {k: res.shared + G for k, G in zip(keys, res.individuals)}
        rows = _theta_rows(gt, theta)
        rows.append(("S", rfe(gt.grams.S, res.shared)))
        rows.append(
            ("R", arfe([gt.grams.R[k] for k in keys], res.individuals))
        )
        return rows
    if method == "oracle":
        dec = baselines.fit_oracle_nonconvex(ds, gt.ranks(), fam)
        theta = {k: dec.theta(k) for k in keys}
        return _theta_rows(gt, theta) + _component_rows(gt, dec.S, dec.Q, dec.R)
    if method == "mase":
        ranks = gt.ranks()
        dims = {
            k: ranks.d_shared + ranks.d_group[k.k - 1] + ranks.d_layer[k]
            for k in keys
        }
        joint = ranks.d_shared + sum(ranks.d_group) + sum(ranks.d_layer.values())
        res = baselines.fit_mase(ds, dims, min(joint, ds.n), fam)
        return _theta_rows(gt, res.theta)
    if method == "oracle-est":
        est = baselines.oracle_estimators(ds, gt)
        return _component_rows(gt, est.S, est.Q, est.R)
    raise ValueError(f"unknown method {method!r}")


def run_sweep(cfg: SweepConfig, threads: int | None = None) -> SweepResult:
    """Execute the sweep; one tidy row per (method, point, seed, component)."""
    fam = cfg.family()
    tasks = [
        (point, seed, method)
        for point in cfg.points()
        for seed in cfg.seeds
        for method in cfg.methods
    ]

    def run_one(task):
        point, seed, method = task
        gt, ds = _sample(point, fam, cfg.has_loops, seed)
        pairs = _fit_method(method, gt, ds, cfg, seed)
        base = {
            "method": method,
            "n": point.n,
            "M": point.M,
            "K": point.K,
            "s_vw": point.angles.s_vw,
            "s_vu": point.angles.s_vu,
            "s_ww": point.angles.s_ww,
            "s_wu": point.angles.s_wu,
            "s_uu": point.angles.s_uu,
            "seed": seed,
            "metric": "arfe",
        }
        return [dict(base, component=c, value=v) for c, v in pairs]

    if threads is None:
        threads = int(os.environ.get("GMN_THREADS", "0")) or 1
    results: dict[int, list[dict]] = {}
    failures: list[str] = []
    if threads <= 1:
        for i, task in enumerate(tasks):
            try:
                results[i] = run_one(task)
            except Exception as exc:
                point, seed, method = task
                failures.append(
                    f"{method} at {cfg.vary}={point.value}, seed {seed}: {exc}"
                )
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {i: pool.submit(run_one, task) for i, task in enumerate(tasks)}
            for i, fut in futures.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    point, seed, method = tasks[i]
                    failures.append(
                        f"{method} at {cfg.vary}={point.value}, seed {seed}: {exc}"
                    )
    rows = [row for i in sorted(results) for row in results[i]]
    return SweepResult(config=cfg, rows=rows, failures=failures)
