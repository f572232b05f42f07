"""Group-difference pipeline for node-labeled correlation datasets.

The pipeline variance-stabilizes correlation layers, optionally
regresses per-layer covariates out of every edge, fits the model,
extracts group-level node embeddings, and compares groups through the
average pairwise inner product of embeddings within and between node
label classes ("lobes").  Significance comes from a permutation test
that shuffles which layers belong to which group and refits with the
same hyperparameters; p-values use the add-one convention and are
Benjamini-Hochberg adjusted across the label-pair family.

Inner products are rotation invariant, so the Procrustes alignment of
the two embedding clouds affects only the exported coordinates, never
the statistics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import sqrt
from typing import Sequence

import numpy as np

from . import solver, tuning
from .data_model import (
    DatasetError,
    GroupIndex,
    MultiplexDataset,
    NumericalError,
    Signature,
)
from .edge_family import EdgeFamily
from .linalg import procrustes_rotate

__all__ = [
    "AnalysisConfig",
    "AnalysisResult",
    "fisher_z",
    "regress_out_covariates",
    "lobe_similarity_diff",
    "bh_adjust",
    "significance_stars",
    "align_group_embeddings",
    "permutation_test",
    "run_analysis",
]

_CLIP = 1.0 - 1e-6


def fisher_z(A: np.ndarray) -> np.ndarray:
    """Entrywise atanh of a correlation matrix, diagonal zeroed.

    Entries exactly at +-1 are clipped to +-(1 - 1e-6) first; entries
    beyond +-1 are rejected as not being correlations.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square correlation matrix")
    if np.any(np.abs(A) > 1.0):
        raise ValueError("correlation entries must lie in [-1, 1]")
    Z = np.arctanh(np.clip(A, -_CLIP, _CLIP))
    np.fill_diagonal(Z, 0.0)
    return Z


def regress_out_covariates(
    layers: Sequence[np.ndarray], records: Sequence[dict]
) -> list[np.ndarray]:
    """Residual layers after per-edge least squares on [1, age, male].

    Every unordered node pair is regressed, across layers, on an
    intercept, the layer's age, and its male indicator.  A covariate
    with no variation is collinear with the intercept and is dropped
    with a warning.  Residual layers are symmetric with zero diagonal.
    """
    layers = list(layers)
    M = len(layers)
    if len(records) != M:
        raise ValueError("need one covariate record per layer")
    n = layers[0].shape[0]
    try:
        age = np.array([float(rec["age"]) for rec in records])
        male = np.array([float(rec["male"]) for rec in records])
    except KeyError as exc:
        raise ValueError(f"covariate record is missing field {exc}") from exc
    columns = [np.ones(M)]
    for name, v in (("age", age), ("male", male)):
        if np.ptp(v) == 0.0:
            warnings.warn(
                f"covariate {name!r} is constant across layers; dropped from the design",
                stacklevel=2,
            )
        else:
            columns.append(v)
    X = np.column_stack(columns)
    iu = np.triu_indices(n, 1)
    Y = np.stack([np.asarray(L, dtype=float)[iu] for L in layers])
    beta, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ beta
    out = []
    for l in range(M):
        R = np.zeros((n, n))
        R[iu] = resid[l]
        out.append(R + R.T)
    return out


def _mean_pair_similarity(
    W: np.ndarray, idx_a: np.ndarray, idx_b: np.ndarray, same: bool
) -> float:
    G = W[idx_a] @ W[idx_b].T
    if same:
        na = len(idx_a)
        if na < 2:
            return float("nan")
        return float((G.sum() - np.trace(G)) / (na * (na - 1)))
    return float(G.mean())


def lobe_similarity_diff(
    W1: np.ndarray, W2: np.ndarray, lobes: Sequence[str]
) -> list[dict]:
    """Average within/between-class inner product difference (group 2 - 1).

    One row per unordered label pair, including same-label pairs, each
    averaging the inner products over distinct node pairs.  A label
    with a single node has an undefined same-label average (NaN row).
    """
    lobes = [str(l) for l in lobes]
    if W1.shape[0] != len(lobes) or W2.shape[0] != len(lobes):
        raise ValueError("position matrices and label list disagree on node count")
    labels = sorted(set(lobes))
    index = {a: np.flatnonzero(np.array(lobes) == a) for a in labels}
    rows = []
    for i, a in enumerate(labels):
        for b in labels[i:]:
            same = a == b
            h1 = _mean_pair_similarity(W1, index[a], index[b], same)
            h2 = _mean_pair_similarity(W2, index[a], index[b], same)
            rows.append(
                {
                    "lobe_a": a,
                    "lobe_b": b,
                    "h1": h1,
                    "h2": h2,
                    "diff": h2 - h1,
                    "note": "single-node label" if same and len(index[a]) < 2 else "",
                }
            )
    return rows


def bh_adjust(p: np.ndarray) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted values; NaNs pass through."""
    p = np.asarray(p, dtype=float)
    q = np.full(p.shape, np.nan)
    mask = np.isfinite(p)
    ps = p[mask]
    m = ps.size
    if m == 0:
        return q
    if np.any((ps < 0) | (ps > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    order = np.argsort(ps, kind="stable")
    scaled = ps[order] * m / np.arange(1, m + 1)
    stepped = np.minimum.accumulate(scaled[::-1])[::-1]
    qs = np.empty(m)
    qs[order] = np.minimum(stepped, 1.0)
    q[mask] = qs
    return q


def significance_stars(q: float) -> str:
    if not np.isfinite(q):
        return ""
    if q <= 0.01:
        return "***"
    if q <= 0.05:
        return "**"
    return "*" if q <= 0.1 else ""


def align_group_embeddings(
    W1: np.ndarray, W2: np.ndarray, dims: int
) -> np.ndarray:
    """Rotate W2's leading block onto W1's with an orthogonal Procrustes map."""
    if dims < 0:
        raise ValueError("dims must be nonnegative")
    if dims == 0:
        return W2.copy()
    if W1.shape[1] < dims or W2.shape[1] < dims:
        raise ValueError(
            f"alignment over {dims} dimensions needs that many columns in both groups"
        )
    O = procrustes_rotate(W2[:, :dims], W1[:, :dims])
    out = W2.copy()
    out[:, :dims] = W2[:, :dims] @ O
    return out


@dataclass(frozen=True)
class AnalysisConfig:
    """Knobs of the group-difference pipeline."""

    c1: float = 1.0
    c2: float = 1.0
    tune: bool = False
    cv_folds: int = 5
    grid: tuple[float, ...] = tuning.DEFAULT_GRID
    n_perm: int = 100
    seed: int = 0
    dims: int = 3
    fisher: bool = True
    regress: bool = True

    def __post_init__(self):
        if self.n_perm < 1:
            raise ValueError("n_perm must be at least 1")
        if self.dims < 0:
            raise ValueError("dims must be nonnegative")


@dataclass
class AnalysisResult:
    """Embeddings, the label-pair table, and permutation bookkeeping."""

    embeddings: list[np.ndarray]
    signatures: list[Signature]
    lobes: list[str]
    table: list[dict]
    aligned: bool
    n_perm_effective: int
    hyperparams: solver.HyperParams
    notes: list[str] = field(default_factory=list)


def _preprocess(ds: MultiplexDataset, cfg: AnalysisConfig) -> MultiplexDataset:
    keys = ds.keys()
    layers = [np.asarray(ds.layers[key], dtype=float) for key in keys]
    if cfg.fisher:
        layers = [fisher_z(A) for A in layers]
    else:
        layers = [A.copy() for A in layers]
        for A in layers:
            np.fill_diagonal(A, 0.0)
    if cfg.regress:
        if ds.covariates is None:
            raise DatasetError(
                "covariate regression requested but the dataset has no covariates"
            )
        records = [ds.covariates[key] for key in keys]
        layers = regress_out_covariates(layers, records)
    return MultiplexDataset(
        n=ds.n,
        group_sizes=ds.group_sizes,
        layers=dict(zip(keys, layers)),
        edge_family=EdgeFamily("gaussian"),
        has_loops=False,
        node_labels=ds.node_labels,
    )


def _fit_embeddings(
    ds: MultiplexDataset, hp: solver.HyperParams
) -> tuple[list[np.ndarray], list[Signature]]:
    res = solver.fit(ds, hp, extract=True)
    return res.positions.W, res.positions.sig_W


def _permuted_dataset(ds: MultiplexDataset, perm: np.ndarray) -> MultiplexDataset:
    keys = ds.keys()
    shuffled = [ds.layers[keys[i]] for i in perm]
    return MultiplexDataset(
        n=ds.n,
        group_sizes=ds.group_sizes,
        layers=dict(zip(keys, shuffled)),
        edge_family=ds.edge_family,
        has_loops=ds.has_loops,
    )


def permutation_test(
    ds: MultiplexDataset,
    lobes: Sequence[str],
    hp: solver.HyperParams,
    observed: list[dict],
    n_perm: int,
    seed: int,
) -> tuple[list[dict], int, list[str]]:
    """Two-sided permutation p/q values for the observed label-pair table.

    Each permutation reassigns layers to groups uniformly at random and
    refits with the same hyperparameters.  A permutation whose fit
    fails is dropped (with a note) and the denominator shrinks.
    """
    if ds.K != 2:
        raise DatasetError("the permutation test compares exactly two groups")
    rng = np.random.default_rng(seed)
    obs = np.array([row["diff"] for row in observed])
    exceed = np.zeros(len(observed), dtype=int)
    notes: list[str] = []
    successes = 0
    for t in range(n_perm):
        perm = rng.permutation(ds.M)
        try:
            W, _ = _fit_embeddings(_permuted_dataset(ds, perm), hp)
            rows = lobe_similarity_diff(W[0], W[1], lobes)
        except NumericalError as exc:
            notes.append(f"permutation {t} dropped: {exc}")
            continue
        successes += 1
        stat = np.array([row["diff"] for row in rows])
        with np.errstate(invalid="ignore"):
            exceed += (np.abs(stat) >= np.abs(obs)).astype(int)
    p = (1.0 + exceed) / (1.0 + successes)
    p[~np.isfinite(obs)] = np.nan
    q = bh_adjust(p)
    table = []
    for row, pi, qi in zip(observed, p, q):
        rec = dict(row)
        rec["p"] = float(pi) if np.isfinite(pi) else float("nan")
        rec["q"] = float(qi) if np.isfinite(qi) else float("nan")
        rec["stars"] = significance_stars(qi)
        table.append(rec)
    return table, successes, notes


def run_analysis(
    ds: MultiplexDataset,
    lobes: Sequence[str],
    cfg: AnalysisConfig = AnalysisConfig(),
) -> AnalysisResult:
    """Full pipeline: preprocess, fit, embed, compare, permute, adjust."""
    if ds.K != 2:
        raise DatasetError("group comparison needs exactly two groups")
    lobes = [str(l) for l in lobes]
    if len(lobes) != ds.n:
        raise DatasetError("need one label per node")
    prepped = _preprocess(ds, cfg)
    if cfg.tune:
        tuned = tuning.tune(
            prepped,
            tuning.CVConfig(folds=cfg.cv_folds, grid=cfg.grid, seed=cfg.seed),
        )
        hp = tuned.hyperparams
    else:
        hp = solver.default_hyperparams(prepped, c1=cfg.c1, c2=cfg.c2)
    W, sigs = _fit_embeddings(prepped, hp)
    observed = lobe_similarity_diff(W[0], W[1], lobes)
    table, successes, notes = permutation_test(
        prepped, lobes, hp, observed, cfg.n_perm, cfg.seed
    )
    aligned = False
    embeddings = [Wk.copy() for Wk in W]
    if cfg.dims > 0 and all(Wk.shape[1] >= cfg.dims for Wk in W):
        embeddings[1] = align_group_embeddings(W[0], W[1], cfg.dims)
        aligned = True
    elif cfg.dims > 0:
        notes.append(
            "alignment skipped: a group embedding has fewer columns than requested"
        )
    return AnalysisResult(
        embeddings=embeddings,
        signatures=sigs,
        lobes=lobes,
        table=table,
        aligned=aligned,
        n_perm_effective=successes,
        hyperparams=hp,
        notes=notes,
    )
