"""Reference methods the experiments compare against.

Three families: the single-group variant of the solver (shared plus
per-layer components, no group level), a hard-threshold version of the
two-stage loop run at externally supplied ranks instead of penalties,
and a common-invariant-subspace projection (joint spectral embedding
of all layers).  Ground-truth-based oracle estimators close the list;
they exist only for synthetic rate checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, sqrt

import numpy as np

from . import refit as refit_mod
from . import solver
from .data_model import (
    ComponentRanks,
    GroupIndex,
    LatentDecomposition,
    MultiplexDataset,
)
from .edge_family import EdgeFamily, inverse_link_clamped
from .linalg import eigh_trunc, hard_threshold
from .sampler import GroundTruth
from .solver import LossTrace

__all__ = [
    "MultinessResult",
    "MaseResult",
    "OracleEstimates",
    "multiness_defaults",
    "fit_multiness",
    "fit_oracle_nonconvex",
    "fit_mase",
    "oracle_estimators",
]


@dataclass
class MultinessResult:
    """Single-group decomposition: one shared part plus per-layer parts."""

    shared: np.ndarray
    individuals: list[np.ndarray]
    trace: LossTrace
    notes: list[str]


def multiness_defaults(n: int, m: int, c: float = 1.0) -> tuple[float, list[float]]:
    """Rate defaults for a single group of m layers."""
    return c * sqrt(n * m), [1.0 / sqrt(m)] * m


def fit_multiness(
    layers: list[np.ndarray],
    lam: float | None = None,
    alphas: list[float] | None = None,
    fam: EdgeFamily = EdgeFamily("gaussian"),
    has_loops: bool = True,
    eta: float | None = None,
    refit: bool = True,
    trunc_rank: int | None = None,
    masks: list[np.ndarray] | None = None,
    tol: float = 1e-5,
    patience: int = 10,
    max_iter: int = 2000,
) -> MultinessResult:
    """Shared-plus-individual fit of a flat layer collection.

    This is exactly the solver's first stage applied to the layers as
    one group, so running it per group reproduces the full method's
    first stage bit for bit.  Ignoring a real group structure makes the
    shared part absorb whatever the groups had in common.
    """
    m = len(layers)
    if m < 2:
        raise ValueError("need at least two layers; one layer cannot split into shared and individual parts")
    n = layers[0].shape[0]
    default_lam, default_alphas = multiness_defaults(n, m)
    lam = default_lam if lam is None else lam
    alphas = default_alphas if alphas is None else list(alphas)
    eta = (1.0 if fam.kind == "gaussian" else 3.0) if eta is None else eta
    trunc_rank = ceil(sqrt(n)) if trunc_rank is None else trunc_rank
    shared, individuals, trace, _ = solver.fit_first_stage_group(
        layers,
        lam,
        alphas,
        fam,
        has_loops=has_loops,
        eta=eta,
        tol=tol,
        patience=patience,
        max_iter=max_iter,
        trunc_rank=trunc_rank,
        masks=masks,
    )
    notes: list[str] = []
    if refit:
        shared, individuals, notes = refit_mod.first_stage_refit(
            shared, individuals, layers, fam, has_loops=has_loops, masks=masks
        )
    return MultinessResult(shared, individuals, trace, notes)


def fit_oracle_nonconvex(
    ds: MultiplexDataset,
    ranks: ComponentRanks,
    fam: EdgeFamily | None = None,
) -> LatentDecomposition:
    """Two-stage loop with every soft threshold replaced by a fixed-rank
    hard threshold at the supplied (true) ranks; no refit."""
    n = ds.n
    if ranks.d_shared < 0 or ranks.d_shared > n:
        raise ValueError(f"shared rank {ranks.d_shared} is out of range for n={n}")
    for k, d in enumerate(ranks.d_group, start=1):
        if d < 0 or ranks.d_shared + d > n:
            raise ValueError(f"group {k} total rank {ranks.d_shared + d} exceeds n={n}")
    for key, d in ranks.d_layer.items():
        if d < 0 or d > n:
            raise ValueError(f"layer {key.label()} rank {d} is out of range for n={n}")
    res = solver.fit(ds, fam=fam, refit=False, oracle_ranks=ranks)
    return res.decomposition


@dataclass
class MaseResult:
    """Joint-subspace projections of every layer."""

    theta: dict[GroupIndex, np.ndarray]
    scores: dict[GroupIndex, np.ndarray]
    basis: np.ndarray


def fit_mase(
    ds: MultiplexDataset,
    layer_dims: int | dict[GroupIndex, int],
    joint_dim: int,
    fam: EdgeFamily | None = None,
) -> MaseResult:
    """Common invariant subspace estimate across all layers.

    Each layer contributes its leading eigenvectors (by magnitude); the
    left singular vectors of the column concatenation give a joint
    basis, and every layer is projected onto it.  Score matrices are
    the unscaled projections of the (inverse-link-transformed) layers.
    """
    fam = fam or ds.edge_family
    n = ds.n
    if isinstance(layer_dims, int):
        dims = {key: layer_dims for key in ds.keys()}
    else:
        dims = dict(layer_dims)
    for key in ds.keys():
        d = dims.get(key)
        if d is None or d < 0 or d > n:
            raise ValueError(f"layer {key.label()} needs a dimension in [0, {n}]")
    transformed = {}
    blocks = []
    for key, A in ds.iter_layers():
        T = inverse_link_clamped(A, fam)
        if not ds.has_loops:
            np.fill_diagonal(T, 0.0)
        transformed[key] = T
        if dims[key] > 0:
            blocks.append(eigh_trunc(T, dims[key]).vectors)
    total = sum(B.shape[1] for B in blocks)
    if not 1 <= joint_dim <= min(n, total if total else 0):
        raise ValueError(
            f"joint dimension {joint_dim} must lie in [1, {min(n, total)}]"
        )
    concat = np.hstack(blocks)
    U, _, _ = np.linalg.svd(concat, full_matrices=False)
    basis = U[:, :joint_dim]
    theta, scores = {}, {}
    for key, T in transformed.items():
        score = basis.T @ T @ basis
        score = 0.5 * (score + score.T)
        scores[key] = score
        theta[key] = basis @ score @ basis.T
    return MaseResult(theta=theta, scores=scores, basis=basis)


@dataclass
class OracleEstimates:
    """Hard-threshold estimates that peek at the other true components."""

    S: np.ndarray
    Q: list[np.ndarray]
    R: dict[GroupIndex, np.ndarray]


def oracle_estimators(ds: MultiplexDataset, gt: GroundTruth) -> OracleEstimates:
    """Each component re-estimated with the true others subtracted off.

    S comes from the rank-truncated grand mean of (layer - Q_k - R_kl),
    Q_k from its group mean of (layer - S - R_kl), and R_kl from the
    single residual (layer - S - Q_k), all at the true ranks.
    """
    truth = gt.grams
    ranks = gt.ranks()
    fam = ds.edge_family
    transformed = {}
    for key, A in ds.iter_layers():
        T = inverse_link_clamped(A, fam)
        if not ds.has_loops:
            np.fill_diagonal(T, 0.0)
        transformed[key] = T
    M = ds.M
    grand = sum(
        transformed[key] - truth.Q[key.k - 1] - truth.R[key] for key in ds.keys()
    )
    S_or = hard_threshold(grand / M, ranks.d_shared)
    Q_or = []
    for k in range(1, ds.K + 1):
        keys = ds.group_keys(k)
        resid = sum(transformed[key] - truth.S - truth.R[key] for key in keys)
        Q_or.append(hard_threshold(resid / len(keys), ranks.d_group[k - 1]))
    R_or = {
        key: hard_threshold(
            transformed[key] - truth.S - truth.Q[key.k - 1], ranks.d_layer[key]
        )
        for key in ds.keys()
    }
    return OracleEstimates(S=S_or, Q=Q_or, R=R_or)
