"""Two-stage proximal gradient fitting of the latent decomposition.

Stage one solves, independently per group k, a nuclear-norm-penalized
problem in the group total F_k = S + Q_k and the individual components
R_kl.  Stage two freezes the fitted R_kl and splits the group totals
into the shared component S and group components Q_k under fresh
penalties.  Each update is a proximal gradient step: move along the
negative (normalized) loss gradient, then eigenvalue soft-threshold.
With the gaussian loss and unit step size every step reduces to a
closed-form "subtract and threshold" update, which the equivalence
tests pin down exactly.

Convergence is gated on the penalized objective: a stage stops once the
relative improvement over the best value so far stays below ``tol`` for
``patience`` consecutive iterations.  Loop-free datasets treat the
diagonal as unobserved: its gradient is zero, so a unit-step update
passes the current model diagonal through to the thresholding step.

An oracle variant replaces soft thresholding with a fixed-rank hard
threshold at supplied true ranks; it reuses the same initializers,
iteration order, and stopping rule, and skips the refit.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from math import ceil, sqrt

import numpy as np

from . import refit as refit_mod
from .data_model import (
    ComponentRanks,
    GroupIndex,
    LatentDecomposition,
    LatentPositions,
    MultiplexDataset,
    NumericalError,
)
from .edge_family import EdgeFamily, inverse_link_clamped, layer_grad, layer_loss
from .linalg import _soft_threshold_impl, ase_extract, detect_signature, eigh_trunc

__all__ = [
    "HyperParams",
    "LossTrace",
    "FitResult",
    "default_hyperparams",
    "first_stage_init",
    "second_stage_init",
    "fit_first_stage_group",
    "fit_second_stage",
    "fit",
    "extract_positions",
]

RANK_TOL = 1e-6


@dataclass(frozen=True)
class HyperParams:
    """Penalty levels, step sizes, and stopping controls for :func:`fit`.

    lambda1[k-1] penalizes group k's first stage; alpha1[(k, l)] scales
    the individual-component penalty of layer (k, l).  lambda2 and
    alpha2 play the same roles in the second stage.  Steps eta1/eta2
    multiply both the gradient and the threshold of each update.
    """

    lambda1: tuple[float, ...]
    alpha1: dict[GroupIndex, float]
    lambda2: float
    alpha2: tuple[float, ...]
    eta1: float = 1.0
    eta2: float = 1.0
    tol: float = 1e-5
    patience: int = 10
    max_iter: int = 2000
    trunc_rank: int | None = None

    def validate(self, group_sizes: tuple[int, ...]) -> None:
        K = len(group_sizes)
        if len(self.lambda1) != K or len(self.alpha2) != K:
            raise ValueError("per-group hyperparameter lengths do not match the groups")
        if any(l <= 0 for l in self.lambda1) or self.lambda2 <= 0:
            raise ValueError("penalty levels must be positive")
        if any(a <= 0 for a in self.alpha1.values()) or any(a <= 0 for a in self.alpha2):
            raise ValueError("penalty scalings must be positive")
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("step sizes must be positive")
        if self.max_iter < 1 or self.patience < 1:
            raise ValueError("max_iter and patience must be at least 1")
        wanted = {
            GroupIndex(k + 1, l + 1)
            for k, size in enumerate(group_sizes)
            for l in range(size)
        }
        if set(self.alpha1) != wanted:
            raise ValueError("alpha1 keys do not match the dataset layers")

    def to_json(self) -> dict:
        return {
            "lambda1": list(self.lambda1),
            "alpha1": {key.label(): a for key, a in sorted(self.alpha1.items())},
            "lambda2": self.lambda2,
            "alpha2": list(self.alpha2),
            "eta1": self.eta1,
            "eta2": self.eta2,
            "tol": self.tol,
            "patience": self.patience,
            "max_iter": self.max_iter,
            "trunc_rank": self.trunc_rank,
        }


def default_hyperparams(
    ds: MultiplexDataset,
    c1: float = 1.0,
    c2: float = 1.0,
    fam: EdgeFamily | None = None,
    **overrides,
) -> HyperParams:
    """Rate-calibrated defaults.

    lambda1_k = c1 * sqrt(n * m_k) with alpha1_kl = 1 / sqrt(m_k), and
    lambda2 = c2 * sqrt(n * M) with alpha2_k = sqrt(m_k / M).  Unit
    steps for the gaussian loss; eta = 3 for the logistic loss, whose
    per-entry curvature is at most 1/4.
    """
    fam = fam or ds.edge_family
    if c1 <= 0 or c2 <= 0:
        raise ValueError("penalty multipliers must be positive")
    n, M = ds.n, ds.M
    lambda1 = tuple(c1 * sqrt(n * m) for m in ds.group_sizes)
    alpha1 = {key: 1.0 / sqrt(ds.group_sizes[key.k - 1]) for key in ds.keys()}
    lambda2 = c2 * sqrt(n * M)
    alpha2 = tuple(sqrt(m / M) for m in ds.group_sizes)
    eta = 1.0 if fam.kind == "gaussian" else 3.0
    params = {
        "lambda1": lambda1,
        "alpha1": alpha1,
        "lambda2": lambda2,
        "alpha2": alpha2,
        "eta1": eta,
        "eta2": eta,
        "trunc_rank": ceil(sqrt(n)),
    }
    params.update(overrides)
    hp = HyperParams(**params)
    hp.validate(ds.group_sizes)
    return hp


@dataclass
class LossTrace:
    """Per-iteration objective values for one subproblem."""

    loss: list[float] = field(default_factory=list)
    penalized: list[float] = field(default_factory=list)
    stop_reason: str = "not run"

    def to_json(self) -> dict:
        return {
            "loss": self.loss,
            "penalized": self.penalized,
            "stop_reason": self.stop_reason,
        }


@dataclass
class FitResult:
    """Fitted decomposition plus everything needed to audit the fit."""

    decomposition: LatentDecomposition
    group_totals: dict[int, np.ndarray]
    traces: dict[str, LossTrace]
    hyperparams: HyperParams
    positions: LatentPositions | None = None
    wall_time: float = 0.0
    diagnostics: list[str] = field(default_factory=list)
    iterates: dict | None = None


class _StallMonitor:
    """Stops once relative improvement stays at or below tol long enough."""

    def __init__(self, tol: float, patience: int):
        self.tol = tol
        self.patience = patience
        self.best = np.inf
        self.stalled = 0

    def update(self, value: float) -> bool:
        if not np.isfinite(value):
            raise NumericalError(
                "objective became non-finite; the step size is likely too large, "
                "retry with a smaller eta"
            )
        if np.isfinite(self.best) and value > 10.0 * (abs(self.best) + 1.0):
            raise NumericalError(
                "objective rose more than tenfold above its best value; the "
                "iteration is diverging, retry with a smaller eta"
            )
        if np.isinf(self.best):
            improvement = 1.0
        elif self.best <= 0.0:
            improvement = 0.0
        else:
            improvement = 1.0 - value / self.best
        if improvement <= self.tol:
            self.stalled += 1
        else:
            self.stalled = 0
        if value < self.best:
            self.best = value
        return self.stalled >= self.patience


def _shrink(
    Z: np.ndarray,
    soft: float | None,
    hard: int | None,
    trunc_rank: int | None,
) -> tuple[np.ndarray, float]:
    """Apply the active threshold; returns (matrix, nuclear norm)."""
    if hard is not None:
        n = Z.shape[0]
        if hard == 0:
            return np.zeros((n, n)), 0.0
        pairs = eigh_trunc(Z, hard)
        out = (pairs.vectors * pairs.values) @ pairs.vectors.T
        return 0.5 * (out + out.T), float(np.abs(pairs.values).sum())
    out, kept, _ = _soft_threshold_impl(Z, soft, trunc_rank)
    return out, float(np.abs(kept).sum())


def _masked_transform(
    layers: list[np.ndarray],
    fam: EdgeFamily,
    has_loops: bool,
    masks: list[np.ndarray] | None,
) -> list[np.ndarray]:
    """Inverse-link layers with unobserved entries zeroed out.

    Zeroing keeps every initializer a function of observed entries
    only, so held-out values cannot leak into a masked fit.
    """
    out = []
    for i, A in enumerate(layers):
        T = inverse_link_clamped(A, fam)
        if not has_loops:
            np.fill_diagonal(T, 0.0)
        if masks is not None and masks[i] is not None:
            T[~np.asarray(masks[i], dtype=bool)] = 0.0
        out.append(T)
    return out


def first_stage_init(
    layers: list[np.ndarray],
    fam: EdgeFamily,
    target_ranks: tuple[int, list[int]] | None = None,
    has_loops: bool = True,
    masks: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Spectral warm start for one group.

    The group total starts at the mean of the inverse-link-transformed
    layers and each individual component at that layer's residual from
    the mean; with ``target_ranks`` both are hard-thresholded to the
    given ranks (used by the oracle variant).
    """
    if not layers:
        raise ValueError("cannot initialize an empty group")
    transformed = _masked_transform(layers, fam, has_loops, masks)
    mean = sum(transformed) / len(transformed)
    if target_ranks is None:
        spq = mean
        rs = [T - mean for T in transformed]
    else:
        d_total, d_layers = target_ranks
        spq, _ = _shrink(mean, None, min(d_total, mean.shape[0]), None)
        rs = [
            _shrink(T - spq, None, min(d, mean.shape[0]), None)[0]
            for T, d in zip(transformed, d_layers)
        ]
    return spq, rs


def second_stage_init(
    layers_by_group: list[list[np.ndarray]],
    r_hat: list[list[np.ndarray]],
    fam: EdgeFamily,
    has_loops: bool = True,
    masks: list[list[np.ndarray]] | None = None,
    mode: str = "residual",
    group_totals: list[np.ndarray] | None = None,
    target_ranks: tuple[int, list[int]] | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Warm start for the shared/group split.

    The default "residual" mode averages the per-group means of the
    transformed layers minus the frozen individual components; the
    shared start is the across-group mean of those and each group start
    is its residual.  Mode "group_totals" instead averages the supplied
    first-stage totals, which differs from the default by one
    soft-threshold per group.
    """
    K = len(layers_by_group)
    if K == 0:
        raise ValueError("no groups to initialize")
    if mode not in ("residual", "group_totals"):
        raise ValueError(f"unknown second-stage init mode {mode!r}")
    if mode == "group_totals":
        if group_totals is None:
            raise ValueError("group_totals mode needs the first-stage totals")
        centers = [np.asarray(F, dtype=float) for F in group_totals]
    else:
        centers = []
        for k in range(K):
            transformed = _masked_transform(
                layers_by_group[k], fam, has_loops, masks[k] if masks else None
            )
            resid = [T - R for T, R in zip(transformed, r_hat[k])]
            centers.append(sum(resid) / len(resid))
    S0 = sum(centers) / K
    Q0 = [C - S0 for C in centers]
    if target_ranks is not None:
        d_shared, d_groups = target_ranks
        S0, _ = _shrink(S0, None, min(d_shared, S0.shape[0]), None)
        Q0 = [
            _shrink(Qk, None, min(d, S0.shape[0]), None)[0]
            for Qk, d in zip(Q0, d_groups)
        ]
    return S0, Q0


def fit_first_stage_group(
    layers: list[np.ndarray],
    lambda1: float,
    alpha1: list[float],
    fam: EdgeFamily,
    has_loops: bool = True,
    eta: float = 1.0,
    tol: float = 1e-5,
    patience: int = 10,
    max_iter: int = 2000,
    trunc_rank: int | None = None,
    masks: list[np.ndarray] | None = None,
    hard_ranks: tuple[int, list[int]] | None = None,
    record_iterates: bool = False,
) -> tuple[np.ndarray, list[np.ndarray], LossTrace, list[dict]]:
    """Alternating proximal updates for one group's total and residuals."""
    m = len(layers)
    if m == 0:
        raise ValueError("empty group")
    if m == 1:
        warnings.warn(
            "group with a single layer: total and individual components are "
            "only weakly separated",
            stacklevel=2,
        )
    hard = hard_ranks is not None
    spq, rs = first_stage_init(
        layers, fam, target_ranks=hard_ranks if hard else None,
        has_loops=has_loops, masks=masks,
    )
    masks = masks or [None] * m
    trace = LossTrace()
    monitor = _StallMonitor(tol, patience)
    iterates: list[dict] = []
    nuc_spq = 0.0
    nuc_rs = [0.0] * m
    trace.stop_reason = "max_iter"
    for _ in range(max_iter):
        snap = None
        if record_iterates:
            snap = {"spq_prev": spq.copy(), "rs_prev": [R.copy() for R in rs]}
        for l in range(m):
            g = layer_grad(layers[l], spq + rs[l], fam, mask=masks[l], has_loops=has_loops)
            rs[l], nuc_rs[l] = _shrink(
                rs[l] - eta * g,
                soft=None if hard else eta * lambda1 * alpha1[l],
                hard=hard_ranks[1][l] if hard else None,
                trunc_rank=trunc_rank,
            )
        gsum = sum(
            layer_grad(layers[l], spq + rs[l], fam, mask=masks[l], has_loops=has_loops)
            for l in range(m)
        )
        spq, nuc_spq = _shrink(
            spq - (eta / m) * gsum,
            soft=None if hard else eta * lambda1 / m,
            hard=hard_ranks[0] if hard else None,
            trunc_rank=trunc_rank,
        )
        plain = sum(
            layer_loss(layers[l], spq + rs[l], fam, mask=masks[l], has_loops=has_loops)
            for l in range(m)
        )
        penalized = plain
        if not hard:
            penalized = plain + lambda1 * nuc_spq + lambda1 * sum(
                a * nr for a, nr in zip(alpha1, nuc_rs)
            )
        trace.loss.append(plain)
        trace.penalized.append(penalized)
        if record_iterates:
            snap["rs_new"] = [R.copy() for R in rs]
            snap["spq_new"] = spq.copy()
            iterates.append(snap)
        if monitor.update(penalized):
            trace.stop_reason = "stalled"
            break
    return spq, rs, trace, iterates


def fit_second_stage(
    layers_by_group: list[list[np.ndarray]],
    r_hat: list[list[np.ndarray]],
    lambda2: float,
    alpha2: list[float],
    fam: EdgeFamily,
    has_loops: bool = True,
    eta: float = 1.0,
    tol: float = 1e-5,
    patience: int = 10,
    max_iter: int = 2000,
    trunc_rank: int | None = None,
    masks: list[list[np.ndarray]] | None = None,
    hard_ranks: tuple[int, list[int]] | None = None,
    init_mode: str = "residual",
    group_totals: list[np.ndarray] | None = None,
    record_iterates: bool = False,
) -> tuple[np.ndarray, list[np.ndarray], LossTrace, list[dict]]:
    """Split frozen group totals into shared and group components."""
    K = len(layers_by_group)
    sizes = [len(g) for g in layers_by_group]
    M = sum(sizes)
    hard = hard_ranks is not None
    S, Qs = second_stage_init(
        layers_by_group,
        r_hat,
        fam,
        has_loops=has_loops,
        masks=masks,
        mode=init_mode,
        group_totals=group_totals,
        target_ranks=hard_ranks if hard else None,
    )
    masks = masks or [[None] * m for m in sizes]
    trace = LossTrace()
    monitor = _StallMonitor(tol, patience)
    iterates: list[dict] = []
    nuc_S = 0.0
    nuc_Q = [0.0] * K
    trace.stop_reason = "max_iter"
    for _ in range(max_iter):
        snap = None
        if record_iterates:
            snap = {"S_prev": S.copy(), "Q_prev": [Q.copy() for Q in Qs]}
        for k in range(K):
            gk = sum(
                layer_grad(
                    layers_by_group[k][l],
                    S + Qs[k] + r_hat[k][l],
                    fam,
                    mask=masks[k][l],
                    has_loops=has_loops,
                )
                for l in range(sizes[k])
            )
            Qs[k], nuc_Q[k] = _shrink(
                Qs[k] - (eta / sizes[k]) * gk,
                soft=None if hard else eta * lambda2 * alpha2[k] / sizes[k],
                hard=hard_ranks[1][k] if hard else None,
                trunc_rank=trunc_rank,
            )
        gS = sum(
            layer_grad(
                layers_by_group[k][l],
                S + Qs[k] + r_hat[k][l],
                fam,
                mask=masks[k][l],
                has_loops=has_loops,
            )
            for k in range(K)
            for l in range(sizes[k])
        )
        S, nuc_S = _shrink(
            S - (eta / M) * gS,
            soft=None if hard else eta * lambda2 / M,
            hard=hard_ranks[0] if hard else None,
            trunc_rank=trunc_rank,
        )
        plain = sum(
            layer_loss(
                layers_by_group[k][l],
                S + Qs[k] + r_hat[k][l],
                fam,
                mask=masks[k][l],
                has_loops=has_loops,
            )
            for k in range(K)
            for l in range(sizes[k])
        )
        penalized = plain
        if not hard:
            penalized = plain + lambda2 * nuc_S + lambda2 * sum(
                a * nq for a, nq in zip(alpha2, nuc_Q)
            )
        trace.loss.append(plain)
        trace.penalized.append(penalized)
        if record_iterates:
            snap["Q_new"] = [Q.copy() for Q in Qs]
            snap["S_new"] = S.copy()
            iterates.append(snap)
        if monitor.update(penalized):
            trace.stop_reason = "stalled"
            break
    return S, Qs, trace, iterates


def fit(
    ds: MultiplexDataset,
    hp: HyperParams | None = None,
    fam: EdgeFamily | None = None,
    refit: bool = True,
    oracle_ranks: ComponentRanks | None = None,
    masks: dict[GroupIndex, np.ndarray] | None = None,
    second_init: str = "residual",
    record_iterates: bool = False,
    extract: bool = False,
) -> FitResult:
    """Fit the full decomposition of a dataset.

    With ``oracle_ranks`` the convex penalties are replaced by hard
    thresholds at the given ranks and the refit is skipped.  ``masks``
    (True = observed) restrict the fit to a subset of entries per
    layer, leaving everything else out of losses, gradients, inits, and
    refits alike.
    """
    start = time.perf_counter()
    fam = fam or ds.edge_family
    hp = hp or default_hyperparams(ds, fam=fam)
    hp.validate(ds.group_sizes)
    diagnostics: list[str] = []
    hard = oracle_ranks is not None
    if hard and refit:
        refit = False
        diagnostics.append("oracle-rank fit requested: refit step skipped")

    layers_by_group = [ds.group_layers(k) for k in range(1, ds.K + 1)]
    keys_by_group = [ds.group_keys(k) for k in range(1, ds.K + 1)]
    masks_by_group = None
    if masks is not None:
        masks_by_group = [
            [masks.get(key) for key in keys] for keys in keys_by_group
        ]

    totals: list[np.ndarray] = []
    rs_by_group: list[list[np.ndarray]] = []
    traces: dict[str, LossTrace] = {}
    iterates: dict = {} if record_iterates else None
    for k in range(1, ds.K + 1):
        hard_ranks = None
        if hard:
            hard_ranks = (
                oracle_ranks.d_shared + oracle_ranks.d_group[k - 1],
                [oracle_ranks.d_layer[key] for key in keys_by_group[k - 1]],
            )
        spq, rs, trace, its = fit_first_stage_group(
            layers_by_group[k - 1],
            hp.lambda1[k - 1],
            [hp.alpha1[key] for key in keys_by_group[k - 1]],
            fam,
            has_loops=ds.has_loops,
            eta=hp.eta1,
            tol=hp.tol,
            patience=hp.patience,
            max_iter=hp.max_iter,
            trunc_rank=hp.trunc_rank,
            masks=masks_by_group[k - 1] if masks_by_group else None,
            hard_ranks=hard_ranks,
            record_iterates=record_iterates,
        )
        if refit:
            spq, rs, notes = refit_mod.first_stage_refit(
                spq,
                rs,
                layers_by_group[k - 1],
                fam,
                has_loops=ds.has_loops,
                masks=masks_by_group[k - 1] if masks_by_group else None,
            )
            diagnostics.extend(f"group {k} refit: {note}" for note in notes)
        totals.append(spq)
        rs_by_group.append(rs)
        traces[f"stage1_group_{k}"] = trace
        if record_iterates:
            iterates[f"stage1_group_{k}"] = its

    hard_ranks2 = None
    if hard:
        hard_ranks2 = (oracle_ranks.d_shared, list(oracle_ranks.d_group))
    S, Qs, trace2, its2 = fit_second_stage(
        layers_by_group,
        rs_by_group,
        hp.lambda2,
        list(hp.alpha2),
        fam,
        has_loops=ds.has_loops,
        eta=hp.eta2,
        tol=hp.tol,
        patience=hp.patience,
        max_iter=hp.max_iter,
        trunc_rank=hp.trunc_rank,
        masks=masks_by_group,
        hard_ranks=hard_ranks2,
        init_mode=second_init,
        group_totals=totals if second_init == "group_totals" else None,
        record_iterates=record_iterates,
    )
    traces["stage2"] = trace2
    if record_iterates:
        iterates["stage2"] = its2
    if refit:
        S, Qs, notes = refit_mod.second_stage_refit(
            S,
            Qs,
            rs_by_group,
            layers_by_group,
            fam,
            has_loops=ds.has_loops,
            masks=masks_by_group,
        )
        diagnostics.extend(f"stage2 refit: {note}" for note in notes)

    R = {
        key: rs_by_group[key.k - 1][key.l - 1]
        for keys in keys_by_group
        for key in keys
    }
    dec = LatentDecomposition(
        S=S,
        Q=Qs,
        R=R,
        sig_S=detect_signature(S, RANK_TOL),
        sig_Q=[detect_signature(Q, RANK_TOL) for Q in Qs],
        sig_R={key: detect_signature(Rl, RANK_TOL) for key, Rl in R.items()},
    )
    result = FitResult(
        decomposition=dec,
        group_totals={k: totals[k - 1] for k in range(1, ds.K + 1)},
        traces=traces,
        hyperparams=hp,
        diagnostics=diagnostics,
        iterates=iterates,
    )
    if extract:
        result.positions = extract_positions(dec)
    result.wall_time = time.perf_counter() - start
    return result


def extract_positions(dec: LatentDecomposition) -> LatentPositions:
    """Spectral embeddings of every component at its detected rank."""
    V, sig_V = ase_extract(dec.S, dec.sig_S.d)
    W, sig_W = [], []
    for Q, sig in zip(dec.Q, dec.sig_Q):
        Wk, sk = ase_extract(Q, sig.d)
        W.append(Wk)
        sig_W.append(sk)
    U, sig_U = {}, {}
    for key, R in dec.R.items():
        Uk, su = ase_extract(R, dec.sig_R[key].d)
        U[key] = Uk
        sig_U[key] = su
    return LatentPositions(V=V, W=W, U=U, sig_V=sig_V, sig_W=sig_W, sig_U=sig_U)
