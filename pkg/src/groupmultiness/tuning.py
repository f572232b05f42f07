"""Edge cross-validation for the penalty multipliers.

Each fold hides a random 20% of every layer's unordered node pairs,
fits on the remaining 80%, and scores the non-penalized loss on the
hidden entries.  Folds are independent resamples of that split by
default; a partition mode (every pair held out exactly once across
folds) exists for coverage checks.  Only the lambda multipliers are
tuned; the alpha scalings stay at their rate-calibrated defaults unless
an explicit alpha multiplier grid is supplied, in which case the two
multipliers are searched jointly.

The second-stage search freezes the individual components fitted on
the full data at the chosen first-stage multipliers; per-fold refits
of the first stage would multiply the cost for little gain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, sqrt

import numpy as np

from . import refit as refit_mod
from . import solver
from .data_model import GroupIndex, MultiplexDataset, NumericalError
from .edge_family import EdgeFamily, layer_loss

__all__ = [
    "CVConfig",
    "CVResult",
    "TuneResult",
    "make_edge_folds",
    "tune_first_stage",
    "tune_second_stage",
    "tune",
]

DEFAULT_GRID = (0.03, 0.1, 0.3, 1.0, 3.0, 10.0)


@dataclass(frozen=True)
class CVConfig:
    """Fold layout and search grid for the penalty multipliers."""

    folds: int = 5
    train_fraction: float = 0.8
    grid: tuple[float, ...] = DEFAULT_GRID
    seed: int = 0
    partition: bool = False
    refit: bool = True
    alpha_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.folds < 1:
            raise ValueError("folds must be at least 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if len(self.grid) == 0 or any(c <= 0 for c in self.grid):
            raise ValueError("grid must be nonempty with positive multipliers")
        if self.alpha_grid is not None and (
            len(self.alpha_grid) == 0 or any(a <= 0 for a in self.alpha_grid)
        ):
            raise ValueError("alpha_grid must be nonempty with positive multipliers")


@dataclass
class CVResult:
    """Scores over the multiplier grid and the selected point.

    ``grid`` holds (c_lambda, c_alpha) pairs; c_alpha is 1 when alphas
    are not tuned.  ``chosen_value`` is the resulting penalty level.
    """

    grid: list[tuple[float, float]]
    fold_scores: np.ndarray
    mean_scores: np.ndarray
    chosen: tuple[float, float]
    chosen_value: float
    failures: list[str] = field(default_factory=list)

    @property
    def chosen_c(self) -> float:
        return self.chosen[0]

    @property
    def chosen_alpha_scale(self) -> float:
        return self.chosen[1]

    def to_json(self) -> dict:
        return {
            "grid": [list(pair) for pair in self.grid],
            "fold_scores": self.fold_scores.tolist(),
            "mean_scores": self.mean_scores.tolist(),
            "chosen": {
                "c_lambda": self.chosen[0],
                "c_alpha": self.chosen[1],
                "penalty": self.chosen_value,
            },
            "failures": self.failures,
        }


def _pair_indices(n: int, has_loops: bool) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, 0 if has_loops else 1)


def _train_count(n_pairs: int, fraction: float) -> int:
    if n_pairs < 2:
        return n_pairs
    return min(max(int(round(fraction * n_pairs)), 1), n_pairs - 1)


def _mask_from_pairs(n: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    mask = np.zeros((n, n), dtype=bool)
    mask[rows, cols] = True
    mask[cols, rows] = True
    return mask


def _layer_fold_masks(
    n: int,
    n_layers: int,
    cfg: CVConfig,
    has_loops: bool,
    rng: np.random.Generator,
) -> list[list[np.ndarray]]:
    """Train masks (True = observed) as folds x layers."""
    rows, cols = _pair_indices(n, has_loops)
    P = len(rows)
    folds: list[list[np.ndarray]] = [[] for _ in range(cfg.folds)]
    for _ in range(n_layers):
        if cfg.partition:
            perm = rng.permutation(P)
            chunks = np.array_split(perm, cfg.folds)
            for f, test in enumerate(chunks):
                keep = np.ones(P, dtype=bool)
                keep[test] = False
                folds[f].append(_mask_from_pairs(n, rows[keep], cols[keep]))
        else:
            n_train = _train_count(P, cfg.train_fraction)
            for f in range(cfg.folds):
                perm = rng.permutation(P)
                sel = perm[:n_train]
                folds[f].append(_mask_from_pairs(n, rows[sel], cols[sel]))
    return folds


def make_edge_folds(
    ds: MultiplexDataset, cfg: CVConfig
) -> list[dict[GroupIndex, np.ndarray]]:
    """Per-fold symmetric train masks for every layer of the dataset."""
    rng = np.random.default_rng(cfg.seed)
    keys = ds.keys()
    per_layer = _layer_fold_masks(ds.n, len(keys), cfg, ds.has_loops, rng)
    return [dict(zip(keys, masks)) for masks in per_layer]


def _test_masks(
    train: list[np.ndarray], n: int, has_loops: bool
) -> list[np.ndarray]:
    rows, cols = _pair_indices(n, has_loops)
    valid = _mask_from_pairs(n, rows, cols)
    return [valid & ~mask for mask in train]


def _select(grid: list[tuple[float, float]], means: np.ndarray) -> int:
    """Index of the best grid point; ties go to the earlier (smaller) point."""
    if not np.any(np.isfinite(means)):
        raise NumericalError("every cross-validation grid point diverged")
    return int(np.argmin(means))


def _sorted_grid(cfg: CVConfig) -> list[tuple[float, float]]:
    alphas = cfg.alpha_grid if cfg.alpha_grid is not None else (1.0,)
    return [(c, a) for c in sorted(cfg.grid) for a in sorted(alphas)]


def tune_first_stage(
    layers: list[np.ndarray],
    cfg: CVConfig,
    fam: EdgeFamily,
    has_loops: bool = True,
    fold_masks: list[list[np.ndarray]] | None = None,
    rng: np.random.Generator | None = None,
) -> CVResult:
    """Pick the first-stage multiplier for one group by edge holdout."""
    n = layers[0].shape[0]
    m = len(layers)
    if fold_masks is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        fold_masks = _layer_fold_masks(n, m, cfg, has_loops, rng)
    grid = _sorted_grid(cfg)
    eta = 1.0 if fam.kind == "gaussian" else 3.0
    scores = np.full((len(grid), len(fold_masks)), np.inf)
    failures: list[str] = []
    for f, train in enumerate(fold_masks):
        test = _test_masks(train, n, has_loops)
        for i, (c, a) in enumerate(grid):
            lam = c * sqrt(n * m)
            alpha = [a / sqrt(m)] * m
            try:
                spq, rs, _, _ = solver.fit_first_stage_group(
                    layers,
                    lam,
                    alpha,
                    fam,
                    has_loops=has_loops,
                    eta=eta,
                    trunc_rank=ceil(sqrt(n)),
                    masks=train,
                )
                if cfg.refit:
                    spq, rs, _ = refit_mod.first_stage_refit(
                        spq, rs, layers, fam, has_loops=has_loops, masks=train
                    )
            except NumericalError as exc:
                failures.append(f"fold {f}, c={c:g}, alpha={a:g}: {exc}")
                continue
            scores[i, f] = sum(
                layer_loss(A, spq + R, fam, mask=t, has_loops=has_loops)
                for A, R, t in zip(layers, rs, test)
            )
    means = scores.mean(axis=1)
    best = _select(grid, means)
    return CVResult(
        grid=grid,
        fold_scores=scores,
        mean_scores=means,
        chosen=grid[best],
        chosen_value=grid[best][0] * sqrt(n * m),
        failures=failures,
    )


def tune_second_stage(
    ds: MultiplexDataset,
    r_hat: dict[GroupIndex, np.ndarray],
    group_totals: list[np.ndarray] | None = None,
    cfg: CVConfig = CVConfig(),
    fam: EdgeFamily | None = None,
    fold_masks: list[dict[GroupIndex, np.ndarray]] | None = None,
    rng: np.random.Generator | None = None,
) -> CVResult:
    """Pick the second-stage multiplier with the individual parts frozen."""
    fam = fam or ds.edge_family
    n, M, K = ds.n, ds.M, ds.K
    if fold_masks is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        per_layer = _layer_fold_masks(n, M, cfg, ds.has_loops, rng)
        fold_masks = [dict(zip(ds.keys(), masks)) for masks in per_layer]
    layers_by_group = [ds.group_layers(k) for k in range(1, K + 1)]
    keys_by_group = [ds.group_keys(k) for k in range(1, K + 1)]
    r_by_group = [[r_hat[key] for key in keys] for keys in keys_by_group]
    grid = _sorted_grid(cfg)
    eta = 1.0 if fam.kind == "gaussian" else 3.0
    scores = np.full((len(grid), len(fold_masks)), np.inf)
    failures: list[str] = []
    for f, fold in enumerate(fold_masks):
        train = [[fold[key] for key in keys] for keys in keys_by_group]
        test = [
            _test_masks(group, n, ds.has_loops) for group in train
        ]
        for i, (c, a) in enumerate(grid):
            lam2 = c * sqrt(n * M)
            alpha2 = [a * sqrt(m / M) for m in ds.group_sizes]
            try:
                S, Qs, _, _ = solver.fit_second_stage(
                    layers_by_group,
                    r_by_group,
                    lam2,
                    alpha2,
                    fam,
                    has_loops=ds.has_loops,
                    eta=eta,
                    trunc_rank=ceil(sqrt(n)),
                    masks=train,
                    init_mode="group_totals" if group_totals is not None else "residual",
                    group_totals=group_totals,
                )
                if cfg.refit:
                    S, Qs, _ = refit_mod.second_stage_refit(
                        S, Qs, r_by_group, layers_by_group, fam,
                        has_loops=ds.has_loops, masks=train,
                    )
            except NumericalError as exc:
                failures.append(f"fold {f}, c={c:g}, alpha={a:g}: {exc}")
                continue
            scores[i, f] = sum(
                layer_loss(
                    layers_by_group[k][l],
                    S + Qs[k] + r_by_group[k][l],
                    fam,
                    mask=test[k][l],
                    has_loops=ds.has_loops,
                )
                for k in range(K)
                for l in range(len(layers_by_group[k]))
            )
    means = scores.mean(axis=1)
    best = _select(grid, means)
    return CVResult(
        grid=grid,
        fold_scores=scores,
        mean_scores=means,
        chosen=grid[best],
        chosen_value=grid[best][0] * sqrt(n * M),
        failures=failures,
    )


@dataclass
class TuneResult:
    """Everything the tuning pass decided, ready to drive a final fit."""

    first_stage: list[CVResult]
    second_stage: CVResult
    hyperparams: solver.HyperParams

    def to_json(self) -> dict:
        return {
            "first_stage": {
                f"group_{k}": res.to_json()
                for k, res in enumerate(self.first_stage, start=1)
            },
            "second_stage": self.second_stage.to_json(),
            "hyperparams": self.hyperparams.to_json(),
        }


def tune(
    ds: MultiplexDataset,
    cfg: CVConfig = CVConfig(),
    fam: EdgeFamily | None = None,
) -> TuneResult:
    """Full tuning pass: per-group first-stage search, then second stage.

    Between the two searches the first stage is refitted on the full
    data at the chosen multipliers; its individual components are the
    frozen offsets of the second-stage search.
    """
    fam = fam or ds.edge_family
    n = ds.n
    eta = 1.0 if fam.kind == "gaussian" else 3.0
    children = np.random.SeedSequence(cfg.seed).spawn(ds.K + 1)
    first_results: list[CVResult] = []
    r_hat: dict[GroupIndex, np.ndarray] = {}
    totals: list[np.ndarray] = []
    for k in range(1, ds.K + 1):
        layers = ds.group_layers(k)
        m = len(layers)
        res = tune_first_stage(
            layers,
            cfg,
            fam,
            has_loops=ds.has_loops,
            rng=np.random.default_rng(children[k - 1]),
        )
        first_results.append(res)
        c, a = res.chosen
        spq, rs, _, _ = solver.fit_first_stage_group(
            layers,
            c * sqrt(n * m),
            [a / sqrt(m)] * m,
            fam,
            has_loops=ds.has_loops,
            eta=eta,
            trunc_rank=ceil(sqrt(n)),
        )
        if cfg.refit:
            spq, rs, _ = refit_mod.first_stage_refit(
                spq, rs, layers, fam, has_loops=ds.has_loops
            )
        totals.append(spq)
        for key, R in zip(ds.group_keys(k), rs):
            r_hat[key] = R
    second = tune_second_stage(
        ds,
        r_hat,
        group_totals=totals,
        cfg=cfg,
        fam=fam,
        rng=np.random.default_rng(children[ds.K]),
    )
    c2, a2 = second.chosen
    hp = solver.HyperParams(
        lambda1=tuple(
            res.chosen[0] * sqrt(n * m)
            for res, m in zip(first_results, ds.group_sizes)
        ),
        alpha1={
            key: first_results[key.k - 1].chosen[1] / sqrt(ds.group_sizes[key.k - 1])
            for key in ds.keys()
        },
        lambda2=c2 * sqrt(n * ds.M),
        alpha2=tuple(a2 * sqrt(m / ds.M) for m in ds.group_sizes),
        eta1=eta,
        eta2=eta,
        trunc_rank=ceil(sqrt(n)),
    )
    hp.validate(ds.group_sizes)
    return TuneResult(
        first_stage=first_results, second_stage=second, hyperparams=hp
    )
