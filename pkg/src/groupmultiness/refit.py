"""Eigenvalue debiasing: refit component eigenvalues by a joint GLM.

Nuclear-norm shrinkage biases every surviving eigenvalue toward zero.
The refit keeps the fitted eigenvectors fixed and re-estimates the
eigenvalues jointly: each observed pair (i, j) becomes one response
with one predictor ``v_i * v_j`` per retained eigenvector, shared
predictors appearing in every layer's rows and component-specific
predictors only in theirs.  Off-diagonal pairs carry weight 2 and
diagonal pairs weight 1, so the refit objective is exactly the working
loss of the solver and the refit can only lower it (the incumbent
eigenvalues are one feasible coefficient vector).

Gaussian refits solve weighted normal equations in closed form;
logistic refits run damped Newton (IRLS) iterations from the incumbent
with step halving, so they are monotone too.  A refit that fails to
improve (separation, singular designs) falls back to the unrefitted
estimates and says so in the returned notes.  Refitted eigenvalues may
flip sign; ranks and signatures are re-detected downstream.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .edge_family import EdgeFamily
from .linalg import _magnitude_order

__all__ = ["first_stage_refit", "second_stage_refit"]

_RANK_TOL = 1e-6
_RIDGE = 1e-10
_GRAD_TOL = 1e-8
_MAX_ITER = 100
_MAX_HALVINGS = 30


def _eigenbasis(Z: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(Z)
    order = _magnitude_order(vals)
    vals = vals[order]
    vecs = vecs[:, order]
    keep = np.abs(vals) > tol
    return vals[keep], np.ascontiguousarray(vecs[:, keep])


def _pair_predictors(vectors: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return vectors[rows, :] * vectors[cols, :]


class _Row:
    """Observed pairs of one layer: response, weights, offset, design blocks."""

    __slots__ = ("y", "w", "offset", "blocks")

    def __init__(self, y, w, offset, blocks):
        self.y = y
        self.w = w
        self.offset = offset
        self.blocks = blocks  # list of (slot, predictor matrix)


def _predict(row: _Row, coefs: dict[str, np.ndarray]) -> np.ndarray:
    eta = row.offset.copy()
    for slot, P in row.blocks:
        eta += P @ coefs[slot]
    return eta


def _nll(rows: list[_Row], coefs: dict[str, np.ndarray], fam: EdgeFamily) -> float:
    total = 0.0
    for row in rows:
        eta = _predict(row, coefs)
        if fam.kind == "gaussian":
            total += float(np.sum(row.w * 0.5 * (row.y - eta) ** 2))
        else:
            total += float(np.sum(row.w * (np.logaddexp(0.0, eta) - row.y * eta)))
    return total


def _solve_glm(
    rows: list[_Row],
    slot_dims: dict[str, int],
    fam: EdgeFamily,
    start: dict[str, np.ndarray],
) -> tuple[dict[str, np.ndarray] | None, list[str]]:
    slots = list(slot_dims)
    offsets = np.cumsum([0] + [slot_dims[s] for s in slots])
    p = int(offsets[-1])
    span = {s: slice(offsets[i], offsets[i + 1]) for i, s in enumerate(slots)}

    def unpack(vec: np.ndarray) -> dict[str, np.ndarray]:
        return {s: vec[span[s]].copy() for s in slots}

    if fam.kind == "gaussian":
        H = np.zeros((p, p))
        b = np.zeros(p)
        for row in rows:
            resid = row.w * (row.y - row.offset)
            for s1, P1 in row.blocks:
                b[span[s1]] += P1.T @ resid
                for s2, P2 in row.blocks:
                    H[span[s1], span[s2]] += P1.T @ (row.w[:, None] * P2)
        try:
            vec = np.linalg.solve(H, b)
        except np.linalg.LinAlgError:
            vec = np.linalg.lstsq(H, b, rcond=None)[0]
        if not np.all(np.isfinite(vec)):
            return None, ["singular refit design"]
        return unpack(vec), []

    coefs = {s: start[s].copy() for s in slots}
    current = _nll(rows, coefs, fam)
    notes: list[str] = []
    for _ in range(_MAX_ITER):
        g = np.zeros(p)
        H = np.zeros((p, p))
        for row in rows:
            eta = _predict(row, coefs)
            mu = expit(eta)
            wr = row.w * (mu - row.y)
            wh = row.w * mu * (1.0 - mu)
            for s1, P1 in row.blocks:
                g[span[s1]] += P1.T @ wr
                for s2, P2 in row.blocks:
                    H[span[s1], span[s2]] += P1.T @ (wh[:, None] * P2)
        if np.abs(g).max() <= _GRAD_TOL:
            return coefs, notes
        H[np.diag_indices_from(H)] += _RIDGE
        try:
            delta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            notes.append("singular curvature in logistic refit")
            return coefs, notes
        step = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS):
            trial_vec = np.concatenate([coefs[s] for s in slots]) - step * delta
            if np.all(np.isfinite(trial_vec)):
                trial = unpack(trial_vec)
                value = _nll(rows, trial, fam)
                if value < current:
                    coefs, current = trial, value
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            notes.append("logistic refit line search stalled")
            return coefs, notes
    notes.append("logistic refit hit the iteration limit")
    return coefs, notes


def _observed_selector(
    n: int, has_loops: bool, mask: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(n, 0 if has_loops else 1)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)[rows, cols]
        rows, cols = rows[keep], cols[keep]
    w = np.where(rows == cols, 1.0, 2.0)
    return rows, cols, w


def _rebuild(vectors: np.ndarray, coefs: np.ndarray) -> np.ndarray:
    out = (vectors * coefs) @ vectors.T
    return 0.5 * (out + out.T)


def first_stage_refit(
    spq: np.ndarray,
    rs: list[np.ndarray],
    layers: list[np.ndarray],
    fam: EdgeFamily,
    has_loops: bool = True,
    masks: list[np.ndarray] | None = None,
    rank_tol: float = _RANK_TOL,
) -> tuple[np.ndarray, list[np.ndarray], list[str]]:
    """Jointly re-estimate group-total and individual eigenvalues."""
    m = len(layers)
    masks = masks or [None] * m
    lam0, V0 = _eigenbasis(spq, rank_tol)
    d0 = len(lam0)
    bases = [_eigenbasis(R, rank_tol) for R in rs]
    if d0 == 0 and all(len(lam) == 0 for lam, _ in bases):
        return spq, rs, ["nothing above the rank tolerance; refit skipped"]

    slot_dims: dict[str, int] = {}
    start: dict[str, np.ndarray] = {}
    if d0:
        slot_dims["shared"] = d0
        start["shared"] = lam0
    for l, (lam, _) in enumerate(bases):
        if len(lam):
            slot_dims[f"layer_{l}"] = len(lam)
            start[f"layer_{l}"] = lam

    rows: list[_Row] = []
    for l, A in enumerate(layers):
        r_idx, c_idx, w = _observed_selector(A.shape[0], has_loops, masks[l])
        blocks = []
        if d0:
            blocks.append(("shared", _pair_predictors(V0, r_idx, c_idx)))
        lam, U = bases[l]
        if len(lam):
            blocks.append((f"layer_{l}", _pair_predictors(U, r_idx, c_idx)))
        if blocks:
            rows.append(_Row(A[r_idx, c_idx], w, np.zeros(len(w)), blocks))

    coefs, notes = _solve_glm(rows, slot_dims, fam, start)
    if coefs is None:
        notes.append("keeping unrefitted estimates")
        return spq, rs, notes
    new_spq = _rebuild(V0, coefs["shared"]) if d0 else spq
    new_rs = []
    for l, (lam, U) in enumerate(bases):
        if len(lam):
            new_rs.append(_rebuild(U, coefs[f"layer_{l}"]))
        else:
            new_rs.append(rs[l])
    return new_spq, new_rs, notes


def second_stage_refit(
    S: np.ndarray,
    Qs: list[np.ndarray],
    r_hat: list[list[np.ndarray]],
    layers_by_group: list[list[np.ndarray]],
    fam: EdgeFamily,
    has_loops: bool = True,
    masks: list[list[np.ndarray]] | None = None,
    rank_tol: float = _RANK_TOL,
) -> tuple[np.ndarray, list[np.ndarray], list[str]]:
    """Re-estimate shared and group eigenvalues with R entries as offsets."""
    K = len(layers_by_group)
    masks = masks or [[None] * len(g) for g in layers_by_group]
    lamS, VS = _eigenbasis(S, rank_tol)
    dS = len(lamS)
    bases = [_eigenbasis(Q, rank_tol) for Q in Qs]
    if dS == 0 and all(len(lam) == 0 for lam, _ in bases):
        return S, Qs, ["nothing above the rank tolerance; refit skipped"]

    slot_dims: dict[str, int] = {}
    start: dict[str, np.ndarray] = {}
    if dS:
        slot_dims["shared"] = dS
        start["shared"] = lamS
    for k, (lam, _) in enumerate(bases):
        if len(lam):
            slot_dims[f"group_{k}"] = len(lam)
            start[f"group_{k}"] = lam

    rows: list[_Row] = []
    for k in range(K):
        lam, W = bases[k]
        for l, A in enumerate(layers_by_group[k]):
            r_idx, c_idx, w = _observed_selector(A.shape[0], has_loops, masks[k][l])
            blocks = []
            if dS:
                blocks.append(("shared", _pair_predictors(VS, r_idx, c_idx)))
            if len(lam):
                blocks.append((f"group_{k}", _pair_predictors(W, r_idx, c_idx)))
            if blocks:
                rows.append(
                    _Row(A[r_idx, c_idx], w, r_hat[k][l][r_idx, c_idx], blocks)
                )

    coefs, notes = _solve_glm(rows, slot_dims, fam, start)
    if coefs is None:
        notes.append("keeping unrefitted estimates")
        return S, Qs, notes
    new_S = _rebuild(VS, coefs["shared"]) if dS else S
    new_Qs = []
    for k, (lam, W) in enumerate(bases):
        if len(lam):
            new_Qs.append(_rebuild(W, coefs[f"group_{k}"]))
        else:
            new_Qs.append(Qs[k])
    return new_S, new_Qs, notes
