"""Edge-entry distributions: working losses, gradients, and inverse links.

Losses and gradients are taken with respect to the natural-parameter
matrix of a single layer.  Every quantity uses the full-matrix counting
convention: each off-diagonal pair contributes twice, once per ordered
position (i, j) and (j, i), while a diagonal entry contributes once and
only when the network has self-loops.  Entries excluded by a mask (and
loop-free diagonals) contribute nothing to either the loss or the
gradient, which is what lets held-out edges and unobserved diagonals be
treated as missing data inside the proximal solver.

The gaussian loss absorbs the noise variance: it is the plain squared
error ``0.5 * ||A - theta||_F**2`` regardless of ``sigma2``.  Scaling by
a constant would rescale every penalty level by the same constant, so
absorbing it keeps the closed-form single-step updates and the default
penalty calibration aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

__all__ = [
    "EdgeFamily",
    "layer_loss",
    "layer_grad",
    "inverse_link_clamped",
]

_LOGIT_EPS = 1e-3


@dataclass(frozen=True)
class EdgeFamily:
    """Distribution of a single edge entry given its natural parameter.

    kind
        "gaussian" (entry ~ N(theta, sigma2)) or "bernoulli_logit"
        (entry ~ Bernoulli(sigmoid(theta))).
    sigma2
        Gaussian noise variance.  Kept for dataset metadata and for the
        sampler; the working loss does not rescale by it.
    clamp
        Bound applied to inverse-link transforms of raw layers before
        they are used to initialize the solver.
    """

    kind: str
    sigma2: float = 1.0
    clamp: float = 5.0

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "bernoulli_logit"):
            raise ValueError(f"unknown edge family kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma2 > 0:
            raise ValueError("gaussian edge family needs sigma2 > 0")
        if not self.clamp > 0:
            raise ValueError("clamp must be positive")


def _cellwise_loss(A: np.ndarray, theta: np.ndarray, fam: EdgeFamily) -> np.ndarray:
    if fam.kind == "gaussian":
        return 0.5 * (A - theta) ** 2
    # log(1 + exp(theta)) - A * theta, computed without overflow
    return np.logaddexp(0.0, theta) - A * theta


def layer_loss(
    A: np.ndarray,
    theta: np.ndarray,
    fam: EdgeFamily,
    mask: np.ndarray | None = None,
    has_loops: bool = True,
) -> float:
    """Negative log-likelihood of one layer under the working loss.

    ``mask`` marks observed entries (True = counted).  It must be
    symmetric when supplied; masked-out entries contribute zero.
    """
    A = np.asarray(A, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if A.shape != theta.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A and theta must be square matrices of equal shape")
    if not np.all(np.isfinite(theta)):
        raise ValueError("non-finite entries in natural parameter matrix")
    cell = _cellwise_loss(A, theta, fam)
    if not has_loops:
        np.fill_diagonal(cell, 0.0)
    if mask is not None:
        cell[~np.asarray(mask, dtype=bool)] = 0.0
    return float(cell.sum())


def layer_grad(
    A: np.ndarray,
    theta: np.ndarray,
    fam: EdgeFamily,
    mask: np.ndarray | None = None,
    has_loops: bool = True,
) -> np.ndarray:
    """Gradient of :func:`layer_loss` in the natural parameter.

    Entrywise ``theta - A`` for the gaussian family and
    ``sigmoid(theta) - A`` for the bernoulli family, with zeros at
    masked-out entries and on a loop-free diagonal.
    """
    A = np.asarray(A, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if A.shape != theta.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A and theta must be square matrices of equal shape")
    if not np.all(np.isfinite(theta)):
        raise ValueError("non-finite entries in natural parameter matrix")
    if fam.kind == "gaussian":
        g = theta - A
    else:
        g = expit(theta) - A
    if not has_loops:
        np.fill_diagonal(g, 0.0)
    if mask is not None:
        g[~np.asarray(mask, dtype=bool)] = 0.0
    return g


def inverse_link_clamped(A: np.ndarray, fam: EdgeFamily) -> np.ndarray:
    """Map raw layer entries to the natural-parameter scale.

    Gaussian layers pass through unchanged.  Bernoulli layers (possibly
    averaged, so entries may sit anywhere in [0, 1]) are clipped to
    ``[eps, 1 - eps]`` with ``eps = 1e-3``, sent through the logit, and
    clamped to ``[-clamp, clamp]`` so that saturated edges do not blow
    up the initializers.
    """
    A = np.asarray(A, dtype=float)
    if fam.kind == "gaussian":
        return A.copy()
    probs = np.clip(A, _LOGIT_EPS, 1.0 - _LOGIT_EPS)
    return np.clip(logit(probs), -fam.clamp, fam.clamp)
