"""Latent-space alignment between treatment groups.

The balancing loss is the transport cost ``<H, pi>`` of the entropic plan
between the two empirical clouds.  Gradients use the envelope rule: the
plan is held fixed and only the distances ``H`` are differentiated, which
is the exact gradient of the regularized problem and avoids unrolling the
Sinkhorn loop.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor


class EmptyGroupError(ValueError):
    """One treatment group has no units."""


@dataclass
class TransportPlan:
    plan: np.ndarray
    sharp_cost: float
    iterations: int
    marginal_residual: float


def cost_matrix(Z0, Z1) -> Tensor:
    """Pairwise Euclidean distances, control rows by treated columns."""
    if np.shape(ad.as_tensor(Z0).value)[0] < 1 or np.shape(ad.as_tensor(Z1).value)[0] < 1:
        raise EmptyGroupError("cost_matrix: both groups need at least one unit")
    return ad.pairwise_dist(Z0, Z1)


def _lse(M: np.ndarray, axis: int) -> np.ndarray:
    top = M.max(axis=axis, keepdims=True)
    return (np.log(np.exp(M - top).sum(axis=axis, keepdims=True)) + top).squeeze(axis)


def _round_to_marginals(P: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Project an approximate plan onto the exact transport polytope.
    P = P * np.minimum(a / np.maximum(P.sum(1), 1e-300), 1.0)[:, None]
    P = P * np.minimum(b / np.maximum(P.sum(0), 1e-300), 1.0)[None, :]
    err_r = a - P.sum(1)
    err_c = b - P.sum(0)
    mass = err_r.sum()
    if mass > 0:
        P = P + np.outer(err_r, err_c) / mass
    return P


def sinkhorn(H, eps: float = 0.1, max_iter: int = 200, tol: float = 1e-6) -> TransportPlan:
    """Log-domain Sinkhorn with uniform marginals.

    Iterates dual potentials until the L1 row-marginal residual falls
    below ``tol`` (columns are exact after each sweep), then rounds the
    plan onto the feasible set so ``sharp_cost`` is the cost of a true
    coupling.
    """
    H = np.asarray(ad.as_tensor(H).value, dtype=np.float64)
    if eps <= 0:
        raise ContractError(f"sinkhorn: eps must be positive, got {eps}")
    if H.ndim != 2 or H.size == 0:
        raise EmptyGroupError(f"sinkhorn: cost matrix must be non-empty 2-D, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError("sinkhorn: cost matrix has non-finite entries")
    n, m = H.shape
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    a, b = np.exp(log_a), np.exp(log_b)
    K = -H / eps
    f = np.zeros(n)
    g = np.zeros(m)
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        f = eps * (log_a - _lse(K + g[None, :] / eps, axis=1))
        g = eps * (log_b - _lse(K + f[:, None] / eps, axis=0))
        P = np.exp(K + (f[:, None] + g[None, :]) / eps)
        residual = float(np.abs(P.sum(1) - a).sum())
        if residual < tol:
            break
    P = np.exp(K + (f[:, None] + g[None, :]) / eps)
    P = _round_to_marginals(P, a, b)
    residual = float(np.abs(P.sum(1) - a).sum() + np.abs(P.sum(0) - b).sum())
    return TransportPlan(P, float((H * P).sum()), it, residual)


def _canonical(Z0: Tensor, Z1: Tensor):
    # Fix an argument order so the loss is exactly symmetric under swapping.
    k0 = (Z0.shape[0], Z0.value.tobytes())
    k1 = (Z1.shape[0], Z1.value.tobytes())
    return (Z1, Z0) if k1 < k0 else (Z0, Z1)


def balance_loss(Z0, Z1, eps: float = 0.1, max_iter: int = 200, tol: float = 1e-6) -> Tensor:
    """Entropic-OT transport cost between two groups, differentiable in ``Z``."""
    Z0, Z1 = _canonical(ad.as_tensor(Z0), ad.as_tensor(Z1))
    H = cost_matrix(Z0, Z1)
    plan = sinkhorn(H.value, eps, max_iter, tol).plan
    return ad.sum(ad.mul(H, plan))


def exact_ot_oracle(H) -> float:
    """Uniform-marginal OT cost by enumerating permutations (n = m <= 8)."""
    H = np.asarray(H, dtype=np.float64)
    n, m = H.shape
    if n != m or n > 8:
        raise ValueError(f"exact_ot_oracle: needs a square matrix with n <= 8, got {H.shape}")
    rows = np.arange(n)
    best = min(H[rows, list(p)].sum() for p in itertools.permutations(range(n)))
    return float(best) / n


def median_bandwidth(Z0, Z1) -> float:
    pooled = np.vstack([ad.as_tensor(Z0).value, ad.as_tensor(Z1).value])
    d = np.sqrt(((pooled[:, None, :] - pooled[None, :, :]) ** 2).sum(-1))
    off = d[np.triu_indices(len(pooled), k=1)]
    med = float(np.median(off)) if off.size else 0.0
    return med if med > 0 else 1.0


def _kernel_mean(X, Y, bandwidth: float, exclude_diag: bool) -> Tensor:
    D = ad.pairwise_dist(X, Y)
    K = ad.exp(ad.scale(ad.mul(D, D), -1.0 / (2.0 * bandwidth**2)))
    n, m = D.shape
    if exclude_diag:
        mask = 1.0 - np.eye(n)
        return ad.scale(ad.sum(ad.mul(K, mask)), 1.0 / (n * (n - 1)))
    return ad.scale(ad.sum(K), 1.0 / (n * m))


def mmd(Z0, Z1, bandwidth: float | None = None, biased: bool = False) -> Tensor:
    """Squared MMD with a Gaussian kernel, clamped at zero.

    The unbiased within-group terms need two or more units per group; with
    a singleton group the biased estimator is used instead.
    """
    Z0, Z1 = ad.as_tensor(Z0), ad.as_tensor(Z1)
    if Z0.shape[0] < 1 or Z1.shape[0] < 1:
        raise EmptyGroupError("mmd: both groups need at least one unit")
    if bandwidth is None:
        bandwidth = median_bandwidth(Z0, Z1)
    if bandwidth <= 0:
        raise ContractError(f"mmd: bandwidth must be positive, got {bandwidth}")
    unbiased = not biased and Z0.shape[0] > 1 and Z1.shape[0] > 1
    k00 = _kernel_mean(Z0, Z0, bandwidth, unbiased)
    k11 = _kernel_mean(Z1, Z1, bandwidth, unbiased)
    k01 = _kernel_mean(Z0, Z1, bandwidth, False)
    return ad.relu(ad.add(ad.add(k00, k11), ad.scale(k01, -2.0)))


def latent_group_distance(model, X_std: np.ndarray, A: np.ndarray, eps: float = 0.1,
                          max_iter: int = 200, tol: float = 1e-6) -> float:
    """Untracked transport cost between the encoded control and treated groups."""
    A = np.asarray(A).reshape(-1)
    if not (A == 0).any() or not (A == 1).any():
        raise EmptyGroupError("latent_group_distance: both groups need at least one unit")
    Z = model.represent(X_std)
    return balance_loss(Z[A == 0], Z[A == 1], eps, max_iter, tol).item()
