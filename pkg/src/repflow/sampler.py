"""Reverse-time ODE sampling of potential outcomes and CATE estimation.

The m-th noise vector of a request is drawn from its own stream derived
from ``(seed, m)``, so the noise does not depend on the unit or on how a
request is batched, and both treatment arms see identical noise.  Repeating
a request reproduces its draws bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import ContractError, NumericalInstabilityError
from .nets import Model
from .rng import Stream

Field = Callable[[np.ndarray, float], np.ndarray]


def rk4(field: Field, y1: np.ndarray, n_steps: int) -> np.ndarray:
    """Integrate ``dy/dt = field(y, t)`` from t=1 down to t=0 with classical RK4."""
    if n_steps < 1:
        raise ContractError(f"rk4: need at least one step, got {n_steps}")
    y = np.array(y1, dtype=np.float64)
    h = -1.0 / n_steps
    for k in range(n_steps):
        t = (n_steps - k) / n_steps
        t_mid = (n_steps - k - 0.5) / n_steps
        t_end = (n_steps - k - 1) / n_steps
        k1 = field(y, t)
        k2 = field(y + 0.5 * h * k1, t_mid)
        k3 = field(y + 0.5 * h * k2, t_mid)
        k4 = field(y + h * k3, t_end)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericalInstabilityError(f"rk4: non-finite state at step {k}")
    return y


def rk4_integrate(model: Model, y1: np.ndarray, cond: np.ndarray, a, n_steps: int = 20) -> np.ndarray:
    """Map noise rows ``y1`` to outcome rows (standardized units) for arm(s) ``a``."""
    y1 = np.atleast_2d(np.asarray(y1, dtype=np.float64))
    cond = np.atleast_2d(cond)
    return rk4(lambda y, t: model.velocity(y, t, cond, a), y1, n_steps)


def noise(seed: int, m_count: int, d_y: int) -> np.ndarray:
    """``(M, d_y)`` standard normals; row m comes from stream ``(seed, m)``."""
    return np.stack([Stream(seed, "sample", m).normal(d_y) for m in range(m_count)])


@dataclass
class PosteriorDraws:
    draws: np.ndarray  # (units, M, d_y) in original outcome units
    seed: int


def _destandardize(model: Model, Ys: np.ndarray) -> np.ndarray:
    std = model.standardizer
    return Ys if std is None else std.y_inverse(Ys)


def _standardize_x(model: Model, X: np.ndarray) -> np.ndarray:
    std = model.standardizer
    return X if std is None else std.x(X)


def sample_outcomes(model: Model, X: np.ndarray, a, M: int = 100, N: int = 20, seed: int = 0,
                    chunk_rows: int = 20000) -> np.ndarray:
    """Generated outcomes of shape ``(n_units, M, d_y)`` in original units.

    ``a`` is a scalar arm or one arm per unit.
    """
    if M < 1 or N < 1:
        raise ContractError(f"sample: M and N must be positive, got M={M}, N={N}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    a = np.broadcast_to(np.asarray(a, dtype=np.int64), (n,))
    cond = model.represent(_standardize_x(model, X))
    eps = noise(seed, M, model.dims.d_y)
    rows_c = np.repeat(cond, M, axis=0)
    rows_a = np.repeat(a, M)
    rows_y = np.tile(eps, (n, 1))
    out = np.empty_like(rows_y)
    for lo in range(0, rows_y.shape[0], chunk_rows):
        sl = slice(lo, lo + chunk_rows)
        out[sl] = rk4_integrate(model, rows_y[sl], rows_c[sl], rows_a[sl], N)
    return _destandardize(model, out).reshape(n, M, -1)


def sample_po(model: Model, x: np.ndarray, a: int, M: int = 100, N: int = 20, seed: int = 0) -> PosteriorDraws:
    draws = sample_outcomes(model, np.atleast_2d(x), a, M, N, seed)
    return PosteriorDraws(draws[0], seed)


def estimate_mu(model: Model, X: np.ndarray, a, M: int = 100, N: int = 20, seed: int = 0) -> np.ndarray:
    """Monte-Carlo mean outcome per unit, shape ``(n_units, d_y)``."""
    return sample_outcomes(model, X, a, M, N, seed).mean(axis=1)


def estimate_cate(model: Model, X: np.ndarray, M: int = 100, N: int = 20, seed: int = 0) -> np.ndarray:
    """Difference of arm means under common random numbers, shape ``(n_units, d_y)``."""
    return estimate_mu(model, X, 1, M, N, seed) - estimate_mu(model, X, 0, M, N, seed)
