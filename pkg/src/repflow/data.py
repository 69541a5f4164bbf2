"""Synthetic generators, IHDP ingestion, splitting and standardization."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .autodiff import ContractError
from .rng import Stream, derive_seed

log = logging.getLogger(__name__)

N_IHDP_COVARIATES = 25


class DataFormatError(ValueError):
    """A dataset file is malformed."""


def baseline(X: np.ndarray) -> np.ndarray:
    return (0.5 * X[:, 0] ** 2 + 0.5 * np.exp((X[:, 1] + X[:, 2]) / 4.0)
            + np.sin(X[:, 3] + X[:, 4]))


def effect(X: np.ndarray) -> np.ndarray:
    return 1.0 + 0.5 * X[:, 0] - 0.5 * X[:, 1] ** 2 + np.sin(X[:, 2])


def propensity_logit(X: np.ndarray) -> np.ndarray:
    return 0.5 + 0.5 * X[:, 0] - X[:, 1] ** 2 + np.sin(X[:, 2])


@dataclass
class Dataset:
    """Covariates, treatment and factual outcome, plus ground truth when known.

    ``mu0``/``mu1`` are the noise-free response surfaces; ``y0``/``y1`` are
    the realized potential outcomes.  ``kind`` names the generating process.
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    y0: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None
    mu0: Optional[np.ndarray] = None
    mu1: Optional[np.ndarray] = None
    propensity: Optional[np.ndarray] = None
    kind: str = "synthetic"

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def tau(self) -> Optional[np.ndarray]:
        if self.mu0 is None or self.mu1 is None:
            return None
        return self.mu1 - self.mu0

    @property
    def has_ground_truth(self) -> bool:
        return self.mu0 is not None and self.mu1 is not None

    @property
    def outcome_noise(self) -> bool:
        """True when potential outcomes are mu plus unit-variance Gaussian noise."""
        return self.kind in ("setting_a", "setting_b", "synthetic")

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)

        def pick(v):
            return None if v is None else v[idx]

        return Dataset(self.X[idx], self.A[idx], self.Y[idx], pick(self.y0), pick(self.y1),
                       pick(self.mu0), pick(self.mu1), pick(self.propensity), self.kind)


def _check_d(d: int) -> None:
    if d < 5:
        raise ContractError(f"synthetic settings need d >= 5 covariates, got d={d}")


def _outcomes(X: np.ndarray, A: np.ndarray, stream_seed: int, propensity, kind) -> Dataset:
    n = X.shape[0]
    mu0 = baseline(X)
    mu1 = mu0 + effect(X)
    y0 = mu0 + Stream(stream_seed, "eps0").normal(n)
    y1 = mu1 + Stream(stream_seed, "eps1").normal(n)
    Y = np.where(A == 1, y1, y0)
    return Dataset(X, A, Y, y0, y1, mu0, mu1, propensity, kind)


def gen_setting_a(n: int, d: int = 10, seed: int = 0) -> Dataset:
    """Propensity-based selection: X ~ N(0, I), logistic treatment assignment."""
    _check_d(d)
    X = Stream(seed, "setting_a", "X").normal((n, d))
    prop = 1.0 / (1.0 + np.exp(-propensity_logit(X)))
    A = (Stream(seed, "setting_a", "A").uniform(n) < prop).astype(np.int64)
    return _outcomes(X, A, derive_seed(seed, "setting_a"), prop, "setting_a")


def gen_setting_b(n: int, d: int = 10, s: float = 0.5, seed: int = 0) -> Dataset:
    """Covariate shift: balanced assignment, treated covariates shifted by ``s``."""
    _check_d(d)
    A = (Stream(seed, "setting_b", "A").uniform(n) < 0.5).astype(np.int64)
    X = Stream(seed, "setting_b", "X").normal((n, d)) + s * A[:, None]
    return _outcomes(X, A, derive_seed(seed, "setting_b"), None, "setting_b")


# file formats -------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def save_synthetic(ds: Dataset, path) -> None:
    """CSV with header ``a,y,y0,y1,tau,x1..xd``."""
    d = ds.X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "y", "y0", "y1", "tau"] + [f"x{j + 1}" for j in range(d)])
        for i in range(len(ds)):
            w.writerow([int(ds.A[i]), _fmt(ds.Y[i]), _fmt(ds.y0[i]), _fmt(ds.y1[i]), _fmt(ds.tau[i])]
                       + [_fmt(v) for v in ds.X[i]])


def _read_table(path, required: Sequence[str]) -> Tuple[list, np.ndarray]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataFormatError(f"{path}: missing columns {missing}")
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataFormatError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        for c, cell in enumerate(row):
            try:
                values[r - 1, c] = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}: row {r}, column {header[c]!r}: not a number: {cell!r}") from None
            if not np.isfinite(values[r - 1, c]):
                raise DataFormatError(f"{path}: row {r}, column {header[c]!r}: non-finite value")
    return header, values


def _check_binary(path, header, values, col: str) -> np.ndarray:
    a = values[:, header.index(col)]
    bad = np.flatnonzero((a != 0) & (a != 1))
    if bad.size:
        r = int(bad[0]) + 1
        raise DataFormatError(f"{path}: row {r}, column {col!r}: treatment must be 0 or 1, got {a[bad[0]]:g}")
    return a.astype(np.int64)


def load_synthetic(path) -> Dataset:
    """Read a file written by :func:`save_synthetic`.

    Noise-free response surfaces are recomputed from the covariates, since
    both synthetic settings share the same outcome model.
    """
    header, values = _read_table(path, ["a", "y", "y0", "y1", "tau"])
    xcols = [h for h in header if h.startswith("x")]
    if len(xcols) < 5:
        raise DataFormatError(f"{path}: need at least 5 covariate columns, found {len(xcols)}")
    X = values[:, [header.index(c) for c in xcols]]
    A = _check_binary(path, header, values, "a")
    col = lambda c: values[:, header.index(c)]  # noqa: E731
    mu0 = baseline(X)
    return Dataset(X, A, col("y"), col("y0"), col("y1"), mu0, mu0 + effect(X), None, "synthetic")


def load_ihdp(path) -> Dataset:
    """Read one IHDP replication.

    Header: ``treatment,y_factual,y_cfactual,mu0,mu1,x1,...,x25``.
    """
    xcols = [f"x{j}" for j in range(1, N_IHDP_COVARIATES + 1)]
    header, values = _read_table(path, ["treatment", "y_factual", "y_cfactual", "mu0", "mu1"] + xcols)
    extra = [h for h in header if h.startswith("x") and h not in xcols]
    if extra:
        raise DataFormatError(f"{path}: expected exactly {N_IHDP_COVARIATES} covariates, found extra {extra}")
    A = _check_binary(path, header, values, "treatment")
    col = lambda c: values[:, header.index(c)]  # noqa: E731
    Y, ycf = col("y_factual"), col("y_cfactual")
    y1 = np.where(A == 1, Y, ycf)
    y0 = np.where(A == 1, ycf, Y)
    X = values[:, [header.index(c) for c in xcols]]
    return Dataset(X, A, Y, y0, y1, col("mu0"), col("mu1"), None, "ihdp")


# splitting and scaling ----------------------------------------------------


def split(ds: Dataset, fractions=(0.7, 0.2, 0.1), seed: int = 0) -> Tuple[Dataset, Dataset, Dataset]:
    """Random train/val/test partition; train takes the rounding remainder."""
    idx = split_indices(len(ds), fractions, seed)
    return tuple(ds.subset(i) for i in idx)


def split_indices(n: int, fractions=(0.7, 0.2, 0.1), seed: int = 0):
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ContractError(f"split: fractions must be three non-negative values summing to 1, got {fractions}")
    if n < 10:
        raise ContractError(f"split: need at least 10 units, got {n}")
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    n_train = n - n_val - n_test
    if n_train < 1 or (fractions[1] > 0 and n_val < 1) or (fractions[2] > 0 and n_test < 1):
        raise ContractError(f"split: degenerate sizes {n_train}/{n_val}/{n_test} for n={n}")
    perm = Stream(seed, "split").permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]), np.sort(perm[n_train + n_val:])


@dataclass
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray) -> "Standardizer":
        Y = np.asarray(Y, dtype=np.float64).reshape(len(Y), -1)
        return cls(X.mean(0), _safe_std(X, "covariate"), Y.mean(0), _safe_std(Y, "outcome"))

    def x(self, X):
        return (X - self.x_mean) / self.x_std

    def y(self, Y):
        return (Y - self.y_mean) / self.y_std

    def y_inverse(self, Ys):
        return Ys * self.y_std + self.y_mean

    def x_inverse(self, Xs):
        return Xs * self.x_std + self.x_mean

    def to_dict(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in ("x_mean", "x_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(*(np.asarray(doc[k], dtype=np.float64) for k in ("x_mean", "x_std", "y_mean", "y_std")))


def _safe_std(M: np.ndarray, what: str) -> np.ndarray:
    std = M.std(0)
    zero = std <= 0
    if zero.any():
        log.warning("%d %s column(s) have zero variance; using std=1", int(zero.sum()), what)
        std = np.where(zero, 1.0, std)
    return std


def fit_standardizer(train: Dataset) -> Standardizer:
    return Standardizer.fit(train.X, train.Y)


@dataclass
class Batch:
    """Standardized arrays ready for training: ``X`` (n, d), ``A`` (n,), ``Y`` (n, d_y)."""

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.X.shape[0]

    def rows(self, idx) -> "Batch":
        return Batch(self.X[idx], self.A[idx], self.Y[idx])


def to_batch(ds: Dataset, std: Standardizer) -> Batch:
    return Batch(std.x(ds.X), ds.A.astype(np.int64), std.y(ds.Y.reshape(len(ds), -1)))
