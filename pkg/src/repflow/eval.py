"""Causal-effect metrics, ablation runs, sweeps and bound diagnostics."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from .autodiff import ContractError
from .balance import latent_group_distance
from .data import Dataset, fit_standardizer, split, to_batch
from .flow import FlowConfig, train
from .nets import Model, ModelDims
from .rng import Stream, derive_seed
from .sampler import estimate_cate, rk4_integrate, sample_outcomes

log = logging.getLogger(__name__)


class UnsupportedDatasetError(ValueError):
    """The dataset lacks the ground truth a metric needs."""


class Variant(str, Enum):
    full = "full"
    no_rep = "no_rep"
    lambda_zero = "lambda_zero"
    mmd_balance = "mmd_balance"


# metrics ------------------------------------------------------------------


def _pair(a, b, name: str):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{name}: length mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError(f"{name}: empty input")
    return a, b


def pehe_sqrt(tau_hat, tau) -> float:
    tau_hat, tau = _pair(tau_hat, tau, "pehe_sqrt")
    return float(np.sqrt(np.mean((tau_hat - tau) ** 2)))


def ate_error(tau_hat, tau) -> float:
    tau_hat, tau = _pair(tau_hat, tau, "ate_error")
    return float(abs(tau_hat.mean() - tau.mean()))


def empirical_w1(y_hat, y_true) -> float:
    """Mean Euclidean distance between index-paired draws."""
    y_hat, y_true = _pair(y_hat, y_true, "empirical_w1")
    if y_hat.ndim == 1:
        return float(np.mean(np.abs(y_hat - y_true)))
    return float(np.mean(np.sqrt(((y_hat - y_true) ** 2).sum(axis=1))))


def sorted_w1(y_hat, y_true) -> float:
    """1-D Wasserstein-1 between the two empirical laws (rank pairing)."""
    y_hat, y_true = _pair(np.ravel(y_hat), np.ravel(y_true), "sorted_w1")
    return float(np.mean(np.abs(np.sort(y_hat) - np.sort(y_true))))


# reports ------------------------------------------------------------------


METRICS = ("pehe_sqrt_in", "ate_err_in", "pehe_sqrt_out", "ate_err_out",
           "w1_in", "w1_out", "w1_sorted_in", "w1_sorted_out", "latent_distance")


@dataclass
class MetricsReport:
    variant: str
    dataset: str
    per_replication: List[Dict[str, Optional[float]]] = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        vals = [r.get(metric) for r in self.per_replication]
        return np.array([v for v in vals if v is not None], dtype=np.float64)

    def mean(self, metric: str) -> Optional[float]:
        v = self.values(metric)
        return float(v.mean()) if v.size else None

    def median(self, metric: str) -> Optional[float]:
        v = self.values(metric)
        return float(np.median(v)) if v.size else None

    def stderr(self, metric: str) -> Optional[float]:
        v = self.values(metric)
        if v.size < 2:
            return None
        return float(v.std(ddof=1) / np.sqrt(v.size))

    def metrics(self) -> List[str]:
        return [m for m in METRICS if self.values(m).size]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "dataset", "replication", "metric", "value"])
        for r, rec in enumerate(self.per_replication):
            for m in METRICS:
                if rec.get(m) is not None:
                    w.writerow([self.variant, self.dataset, r, m, _num(rec[m])])
        for m in self.metrics():
            w.writerow([self.variant, self.dataset, "mean", m, _num(self.mean(m))])
            w.writerow([self.variant, self.dataset, "stderr", m, _num(self.stderr(m))])
        return buf.getvalue()


def _num(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


# experiment ---------------------------------------------------------------


@dataclass
class ExperimentSpec:
    """Everything a replication needs besides the data source."""

    dims: ModelDims
    flow: FlowConfig
    M: int = 100
    N: int = 20
    K: int = 64


def variant_setup(variant: Variant, flow: FlowConfig):
    """Return ``(flow_config, use_encoder)`` for an ablation variant."""
    variant = Variant(variant)
    if variant is Variant.lambda_zero:
        return replace(flow, lam=0.0), True
    if variant is Variant.mmd_balance:
        return replace(flow, balance="mmd"), True
    if variant is Variant.no_rep:
        return replace(flow, lam=0.0), False
    return flow, True


def fit(train_ds: Dataset, val_ds: Optional[Dataset], spec: ExperimentSpec,
        variant: Variant = Variant.full, seed: int = 0):
    """Standardize, train one model and return ``(model, train_state)``."""
    std = fit_standardizer(train_ds)
    flow, use_encoder = variant_setup(variant, spec.flow)
    flow = replace(flow, seed=seed)
    dims = replace(spec.dims, d_x=train_ds.X.shape[1], d_y=1)
    val = to_batch(val_ds, std) if val_ds is not None and len(val_ds) else None
    state = train(to_batch(train_ds, std), flow, dims, val, use_encoder)
    state.model.standardizer = std
    return state.model, state


def w1_pair(model: Model, ds: Dataset, N: int, seed: int):
    """Index-paired and rank-paired W1 over both arms, one draw per unit and arm."""
    std = model.standardizer
    cond = model.represent(std.x(ds.X))
    paired, ranked = [], []
    for a, mu in ((0, ds.mu0), (1, ds.mu1)):
        y1 = Stream(seed, "w1", "noise", a).normal((len(ds), 1))
        y_hat = std.y_inverse(rk4_integrate(model, y1, cond, a, N))[:, 0]
        y_true = mu + Stream(seed, "w1", "truth", a).normal(len(ds))
        paired.append(empirical_w1(y_hat, y_true))
        ranked.append(sorted_w1(y_hat, y_true))
    return float(np.mean(paired)), float(np.mean(ranked))


def evaluate_model(model: Model, in_ds: Dataset, out_ds: Dataset, spec: ExperimentSpec,
                   seed: int, eps: float) -> Dict[str, Optional[float]]:
    if not in_ds.has_ground_truth:
        raise UnsupportedDatasetError("CATE metrics need mu0/mu1 ground truth")
    rec: Dict[str, Optional[float]] = {}
    for tag, ds in (("in", in_ds), ("out", out_ds)):
        tau_hat = estimate_cate(model, ds.X, spec.M, spec.N, derive_seed(seed, "cate", tag))[:, 0]
        rec[f"pehe_sqrt_{tag}"] = pehe_sqrt(tau_hat, ds.tau)
        rec[f"ate_err_{tag}"] = ate_error(tau_hat, ds.tau)
        if ds.outcome_noise:
            rec[f"w1_{tag}"], rec[f"w1_sorted_{tag}"] = w1_pair(model, ds, spec.N, derive_seed(seed, "w1", tag))
        else:
            rec[f"w1_{tag}"] = rec[f"w1_sorted_{tag}"] = None
    A = out_ds.A
    if (A == 0).any() and (A == 1).any():
        rec["latent_distance"] = latent_group_distance(model, model.standardizer.x(out_ds.X), A, eps)
    else:
        rec["latent_distance"] = None
    return rec


def run_replication(load, spec: ExperimentSpec, variant: Variant, seed: int, r: int):
    """One replication: load data, split 70/20/10, train, evaluate."""
    ds = load(r)
    train_ds, val_ds, test_ds = split(ds, seed=derive_seed(seed, "split", r))
    model, _ = fit(train_ds, val_ds, spec, variant, derive_seed(seed, "train", r))
    in_ds = _concat(train_ds, val_ds)
    return evaluate_model(model, in_ds, test_ds, spec, derive_seed(seed, "eval", r),
                          spec.flow.sinkhorn_eps)


def _concat(a: Dataset, b: Dataset) -> Dataset:
    def cat(x, y):
        return None if x is None else np.concatenate([x, y])

    return Dataset(np.vstack([a.X, b.X]), cat(a.A, b.A), cat(a.Y, b.Y), cat(a.y0, b.y0),
                   cat(a.y1, b.y1), cat(a.mu0, b.mu0), cat(a.mu1, b.mu1),
                   cat(a.propensity, b.propensity), a.kind)


def _run_one(args):
    return run_replication(*args)


def run_experiment(load, spec: ExperimentSpec, variant: Variant = Variant.full,
                   replications: int = 1, seed: int = 0, dataset_name: str = "dataset",
                   jobs: int = 1) -> MetricsReport:
    """Train and score ``replications`` independent runs.

    ``load(r)`` returns the :class:`Dataset` for replication ``r``; it must be
    picklable when ``jobs > 1``.
    """
    if replications < 1:
        raise ContractError(f"replications must be >= 1, got {replications}")
    variant = Variant(variant)
    tasks = [(load, spec, variant, seed, r) for r in range(replications)]
    if jobs > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, tasks))
    else:
        records = [_run_one(t) for t in tasks]
    return MetricsReport(variant.value, dataset_name, records)


SWEEP_PARAMS = ("lambda", "latent_dim")


def sweep(load, param: str, grid: Sequence[float], spec: ExperimentSpec, seed: int = 0,
          replications: int = 1, variant: Variant = Variant.full, dataset_name: str = "dataset",
          jobs: int = 1):
    """One experiment per grid value with identical seeds; returns ``[(value, report)]``."""
    if param not in SWEEP_PARAMS:
        raise ContractError(f"sweep: unknown parameter {param!r}; expected one of {SWEEP_PARAMS}")
    if not len(grid):
        raise ContractError("sweep: empty grid")
    out = []
    for value in grid:
        if param == "lambda":
            s = replace(spec, flow=replace(spec.flow, lam=float(value)))
        else:
            s = replace(spec, dims=replace(spec.dims, d_z=int(value)))
        out.append((value, run_experiment(load, s, variant, replications, seed, dataset_name, jobs)))
    return out


def sweep_csv(param: str, results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["param", "value", "metric", "mean", "stderr"])
    for value, report in results:
        for m in report.metrics():
            w.writerow([param, value, m, _num(report.mean(m)), _num(report.stderr(m))])
    return buf.getvalue()


# bound diagnostic ---------------------------------------------------------


def bound_diagnostic(model: Model, test_ds: Dataset, spec: ExperimentSpec, seed: int = 0,
                     eps: float = 0.1) -> Dict[str, float]:
    """Factual distribution errors per group and the latent group distance.

    For each unit of group ``a`` the factual error is the rank-paired W1
    between ``K`` generated draws and ``K`` fresh draws of the true outcome
    law ``N(mu_a(x), 1)``.  The bound's Lipschitz constant is not
    estimated, so no inequality is checked here.
    """
    if not (test_ds.has_ground_truth and test_ds.outcome_noise):
        raise UnsupportedDatasetError("bound_diagnostic needs a synthetic dataset with known outcome law")
    rec = {}
    for a, mu in ((0, test_ds.mu0), (1, test_ds.mu1)):
        idx = np.flatnonzero(test_ds.A == a)
        if idx.size == 0:
            raise UnsupportedDatasetError(f"bound_diagnostic: no units in group a={a}")
        gen = sample_outcomes(model, test_ds.X[idx], a, spec.K, spec.N, derive_seed(seed, "bound", a))[:, :, 0]
        truth = mu[idx, None] + Stream(seed, "bound", "truth", a).normal((idx.size, spec.K))
        per_unit = np.abs(np.sort(gen, axis=1) - np.sort(truth, axis=1)).mean(axis=1)
        rec[f"factual_err_a{a}"] = float(per_unit.mean())
    rec["latent_distance"] = latent_group_distance(model, model.standardizer.x(test_ds.X), test_ds.A, eps)
    return rec
