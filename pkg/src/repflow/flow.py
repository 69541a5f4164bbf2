"""Conditional flow matching on top of a balanced representation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, ContractError, NumericalInstabilityError, Tape, Tensor
from .balance import balance_loss, mmd
from .data import Batch
from .nets import Model, ModelDims, encoder_forward, init_params, velocity_forward
from .rng import Stream

log = logging.getLogger(__name__)

VelocityFn = Callable[..., object]


@dataclass
class FlowConfig:
    sigma: float = 0.01
    lam: float = 1.0
    batch_size: int = 256
    steps: int = 5000
    lr: float = 1e-3
    sinkhorn_eps: float = 0.1
    sinkhorn_max_iter: int = 200
    sinkhorn_tol: float = 1e-6
    balance: str = "sinkhorn"
    early_stopping: bool = False
    patience: int = 20
    eval_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ContractError(f"sigma must be > 0, got {self.sigma}")
        if self.lam < 0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")
        if self.batch_size < 1 or self.steps < 0 or self.patience < 1 or self.eval_every < 1:
            raise ContractError("batch_size, patience and eval_every must be positive; steps non-negative")
        if not self.lr > 0 or not self.sinkhorn_eps > 0:
            raise ContractError("lr and sinkhorn_eps must be positive")
        if self.balance not in ("sinkhorn", "mmd"):
            raise ContractError(f"balance must be 'sinkhorn' or 'mmd', got {self.balance!r}")


def interpolant(y0, y1, t, sigma: float) -> np.ndarray:
    """Noisy linear path: ``(1 - t) y0 + (t + sigma (1 - t)) y1``."""
    y0 = np.asarray(y0, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ContractError(f"interpolant: t must lie in [0, 1], got range [{t.min()}, {t.max()}]")
    return (1.0 - t) * y0 + (t + sigma * (1.0 - t)) * y1


def target_velocity(y0, y1, sigma: float) -> np.ndarray:
    return (1.0 - sigma) * np.asarray(y1, dtype=np.float64) - np.asarray(y0, dtype=np.float64)


def flow_matching_loss(v_pred, u) -> Tensor:
    return ad.mse(v_pred, u)


def total_loss(l_flow, l_bal, lam: float) -> Tensor:
    return ad.add(ad.as_tensor(l_flow), ad.scale(l_bal, lam))


def represent(params, X, use_encoder: bool = True):
    return encoder_forward(params, X) if use_encoder else ad.as_tensor(X)


def flow_loss(params, batch: Batch, sigma: float, stream: Stream,
              use_encoder: bool = True, velocity_fn: Optional[VelocityFn] = None,
              Z=None) -> Tensor:
    """Flow-matching loss on one batch with fresh ``t`` and Gaussian noise.

    ``velocity_fn(psi, t, Z, A)`` replaces the network when given.
    """
    n = len(batch)
    if n == 0:
        raise ContractError("flow_loss: empty batch")
    y0 = batch.Y
    t = stream.uniform(n)
    y1 = stream.normal(y0.shape)
    psi = interpolant(y0, y1, t, sigma)
    u = target_velocity(y0, y1, sigma)
    if Z is None:
        Z = represent(params, batch.X, use_encoder)
    if velocity_fn is None:
        v = velocity_forward(params, psi, t, Z, batch.A)
    else:
        v = velocity_fn(psi, t, Z, batch.A)
    return flow_matching_loss(v, u)


@dataclass
class TrainState:
    model: Model
    adam_encoder: Optional[AdamState]
    adam_velocity: AdamState
    step: int = 0
    history: List[Tuple[float, float, float]] = field(default_factory=list)
    skipped_balance: List[int] = field(default_factory=list)
    sinkhorn_calls: int = 0
    best_step: Optional[int] = None


def _split_params(params: Dict[str, np.ndarray]):
    enc = {k: v for k, v in params.items() if k.startswith("encoder.")}
    vel = {k: v for k, v in params.items() if k.startswith("velocity.")}
    return enc, vel


def init_state(dims: ModelDims, config: FlowConfig, use_encoder: bool = True) -> TrainState:
    params = init_params(dims, config.seed, use_encoder)
    enc, vel = _split_params(params)
    return TrainState(
        model=Model(dims, params, use_encoder),
        adam_encoder=AdamState.zeros_like(enc) if use_encoder else None,
        adam_velocity=AdamState.zeros_like(vel),
    )


def _balance_term(Z: Tensor, A: np.ndarray, config: FlowConfig) -> Tensor:
    Z0 = ad.take_rows(Z, np.flatnonzero(A == 0))
    Z1 = ad.take_rows(Z, np.flatnonzero(A == 1))
    if config.balance == "mmd":
        return mmd(Z0, Z1)
    return balance_loss(Z0, Z1, config.sinkhorn_eps, config.sinkhorn_max_iter, config.sinkhorn_tol)


def training_step(params: Dict[str, np.ndarray], batch: Batch, config: FlowConfig,
                  stream: Stream, use_encoder: bool = True):
    """Losses and gradients for one mini-batch from a single tape.

    Returns ``(l_flow, l_bal, l_total, grads, balanced)``.  The encoder
    receives the gradient of the total loss and the velocity network that
    of the flow loss; both come from one backward pass since the balance
    term does not depend on velocity parameters.
    """
    balanced = (use_encoder and config.lam > 0
                and (batch.A == 0).any() and (batch.A == 1).any())
    with Tape() as tape:
        leaves = {k: tape.watch(v) for k, v in params.items()}
        Z = represent(leaves, batch.X, use_encoder)
        l_flow = flow_loss(leaves, batch, config.sigma, stream, use_encoder, Z=Z)
        if balanced:
            l_bal = _balance_term(Z, batch.A, config)
            l_total = total_loss(l_flow, l_bal, config.lam)
        else:
            l_bal = ad.Tensor(0.0)
            l_total = l_flow
        grads = dict(zip(leaves, tape.gradient(l_total, leaves.values())))
    return l_flow.item(), l_bal.item(), l_total.item(), grads, balanced


def _batches(n: int, batch_size: int, seed: int):
    epoch = 0
    while True:
        perm = Stream(seed, "train", "epoch", epoch).permutation(n)
        if batch_size >= n:
            yield perm
        else:
            for lo in range(0, n, batch_size):
                yield perm[lo:lo + batch_size]
        epoch += 1


def validation_loss(model: Model, val: Batch, config: FlowConfig) -> float:
    stream = Stream(config.seed, "validation")
    return flow_loss(model.params, val, config.sigma, stream, model.use_encoder).item()


def train(train_batch: Batch, config: FlowConfig, dims: ModelDims,
          val_batch: Optional[Batch] = None, use_encoder: bool = True,
          state: Optional[TrainState] = None) -> TrainState:
    """Run ``config.steps`` joint updates of encoder and velocity network."""
    if len(train_batch) == 0:
        raise ContractError("train: empty training split")
    state = state or init_state(dims, config, use_encoder)
    batches = _batches(len(train_batch), config.batch_size, config.seed)
    best = (np.inf, None, 0)
    evals_since_best = 0
    for _ in range(config.steps):
        k = state.step
        idx = next(batches)
        batch = train_batch.rows(idx)
        stream = Stream(config.seed, "train", "step", k)
        l_flow, l_bal, l_total, grads, balanced = training_step(
            state.model.params, batch, config, stream, use_encoder)
        if not np.isfinite(l_total):
            raise NumericalInstabilityError(
                f"step {k}: non-finite loss (L_flow={l_flow}, L_bal={l_bal})")
        if balanced:
            if config.balance == "sinkhorn":
                state.sinkhorn_calls += 1
        elif use_encoder and config.lam > 0:
            state.skipped_balance.append(k)
            log.info("step %d: batch lacks a treatment group; balance term skipped", k)
        enc, vel = _split_params(state.model.params)
        g_enc, g_vel = _split_params(grads)
        vel, state.adam_velocity = ad.adam_step(vel, g_vel, state.adam_velocity, config.lr)
        if use_encoder:
            enc, state.adam_encoder = ad.adam_step(enc, g_enc, state.adam_encoder, config.lr)
        state.model.params = {**enc, **vel}
        state.history.append((l_flow, l_bal, l_total))
        state.step += 1

        if config.early_stopping and val_batch is not None and state.step % config.eval_every == 0:
            val = validation_loss(state.model, val_batch, config)
            if val < best[0]:
                best = (val, dict(state.model.params), state.step)
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= config.patience:
                    log.info("early stop at step %d (best step %d)", state.step, best[2])
                    break
    if best[1] is not None:
        state.model.params = best[1]
        state.best_step = best[2]
    return state


def write_metrics(state: TrainState, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "L_flow", "L_bal", "L_total"])
        for k, (lf, lb, lt) in enumerate(state.history):
            w.writerow([k, repr(lf), repr(lb), repr(lt)])
