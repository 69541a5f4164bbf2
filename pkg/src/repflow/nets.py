"""Representation encoder and FiLM-conditioned dual-head velocity network.

Parameters live in one flat ``dict`` keyed by stable dotted names, e.g.
``encoder.proj.W`` or ``velocity.head1.b``.  Weights are stored as
``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.

Checkpoint format (JSON, ``format_version`` 1)::

    {"format_version": 1,
     "dims": {"d_x": .., "d_y": .., "d_z": .., "hidden": .., "time_dim": ..},
     "use_encoder": true,
     "standardizer": {"x_mean": [..], "x_std": [..], "y_mean": [..], "y_std": [..]} | null,
     "params": {"<name>": {"shape": [..], "values": [row-major floats]}, ...}}
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .rng import Stream

FORMAT_VERSION = 1
N_FREQ = 16
TIME_FEATURES = 2 * N_FREQ
_FREQS = np.pi * 2.0 ** np.arange(N_FREQ)


@dataclass(frozen=True)
class ModelDims:
    d_x: int
    d_y: int = 1
    d_z: int = 32
    hidden: int = 128
    time_dim: int = 64

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) < 1:
                raise ContractError(f"ModelDims.{name} must be >= 1, got {value}")


def _linear_shapes(dims: ModelDims, use_encoder: bool) -> Dict[str, tuple]:
    h, ht = dims.hidden, dims.time_dim
    shapes: Dict[str, tuple] = {}
    cond = dims.d_z
    if use_encoder:
        shapes["encoder.proj"] = (dims.d_x, h)
        for blk in ("res1", "res2"):
            shapes[f"encoder.{blk}.1"] = (h, h)
            shapes[f"encoder.{blk}.2"] = (h, h)
        shapes["encoder.out"] = (h, dims.d_z)
    else:
        cond = dims.d_x
    shapes["velocity.y_emb"] = (dims.d_y, h)
    shapes["velocity.t_emb"] = (TIME_FEATURES, ht)
    shapes["velocity.film_gamma"] = (cond + ht, h)
    shapes["velocity.film_beta"] = (cond + ht, h)
    for blk in ("block1", "block2"):
        shapes[f"velocity.{blk}.gate"] = (h, h)
        shapes[f"velocity.{blk}.f"] = (h, h)
    shapes["velocity.head0"] = (h, dims.d_y)
    shapes["velocity.head1"] = (h, dims.d_y)
    return shapes


def _weight_name(layer: str) -> tuple:
    # encoder.res1.1 -> (encoder.res1.W1, encoder.res1.b1)
    head, _, tail = layer.rpartition(".")
    if tail.isdigit():
        return f"{head}.W{tail}", f"{head}.b{tail}"
    return f"{layer}.W", f"{layer}.b"


def init_params(dims: ModelDims, seed: int, use_encoder: bool = True) -> Dict[str, np.ndarray]:
    """Fan-in scaled uniform weights, zero biases; deterministic per seed."""
    params: Dict[str, np.ndarray] = {}
    for layer, (fan_in, fan_out) in _linear_shapes(dims, use_encoder).items():
        w_name, b_name = _weight_name(layer)
        bound = 1.0 / np.sqrt(fan_in)
        u = Stream(seed, "init", layer).uniform((fan_in, fan_out))
        params[w_name] = (2.0 * u - 1.0) * bound
        params[b_name] = np.zeros(fan_out)
    return params


def _lin(p: Mapping, layer: str, x):
    w_name, b_name = _weight_name(layer)
    return ad.linear(x, p[w_name], p[b_name])


def encoder_pre_norm(p: Mapping, X) -> Tensor:
    h = _lin(p, "encoder.proj", X)
    for blk in ("res1", "res2"):
        inner = ad.relu(_lin(p, f"encoder.{blk}.1", h))
        h = ad.add(h, _lin(p, f"encoder.{blk}.2", inner))
    return _lin(p, "encoder.out", h)


def encoder_forward(p: Mapping, X) -> Tensor:
    """Map covariates to unit-norm representations."""
    return ad.l2norm_rows(encoder_pre_norm(p, X))


def time_features(t: np.ndarray) -> np.ndarray:
    arg = np.asarray(t, dtype=np.float64)[:, None] * _FREQS[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def trunk_forward(p: Mapping, psi, t: np.ndarray, Z) -> Tensor:
    """Shared FiLM-conditioned trunk; returns the aggregated hidden state."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ContractError(f"velocity_forward: t must lie in [0, 1], got range [{t.min()}, {t.max()}]")
    temb = ad.silu(_lin(p, "velocity.t_emb", time_features(t)))
    cond = ad.concat([Z, temb])
    gamma = ad.shift(_lin(p, "velocity.film_gamma", cond), 1.0)
    beta = _lin(p, "velocity.film_beta", cond)
    h = ad.add(ad.mul(_lin(p, "velocity.y_emb", psi), gamma), beta)
    skips = []
    for blk in ("block1", "block2"):
        gate = ad.sigmoid(_lin(p, f"velocity.{blk}.gate", h))
        h = ad.add(h, ad.mul(gate, ad.silu(_lin(p, f"velocity.{blk}.f", h))))
        skips.append(h)
    return ad.add(skips[0], skips[1])


def velocity_forward(p: Mapping, psi, t, Z, A) -> Tensor:
    """Velocity for each row, read from head ``A[i]``."""
    hidden = trunk_forward(p, psi, t, Z)
    A = np.asarray(A).reshape(-1)
    if not np.all((A == 0) | (A == 1)):
        raise ContractError("velocity_forward: treatment must be binary")
    d_y = np.shape(p["velocity.head0.b"])[0]
    sel1 = np.repeat(A.astype(np.float64)[:, None], d_y, axis=1)
    v0 = _lin(p, "velocity.head0", hidden)
    v1 = _lin(p, "velocity.head1", hidden)
    return ad.add(ad.mul(v0, 1.0 - sel1), ad.mul(v1, sel1))


@dataclass
class Model:
    """Trained parameters plus the statistics needed to work in raw units."""

    dims: ModelDims
    params: Dict[str, np.ndarray]
    use_encoder: bool = True
    standardizer: Optional[object] = None
    meta: Dict[str, object] = field(default_factory=dict)

    def represent(self, X_std: np.ndarray) -> np.ndarray:
        """Conditioning vectors for already-standardized covariates."""
        if not self.use_encoder:
            return np.asarray(X_std, dtype=np.float64)
        return encoder_forward(self.params, X_std).value

    def velocity(self, y: np.ndarray, t, cond: np.ndarray, a) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (y.shape[0],))
        a = np.broadcast_to(np.asarray(a), (y.shape[0],))
        return velocity_forward(self.params, y, t, cond, a).value

    def encoder_params(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith("encoder.")}

    def velocity_params(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith("velocity.")}


def save_checkpoint(model: Model, path) -> None:
    std = model.standardizer
    doc = {
        "format_version": FORMAT_VERSION,
        "dims": asdict(model.dims),
        "use_encoder": model.use_encoder,
        "standardizer": None if std is None else std.to_dict(),
        "params": {
            name: {"shape": list(arr.shape), "values": [float(x) for x in arr.reshape(-1)]}
            for name, arr in sorted(model.params.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> Model:
    from .data import Standardizer

    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint format_version {doc.get('format_version')!r}")
    params = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    std = doc.get("standardizer")
    return Model(
        dims=ModelDims(**doc["dims"]),
        params=params,
        use_encoder=bool(doc["use_encoder"]),
        standardizer=None if std is None else Standardizer.from_dict(std),
    )
