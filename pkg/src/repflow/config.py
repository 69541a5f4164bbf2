"""YAML run configuration.

A run config is one YAML mapping with ``schema_version: 1``.  Every section
and key is optional; absent keys take the defaults below and unknown keys
are rejected with their dotted path::

    schema_version: 1
    seed: 0
    dataset:
      kind: setting_a        # setting_a | setting_b | ihdp
      n: 2000
      d: 10
      s: 0.5                 # setting_b shift
      path: null             # synthetic CSV, or IHDP file / directory of files
    model:
      latent_dim: 32
      hidden: 128
      time_dim: 64
    train:
      sigma: 0.01
      lambda: 1.0
      batch_size: 256
      steps: 5000
      lr: 0.001
      sinkhorn_eps: 0.1
      sinkhorn_max_iter: 200
      sinkhorn_tol: 1.0e-6
      early_stopping: false
      patience: 20
      eval_every: 50
    sample:
      M: 100
      N: 20
      arm: factual           # 0 | 1 | factual
      units: test            # test | all
    eval:
      replications: 1
      variant: full          # full | no_rep | lambda_zero | mmd_balance
      K: 64
    sweep:
      param: lambda          # lambda | latent_dim
      grid: [0.0, 0.1, 1.0, 10.0]
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """The run configuration is invalid."""


@dataclass
class DatasetSection:
    kind: str = "setting_a"
    n: int = 2000
    d: int = 10
    s: float = 0.5
    path: Optional[str] = None


@dataclass
class ModelSection:
    latent_dim: int = 32
    hidden: int = 128
    time_dim: int = 64


@dataclass
class TrainSection:
    sigma: float = 0.01
    lam: float = 1.0
    batch_size: int = 256
    steps: int = 5000
    lr: float = 1e-3
    sinkhorn_eps: float = 0.1
    sinkhorn_max_iter: int = 200
    sinkhorn_tol: float = 1e-6
    early_stopping: bool = False
    patience: int = 20
    eval_every: int = 50


@dataclass
class SampleSection:
    M: int = 100
    N: int = 20
    arm: str = "factual"
    units: str = "test"


@dataclass
class EvalSection:
    replications: int = 1
    variant: str = "full"
    K: int = 64


@dataclass
class SweepSection:
    param: str = "lambda"
    grid: List[float] = field(default_factory=lambda: [0.0, 0.1, 1.0, 10.0])


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sample: SampleSection = field(default_factory=SampleSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)


# YAML key -> dataclass field, where they differ.
_ALIASES = {("train", "lambda"): "lam"}

_SECTIONS = {
    "dataset": DatasetSection, "model": ModelSection, "train": TrainSection,
    "sample": SampleSection, "eval": EvalSection, "sweep": SweepSection,
}


def _coerce(value, target: type, where: str):
    try:
        if target in (int, "int"):
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        if target in (float, "float"):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if target in (bool, "bool"):
            if not isinstance(value, bool):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"config: {where} has invalid value {value!r} (expected {target})") from None
    return value


def _build(cls, doc, section: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"config: section {section!r} must be a mapping")
    types = {f.name: f.type for f in fields(cls)}
    hidden = {v for (s, _), v in _ALIASES.items() if s == section}
    kwargs = {}
    for key, value in doc.items():
        name = _ALIASES.get((section, key), key)
        if name not in types or key in hidden:
            raise ConfigError(f"config: unknown key {section}.{key}")
        kwargs[name] = _coerce(value, types[name], f"{section}.{key}")
    return cls(**kwargs)


def parse_config(doc: dict) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a mapping")
    doc = dict(doc)
    version = doc.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    seed = doc.pop("seed", 0)
    unknown = [k for k in doc if k not in _SECTIONS]
    if unknown:
        raise ConfigError(f"config: unknown key {unknown[0]}")
    cfg = RunConfig(seed=_coerce(seed, int, "seed"),
                    **{name: _build(cls, doc.get(name), name) for name, cls in _SECTIONS.items()})
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    ds = cfg.dataset
    if ds.kind not in ("setting_a", "setting_b", "ihdp"):
        raise ConfigError(f"config: dataset.kind must be setting_a, setting_b or ihdp, got {ds.kind!r}")
    if ds.kind == "ihdp" and not ds.path:
        raise ConfigError("config: dataset.path is required for kind ihdp")
    if ds.kind != "ihdp" and ds.path is None and ds.d < 5:
        raise ConfigError(f"config: dataset.d must be >= 5 for synthetic settings, got {ds.d}")
    if ds.n < 10:
        raise ConfigError(f"config: dataset.n must be >= 10, got {ds.n}")
    for name in ("latent_dim", "hidden", "time_dim"):
        if getattr(cfg.model, name) < 1:
            raise ConfigError(f"config: model.{name} must be >= 1")
    tr = cfg.train
    if tr.sigma <= 0:
        raise ConfigError("config: train.sigma must be > 0")
    if tr.lam < 0:
        raise ConfigError("config: train.lambda must be >= 0")
    for name in ("batch_size", "sinkhorn_max_iter", "patience", "eval_every"):
        if getattr(tr, name) < 1:
            raise ConfigError(f"config: train.{name} must be >= 1")
    if tr.steps < 0:
        raise ConfigError("config: train.steps must be >= 0")
    for name in ("lr", "sinkhorn_eps", "sinkhorn_tol"):
        if getattr(tr, name) <= 0:
            raise ConfigError(f"config: train.{name} must be > 0")
    sm = cfg.sample
    if sm.M < 1 or sm.N < 1:
        raise ConfigError("config: sample.M and sample.N must be >= 1")
    if str(sm.arm) not in ("0", "1", "factual"):
        raise ConfigError(f"config: sample.arm must be 0, 1 or factual, got {sm.arm!r}")
    if sm.units not in ("test", "all"):
        raise ConfigError(f"config: sample.units must be test or all, got {sm.units!r}")
    ev = cfg.eval
    if ev.replications < 1 or ev.K < 1:
        raise ConfigError("config: eval.replications and eval.K must be >= 1")
    if ev.variant not in ("full", "no_rep", "lambda_zero", "mmd_balance"):
        raise ConfigError(f"config: eval.variant must be full, no_rep, lambda_zero or mmd_balance, got {ev.variant!r}")
    if cfg.sweep.param not in ("lambda", "latent_dim"):
        raise ConfigError(f"config: sweep.param must be lambda or latent_dim, got {cfg.sweep.param!r}")
    if not isinstance(cfg.sweep.grid, list) or not cfg.sweep.grid:
        raise ConfigError("config: sweep.grid must be a non-empty list")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(doc)
