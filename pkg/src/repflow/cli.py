"""Command-line entry point: ``repflow {gen,train,sample,eval,sweep}``.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import ContractError, NumericalInstabilityError
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import DataFormatError, Dataset, gen_setting_a, gen_setting_b, load_ihdp, load_synthetic, save_synthetic, split_indices
from .eval import ExperimentSpec, UnsupportedDatasetError, Variant, fit, run_experiment, sweep, sweep_csv
from .flow import FlowConfig, write_metrics
from .nets import ModelDims, load_checkpoint, save_checkpoint
from .rng import derive_seed
from .sampler import sample_outcomes

log = logging.getLogger("repflow")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


@dataclass(frozen=True)
class DataSource:
    """Picklable loader mapping a replication index to a dataset."""

    kind: str
    n: int
    d: int
    s: float
    path: Optional[str]
    seed: int

    def files(self):
        p = Path(self.path)
        if p.is_dir():
            found = sorted(p.glob("*.csv"))
            if not found:
                raise FileNotFoundError(f"{p}: no .csv files in directory")
            return found
        if not p.exists():
            raise FileNotFoundError(f"{p}: dataset file not found")
        return [p]

    def __call__(self, r: int = 0) -> Dataset:
        if self.path:
            files = self.files()
            f = files[r % len(files)]
            return load_ihdp(f) if self.kind == "ihdp" else load_synthetic(f)
        gen_seed = derive_seed(self.seed, "gen", r)
        if self.kind == "setting_a":
            return gen_setting_a(self.n, self.d, gen_seed)
        return gen_setting_b(self.n, self.d, self.s, gen_seed)


def data_source(cfg: RunConfig) -> DataSource:
    ds = cfg.dataset
    src = DataSource(ds.kind, ds.n, ds.d, ds.s, ds.path, cfg.seed)
    if ds.path:
        src.files()
    return src


def experiment_spec(cfg: RunConfig) -> ExperimentSpec:
    tr = cfg.train
    flow = FlowConfig(
        sigma=tr.sigma, lam=tr.lam, batch_size=tr.batch_size, steps=tr.steps, lr=tr.lr,
        sinkhorn_eps=tr.sinkhorn_eps, sinkhorn_max_iter=tr.sinkhorn_max_iter,
        sinkhorn_tol=tr.sinkhorn_tol, early_stopping=tr.early_stopping,
        patience=tr.patience, eval_every=tr.eval_every, seed=cfg.seed,
    )
    dims = ModelDims(d_x=1, d_y=1, d_z=cfg.model.latent_dim, hidden=cfg.model.hidden,
                     time_dim=cfg.model.time_dim)
    return ExperimentSpec(dims, flow, cfg.sample.M, cfg.sample.N, cfg.eval.K)


def _write(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_gen(cfg: RunConfig, out: str) -> None:
    if cfg.dataset.kind == "ihdp":
        raise ConfigError("gen: dataset.kind must be a synthetic setting")
    ds = DataSource(cfg.dataset.kind, cfg.dataset.n, cfg.dataset.d, cfg.dataset.s, None, cfg.seed)()
    save_synthetic(ds, out)
    print(f"n={len(ds)} d={ds.X.shape[1]} treated={int(ds.A.sum())}")


def _train_split(cfg: RunConfig):
    full = data_source(cfg)(0)
    return full, split_indices(len(full), seed=derive_seed(cfg.seed, "split", 0))


def cmd_train(cfg: RunConfig, out: str, variant: Variant) -> None:
    full, (tr, va, _) = _train_split(cfg)
    spec = experiment_spec(cfg)
    model, state = fit(full.subset(tr), full.subset(va), spec, variant, derive_seed(cfg.seed, "train", 0))
    save_checkpoint(model, out)
    write_metrics(state, str(out) + ".loss.csv")
    if state.history:
        lf, lb, lt = state.history[-1]
        print(f"steps={state.step} L_flow={lf:.6g} L_bal={lb:.6g} L_total={lt:.6g}")
    else:
        print("steps=0")


def cmd_sample(cfg: RunConfig, checkpoint: str, out: Optional[str]) -> None:
    model = load_checkpoint(checkpoint)
    full, (tr, va, te) = _train_split(cfg)
    units = te if cfg.sample.units == "test" else np.arange(len(full))
    if model.dims.d_x != full.X.shape[1]:
        raise ContractError(f"sample: checkpoint expects d_x={model.dims.d_x}, dataset has {full.X.shape[1]}")
    arm = cfg.sample.arm
    a = full.A[units] if str(arm) == "factual" else np.full(len(units), int(arm))
    draws = sample_outcomes(model, full.X[units], a, cfg.sample.M, cfg.sample.N,
                            derive_seed(cfg.seed, "sample"))
    lines = ["unit_id,a,m,y_hat"]
    for i, unit in enumerate(units):
        for m in range(cfg.sample.M):
            lines.append(f"{int(unit)},{int(a[i])},{m},{float(draws[i, m, 0])!r}")
    _write("\n".join(lines) + "\n", out)


def cmd_eval(cfg: RunConfig, out: Optional[str], variant: Variant, jobs: int) -> None:
    report = run_experiment(data_source(cfg), experiment_spec(cfg), variant, cfg.eval.replications,
                            cfg.seed, cfg.dataset.kind, jobs)
    _write(report.to_csv(), out)


def cmd_sweep(cfg: RunConfig, out: Optional[str], variant: Variant, jobs: int) -> None:
    results = sweep(data_source(cfg), cfg.sweep.param, cfg.sweep.grid, experiment_spec(cfg), cfg.seed,
                    cfg.eval.replications, variant, cfg.dataset.kind, jobs)
    _write(sweep_csv(cfg.sweep.param, results), out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "sample", "eval", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run config (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config's root seed")
        p.add_argument("--out", help="output path (stdout for CSV reports when omitted)")
        p.add_argument("--jobs", type=int, default=1, help="parallel replications")
        p.add_argument("--variant", choices=[v.value for v in Variant], help="override eval.variant")
        if name == "sample":
            p.add_argument("--checkpoint", required=True)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else parse_config({})
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        variant = Variant(args.variant or cfg.eval.variant)
        if args.command in ("gen", "train") and not args.out:
            raise ConfigError(f"{args.command}: --out is required")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.command == "gen":
            cmd_gen(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.out, variant)
        elif args.command == "sample":
            cmd_sample(cfg, args.checkpoint, args.out)
        elif args.command == "eval":
            cmd_eval(cfg, args.out, variant, args.jobs)
        else:
            cmd_sweep(cfg, args.out, variant, args.jobs)
    except NumericalInstabilityError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ContractError, DataFormatError, UnsupportedDatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
