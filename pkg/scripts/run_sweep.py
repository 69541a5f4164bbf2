"""Sensitivity sweep over the balance weight or the latent width.

    python scripts/run_sweep.py --param lambda --grid 0 0.01 0.1 1 --out sweep.csv
"""

import argparse
import sys

from repflow.cli import DataSource
from repflow.eval import ExperimentSpec, Variant, sweep, sweep_csv
from repflow.flow import FlowConfig
from repflow.nets import ModelDims


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--param", choices=["lambda", "latent_dim"], default="lambda")
    ap.add_argument("--grid", type=float, nargs="+", default=[0.0, 0.1, 1.0, 10.0])
    ap.add_argument("--setting", choices=["setting_a", "setting_b"], default="setting_a")
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--replications", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    grid = [int(g) for g in args.grid] if args.param == "latent_dim" else args.grid
    load = DataSource(args.setting, args.n, 10, 0.5, None, args.seed)
    spec = ExperimentSpec(ModelDims(d_x=10), FlowConfig(steps=args.steps), M=10, N=8)
    results = sweep(load, args.param, grid, spec, args.seed, args.replications, Variant.full, args.setting, args.jobs)
    text = sweep_csv(args.param, results)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
