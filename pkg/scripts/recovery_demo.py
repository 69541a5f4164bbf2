"""Fit a 1-D Gaussian outcome with a constant covariate and report the generated moments."""

import argparse

import numpy as np

from repflow.data import Dataset
from repflow.eval import ExperimentSpec, fit
from repflow.flow import FlowConfig
from repflow.nets import ModelDims
from repflow.rng import Stream
from repflow.sampler import sample_outcomes


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mean", type=float, default=2.0)
    ap.add_argument("--std", type=float, default=0.5)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--draws", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    n = 1000
    y = args.mean + args.std * Stream(args.seed, "demo").normal(n)
    ds = Dataset(np.ones((n, 1)), np.zeros(n, dtype=np.int64), y, kind="demo")
    model, state = fit(ds, None, ExperimentSpec(ModelDims(d_x=1), FlowConfig(steps=args.steps)), seed=args.seed)
    draws = sample_outcomes(model, np.ones((1, 1)), 0, M=args.draws, N=20, seed=args.seed)[0, :, 0]
    print(f"final L_flow {state.history[-1][0]:.4f}")
    print(f"target mean {args.mean:.3f} std {args.std:.3f}")
    print(f"draws  mean {draws.mean():.3f} std {draws.std():.3f}")


if __name__ == "__main__":
    main()
