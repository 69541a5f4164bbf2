"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL/SKIP line; the lines are printed in the
pytest terminal summary and also when the module is run as a script.
Set ``REPFLOW_IHDP_DIR`` to a directory of IHDP replication CSVs to enable
criterion 8.
"""

from __future__ import annotations

import math
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from repflow import autodiff as ad
from repflow.balance import cost_matrix, exact_ot_oracle, sinkhorn
from repflow.cli import run as cli_run
from repflow.data import Batch, Dataset, gen_setting_a, load_ihdp
from repflow.eval import (ExperimentSpec, Variant, ate_error, empirical_w1, fit, pehe_sqrt, run_experiment,
                          run_replication)
from repflow.flow import FlowConfig, flow_loss, interpolant, target_velocity
from repflow.nets import ModelDims, init_params
from repflow.rng import Stream, derive_seed
from repflow.sampler import rk4, sample_outcomes

RESULTS: list[str] = []


def record(number: int, title: str, passed: bool, detail: str, seconds: float) -> None:
    RESULTS.append(f"{'PASS' if passed else 'FAIL'} [{number:2d}] {title}: {detail} ({seconds:.1f}s)")


def record_skip(number: int, title: str, reason: str) -> None:
    RESULTS.append(f"SKIP [{number:2d}] {title}: {reason}")


# 1 -------------------------------------------------------------------------


def test_c01_gradient_correctness():
    t0 = time.time()
    dims = ModelDims(d_x=3, d_y=1, d_z=4, hidden=6, time_dim=5)
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        batch = Batch(rng.normal(size=(8, 3)), np.array([0, 1] * 4), rng.normal(size=(8, 1)))
        params = init_params(dims, seed)
        for k in params:  # non-zero biases exercise every path
            if ".b" in k:
                params[k] = 0.1 * rng.normal(size=params[k].shape)

        def loss(p):
            return flow_loss(p, batch, 0.01, Stream(seed, "gradcheck"))

        worst = max(worst, max(ad.grad_check(loss, params).max_rel_err.values()))
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 30
    record(1, "gradient check, encoder+velocity loss", ok, f"max rel err {worst:.2e} over 5 seeds", elapsed)
    assert ok


# 2 -------------------------------------------------------------------------


def test_c02_sinkhorn_vs_exact():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    worst_gap, min_margin = 0.0, np.inf
    for _ in range(20):
        Z0, Z1 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        Z0 /= np.linalg.norm(Z0, axis=1, keepdims=True)
        Z1 /= np.linalg.norm(Z1, axis=1, keepdims=True)
        H = cost_matrix(Z0, Z1).value
        exact = exact_ot_oracle(H)
        sharp = sinkhorn(H, eps=0.005 * H.mean(), max_iter=2000, tol=1e-9).sharp_cost
        worst_gap = max(worst_gap, abs(sharp - exact) / exact)
        min_margin = min(min_margin, sharp - exact)
    elapsed = time.time() - t0
    ok = worst_gap <= 0.02 and min_margin >= -1e-9 and elapsed < 10
    record(2, "Sinkhorn vs permutation OT", ok,
           f"worst rel gap {worst_gap:.2e}, min(sharp-exact) {min_margin:.1e}", elapsed)
    assert ok


# 3 -------------------------------------------------------------------------


def test_c03_interpolant_identities():
    t0 = time.time()
    rng = np.random.default_rng(3)
    y0, y1 = rng.normal(size=(64, 3)), rng.normal(size=(64, 3))
    sigma = 0.01
    err0 = np.abs(interpolant(y0, y1, np.zeros(64), sigma) - (y0 + sigma * y1)).max()
    err1 = np.abs(interpolant(y0, y1, np.ones(64), sigma) - y1).max()
    u = target_velocity(y0, y1, sigma)
    worst = 0.0
    h = 1e-6
    for t in np.linspace(0.05, 0.95, 19):
        fd = (interpolant(y0, y1, np.full(64, t + h), sigma)
              - interpolant(y0, y1, np.full(64, t - h), sigma)) / (2 * h)
        worst = max(worst, np.linalg.norm(fd - u) / np.linalg.norm(u))
    elapsed = time.time() - t0
    ok = err0 <= 1e-15 and err1 == 0.0 and worst < 1e-8
    record(3, "interpolant and target identities", ok,
           f"|psi0 err| {err0:.1e}, |psi1 err| {err1:.1e}, d/dt rel err {worst:.1e}", elapsed)
    assert ok


# 4 -------------------------------------------------------------------------


def test_c04_rk4_order():
    t0 = time.time()

    def field(y, t):
        return np.sin(y) * np.cos(3.0 * t) - 0.5 * t * y

    y1 = np.random.default_rng(4).normal(size=(16, 2))
    ref = rk4(field, y1, 1024)
    errs = [np.abs(rk4(field, y1, n) - ref).max() for n in (10, 20, 40)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    elapsed = time.time() - t0
    ok = all(10 <= r <= 22 for r in ratios) and elapsed < 5
    record(4, "RK4 fourth-order convergence", ok, f"error ratios {ratios[0]:.2f}, {ratios[1]:.2f}", elapsed)
    assert ok


# 5 -------------------------------------------------------------------------


def _recovery_run(seed: int):
    n = 1000
    y = 2.0 + 0.5 * Stream(seed, "recovery", "y").normal(n)
    # one population: the constant covariate leaves nothing to balance
    ds = Dataset(np.ones((n, 1)), np.zeros(n, dtype=np.int64), y, kind="recovery")
    spec = ExperimentSpec(ModelDims(d_x=1), FlowConfig(steps=2000))
    model, _ = fit(ds, None, spec, seed=derive_seed(seed, "recovery", "train"))
    draws = sample_outcomes(model, np.ones((1, 1)), 0, M=2000, N=20, seed=derive_seed(seed, "recovery", "sample"))
    return float(draws.mean()), float(draws.std())


@pytest.mark.slow
def test_c05_generative_recovery():
    t0 = time.time()
    passes, lines = 0, []
    for seed in range(5):
        mean, std = _recovery_run(seed)
        good = 1.8 <= mean <= 2.2 and 0.35 <= std <= 0.65
        passes += good
        lines.append(f"s{seed}: {mean:.3f}/{std:.3f}")
        if passes >= 4 or (seed + 1 - passes) > 1:
            break  # the 4-of-5 verdict is settled
    elapsed = time.time() - t0
    ok = passes >= 4 and elapsed < 180
    record(5, "1-D Gaussian recovery (mean/std)", ok, f"{passes} seeds in range; " + ", ".join(lines), elapsed)
    assert ok


# 6 and 7 -------------------------------------------------------------------

DESK_SPEC = ExperimentSpec(ModelDims(d_x=10), FlowConfig(steps=3000), M=10, N=8)


def _setting_a(r: int):
    return gen_setting_a(4000, 10, seed=derive_seed(0, "desk", r))


@pytest.fixture(scope="module")
def desk_runs():
    t0 = time.time()
    out = {v: [run_replication(_setting_a, DESK_SPEC, v, 0, r) for r in range(5)]
           for v in (Variant.full, Variant.lambda_zero)}
    return out, time.time() - t0


def _median(records, key):
    return statistics.median(r[key] for r in records)


@pytest.mark.slow
def test_c06_balancing_direction(desk_runs):
    runs, elapsed = desk_runs
    full, lam0 = runs[Variant.full], runs[Variant.lambda_zero]
    d_full, d_zero = _median(full, "latent_distance"), _median(lam0, "latent_distance")
    w_full, w_zero = _median(full, "w1_in"), _median(lam0, "w1_in")
    ok = d_full <= d_zero and w_full <= w_zero and elapsed < 1800
    record(6, "balancing direction on Setting A", ok,
           f"latent distance {d_full:.4f} vs {d_zero:.4f} (lambda=1 vs 0), "
           f"W1_in {w_full:.4f} vs {w_zero:.4f}", elapsed)
    assert ok


@pytest.mark.slow
def test_c07_point_estimation(desk_runs):
    t0 = time.time()
    runs, _ = desk_runs
    full = runs[Variant.full]
    ate = _median(full, "ate_err_out")
    pehe = [r["pehe_sqrt_out"] for r in full]
    tau_std = statistics.median(float(np.std(_setting_a(r).tau)) for r in range(5))
    ok = ate < 0.25 and all(math.isfinite(p) for p in pehe) and statistics.median(pehe) < 2 * tau_std
    record(7, "Setting A point estimation", ok,
           f"median ATE err {ate:.3f}, median sqrt-PEHE {statistics.median(pehe):.3f} "
           f"(bound {2 * tau_std:.3f})", time.time() - t0)
    assert ok


# 8 -------------------------------------------------------------------------


def test_c08_ihdp_soft_check():
    root = os.environ.get("REPFLOW_IHDP_DIR")
    if not root:
        record_skip(8, "IHDP soft check", "REPFLOW_IHDP_DIR not set")
        pytest.skip("REPFLOW_IHDP_DIR not set")
    files = sorted(Path(root).glob("*.csv"))[:10]
    if not files:
        record_skip(8, "IHDP soft check", f"no CSV files in {root}")
        pytest.skip("no IHDP files")
    t0 = time.time()
    spec = ExperimentSpec(ModelDims(d_x=25), FlowConfig(steps=3000, batch_size=128), M=20, N=10)
    report = run_experiment(lambda r: load_ihdp(files[r]), spec, Variant.full, len(files), seed=0)
    med = report.median("pehe_sqrt_out")
    ok = med <= 1.5
    record(8, "IHDP soft check", ok, f"median sqrt-PEHE_out {med:.3f} over {len(files)} files", time.time() - t0)
    assert ok


# 9 -------------------------------------------------------------------------

_CLI_CONFIG = """schema_version: 1
seed: 11
dataset: {kind: setting_a, n: 400, d: 10}
model: {latent_dim: 8, hidden: 32, time_dim: 16}
train: {steps: 20, batch_size: 64}
sample: {M: 5, N: 5}
"""


def test_c09_cli_determinism(tmp_path):
    t0 = time.time()
    cfg = tmp_path / "run.yaml"
    cfg.write_text(_CLI_CONFIG)
    outputs = {}
    for tag in ("first", "second"):
        d = tmp_path / tag
        d.mkdir()
        codes = [
            cli_run(["gen", "--config", str(cfg), "--out", str(d / "data.csv")]),
            cli_run(["train", "--config", str(cfg), "--out", str(d / "model.json")]),
            cli_run(["sample", "--config", str(cfg), "--checkpoint", str(d / "model.json"),
                     "--out", str(d / "draws.csv")]),
        ]
        assert codes == [0, 0, 0]
        outputs[tag] = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
    same = outputs["first"] == outputs["second"]
    record(9, "CLI gen/train/sample determinism", same,
           f"{len(outputs['first'])} files byte-identical" if same else "outputs differ", time.time() - t0)
    assert same


# 10 ------------------------------------------------------------------------


def test_c10_metric_units():
    t0 = time.time()
    tau = np.array([0.2, -1.0, 3.0, 0.5])
    trivial = [
        pehe_sqrt(tau, tau) == 0.0,
        pehe_sqrt(tau + 1.0, tau) == 1.0,
        pehe_sqrt([0.0, 2.0], [0.0, 0.0]) == math.sqrt(2.0),
        ate_error(tau, tau) == 0.0,
        ate_error(tau + np.array([1.0, -1.0, 1.0, -1.0]), tau) == 0.0,
        abs(ate_error(tau + 0.3, tau) - 0.3) < 1e-15,
        empirical_w1(tau[:, None], tau[:, None]) == 0.0,
        abs(empirical_w1(np.c_[tau, tau] + 0.5, np.c_[tau, tau]) - 0.5 * math.sqrt(2.0)) < 1e-15,
    ]
    rng = np.random.default_rng(10)
    invariant = 0
    for _ in range(100):
        n = int(rng.integers(1, 200))
        a, b = rng.normal(size=n) * rng.exponential(3.0), rng.normal(size=n)
        invariant += pehe_sqrt(a, b) >= ate_error(a, b) - 1e-12
    ok = all(trivial) and invariant == 100
    record(10, "metric unit cases and RMS >= |mean|", ok,
           f"{sum(trivial)}/{len(trivial)} trivial cases, invariant held {invariant}/100", time.time() - t0)
    assert ok


if __name__ == "__main__":
    import sys

    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(RESULTS))
    sys.exit(code)
