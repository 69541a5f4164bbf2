import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repflow.autodiff import ContractError
from repflow.data import (DataFormatError, Standardizer, baseline, effect, fit_standardizer, gen_setting_a,
                          gen_setting_b, load_ihdp, load_synthetic, propensity_logit, save_synthetic, split,
                          split_indices, to_batch)


def test_outcome_functions_at_origin():
    X = np.zeros((1, 10))
    assert baseline(X)[0] == 0.5
    assert effect(X)[0] == 1.0
    assert propensity_logit(X)[0] == 0.5
    assert 1 / (1 + math.exp(-propensity_logit(X)[0])) == pytest.approx(0.6225, abs=1e-4)


@pytest.mark.parametrize("gen", [gen_setting_a, gen_setting_b])
def test_consistency_and_determinism(gen):
    ds = gen(500, seed=3)
    np.testing.assert_array_equal(ds.Y, ds.A * ds.y1 + (1 - ds.A) * ds.y0)
    again = gen(500, seed=3)
    assert ds.X.tobytes() == again.X.tobytes() and ds.Y.tobytes() == again.Y.tobytes()
    np.testing.assert_allclose(ds.tau, effect(ds.X), atol=1e-12)


def test_setting_a_mean_effect():
    tau = gen_setting_a(100_000, seed=1).tau
    assert abs(tau.mean() - 0.5) < 3 * tau.std() / math.sqrt(tau.size)


def test_setting_a_propensity_matches_logit():
    ds = gen_setting_a(1000, seed=2)
    np.testing.assert_allclose(ds.propensity, 1 / (1 + np.exp(-propensity_logit(ds.X))))


def test_setting_b_shift_and_balance():
    ds = gen_setting_b(50_000, s=0.5, seed=4)
    treated = ds.X[ds.A == 1]
    assert np.all(np.abs(treated.mean(0) - 0.5) < 3 / math.sqrt(len(treated)))
    p = ds.A.mean()
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / len(ds))


def test_setting_b_zero_shift_identical_arms():
    for seed in range(5):
        ds = gen_setting_b(4000, s=0.0, seed=seed)
        x0, x1 = ds.X[ds.A == 0], ds.X[ds.A == 1]
        se = math.sqrt(1 / len(x0) + 1 / len(x1))
        assert np.all(np.abs(x0.mean(0) - x1.mean(0)) < 4.5 * se)


def test_small_d_rejected():
    with pytest.raises(ContractError):
        gen_setting_a(10, d=4)


def test_synthetic_round_trip(tmp_path):
    ds = gen_setting_b(50, d=6, seed=0)
    path = tmp_path / "b.csv"
    save_synthetic(ds, path)
    back = load_synthetic(path)
    for name in ("X", "A", "Y", "y0", "y1", "mu0", "mu1"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    np.testing.assert_array_equal(back.Y, back.A * back.y1 + (1 - back.A) * back.y0)


def _ihdp(tmp_path, rows, header=None):
    header = header or ["treatment", "y_factual", "y_cfactual", "mu0", "mu1"] + [f"x{j}" for j in range(1, 26)]
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path = tmp_path / "ihdp.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def _row(a, yf=1.0, ycf=2.0):
    return [a, yf, ycf, 0.5, 1.5] + [0.1 * j for j in range(25)]


def test_ihdp_fixture(tmp_path):
    ds = load_ihdp(_ihdp(tmp_path, [_row(1), _row(0, 3.0, 4.0), _row(1)]))
    assert len(ds) == 3 and ds.A.tolist() == [1, 0, 1]
    assert ds.y1.tolist() == [1.0, 4.0, 1.0] and ds.y0.tolist() == [2.0, 3.0, 2.0]
    assert np.all(ds.tau == 1.0) and not ds.outcome_noise


def test_ihdp_bad_treatment_names_row(tmp_path):
    with pytest.raises(DataFormatError, match="row 2"):
        load_ihdp(_ihdp(tmp_path, [_row(1), _row(2)]))


def test_ihdp_missing_column(tmp_path):
    header = ["treatment", "y_factual", "mu0", "mu1"] + [f"x{j}" for j in range(1, 26)]
    with pytest.raises(DataFormatError, match="y_cfactual"):
        load_ihdp(_ihdp(tmp_path, [], header))


def test_ihdp_non_numeric_cell(tmp_path):
    bad = _row(0)
    bad[7] = "nan"
    with pytest.raises(DataFormatError, match="row 1, column 'x3'"):
        load_ihdp(_ihdp(tmp_path, [bad]))


def test_split_sizes_and_partition():
    tr, va, te = split_indices(100, seed=0)
    assert (len(tr), len(va), len(te)) == (70, 20, 10)
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(100))
    again = split_indices(100, seed=0)
    assert all(np.array_equal(a, b) for a, b in zip((tr, va, te), again))


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 5000), st.integers(0, 10**6))
def test_split_is_partition(n, seed):
    parts = split_indices(n, seed=seed)
    joined = np.concatenate(parts)
    assert joined.size == n and np.unique(joined).size == n


def test_split_errors():
    with pytest.raises(ContractError):
        split_indices(9)
    with pytest.raises(ContractError):
        split_indices(100, (0.5, 0.5, 0.5))


def test_standardizer():
    tr, va, _ = split(gen_setting_a(300, seed=0), seed=1)
    std = fit_standardizer(tr)
    ys = std.y(tr.Y.reshape(-1, 1))
    assert abs(ys.mean()) < 1e-10 and abs(ys.std() - 1) < 1e-10
    np.testing.assert_allclose(std.y_inverse(ys)[:, 0], tr.Y, atol=1e-12)
    np.testing.assert_allclose(std.x_inverse(std.x(va.X)), va.X, atol=1e-12)
    np.testing.assert_array_equal(to_batch(va, std).X, (va.X - std.x_mean) / std.x_std)
    assert Standardizer.from_dict(std.to_dict()).x_std.tobytes() == std.x_std.tobytes()


def test_zero_variance_column_uses_unit_scale(caplog):
    X = np.ones((5, 2))
    std = Standardizer.fit(X, np.arange(5.0))
    assert std.x_std.tolist() == [1.0, 1.0]
    assert "zero variance" in caplog.text
