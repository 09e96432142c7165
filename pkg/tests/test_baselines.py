import numpy as np
import pytest

from distcause.baselines import (
    PerQuantileParams,
    PerQuantileRegressor,
    RidgeFrParams,
    RidgeRegressor,
    SingularSystemError,
    _encode,
    init_per_quantile,
    per_quantile_fit,
    per_quantile_objective,
    per_quantile_predict_raw,
    predictor_matrix,
    ridge_fit,
    ridge_normal_equations,
    ridge_predict,
    ridge_predict_raw,
)
from distcause.basis import BSplineBasis, design_matrix
from distcause.nfr_net import TrainConfig
from distcause.quantile_space import QuantileGrid
from distcause.synthetic import DgpConfig, generate

GRID = QuantileGrid.midpoints(100)
BASIS = BSplineBasis()
D = design_matrix(BASIS, GRID)


def linear_data(rng, n=400, r=3, p=4, noise=0.0):
    t = rng.integers(0, r, n)
    X = rng.normal(size=(n, p))
    coef = rng.normal(size=(1 + (r - 1) + p, BASIS.num_basis))
    Y = predictor_matrix(t, X, r) @ coef @ D.T + noise * rng.normal(size=(n, 100))
    return t, X, Y, coef


# --- ridge -------------------------------------------------------------------------


def test_predictor_matrix_layout():
    Z = predictor_matrix([0, 2, 1], [[1.0], [2.0], [3.0]], 3)
    np.testing.assert_array_equal(Z, [[1, 0, 0, 1], [1, 0, 1, 2], [1, 1, 0, 3]])


def test_exact_recovery_in_small_lambda_limit():
    t, X, Y, coef = linear_data(np.random.default_rng(0))
    est = ridge_fit(t, X, Y, BASIS, GRID, lam=1e-12, n_treatments=3)
    np.testing.assert_allclose(est.coef, coef, atol=1e-6)


def test_solution_satisfies_normal_equations():
    t, X, Y, _ = linear_data(np.random.default_rng(1), noise=0.3)
    est = ridge_fit(t, X, Y, BASIS, GRID, lam=2.5, n_treatments=3)
    from distcause.baselines import project_onto_basis

    A, rhs = ridge_normal_equations(predictor_matrix(t, X, 3), project_onto_basis(Y, D), 2.5)
    np.testing.assert_allclose(A @ est.coef, rhs, atol=1e-8)


def test_large_lambda_shrinks_to_intercept():
    t, X, Y, _ = linear_data(np.random.default_rng(2), noise=0.1)
    est = ridge_fit(t, X, Y, BASIS, GRID, lam=1e12, n_treatments=3)
    assert np.max(np.abs(est.coef[1:])) < 1e-6


def test_constant_targets():
    rng = np.random.default_rng(3)
    t, X = rng.integers(0, 3, 100), rng.normal(size=(100, 2))
    Y = np.full((100, 100), 4.2)
    est = ridge_fit(t, X, Y, BASIS, GRID, lam=1.0, n_treatments=3)
    pred = ridge_predict(est, 1, X[0], BASIS, GRID)
    np.testing.assert_allclose(pred.values, 4.2, atol=1e-8)


def test_singular_system_with_zero_lambda():
    rng = np.random.default_rng(4)
    t = rng.integers(0, 3, 50)
    x = rng.normal(size=(50, 1))
    X = np.hstack([x, 2 * x])  # collinear covariates
    with pytest.raises(SingularSystemError, match="lambda > 0"):
        ridge_fit(t, X, rng.normal(size=(50, 100)), BASIS, GRID, lam=0.0, n_treatments=3)


def test_ridge_dimension_mismatch_and_round_trip(tmp_path):
    t, X, Y, _ = linear_data(np.random.default_rng(5))
    est = ridge_fit(t, X, Y, BASIS, GRID, n_treatments=3)
    with pytest.raises(ValueError, match="dimension mismatch"):
        ridge_predict_raw(est, [0], np.zeros((1, 3)), D)
    est.save(tmp_path / "r.ckpt")
    assert np.array_equal(RidgeFrParams.load(tmp_path / "r.ckpt").coef, est.coef)


def test_ridge_regressor_protocol():
    t, X, Y, _ = linear_data(np.random.default_rng(6))
    reg = RidgeRegressor().fit(t, X, Y, 3, GRID)
    pred = reg.predict(1, X[:5])
    assert pred.shape == (5, 100)
    assert np.all(np.diff(pred, axis=1) >= 0)


# --- per-quantile MLPs -------------------------------------------------------------


def test_per_quantile_gradient_check():
    rng = np.random.default_rng(7)
    M = 4
    params = init_per_quantile(M, 2, 3, hidden=(5, 4), rng=rng)
    params = params.with_arrays([a + 0.1 * rng.normal(size=a.shape) for a in params.arrays()])
    Z = _encode(params, rng.integers(0, 2, 6), rng.normal(size=(6, 3)))
    Y = rng.normal(size=(6, M))
    _, grads = per_quantile_objective(params, Z, Y, weight_decay=1e-3)
    h = 1e-5
    for k, a in enumerate(params.arrays()):
        for idx in np.ndindex(a.shape):
            arrs_p = [x.copy() for x in params.arrays()]
            arrs_m = [x.copy() for x in params.arrays()]
            arrs_p[k][idx] += h
            arrs_m[k][idx] -= h
            lp, _ = per_quantile_objective(params.with_arrays(arrs_p), Z, Y, weight_decay=1e-3)
            lm, _ = per_quantile_objective(params.with_arrays(arrs_m), Z, Y, weight_decay=1e-3)
            # level idx[0] owns this parameter; other levels must not move
            fd = (lp - lm) / (2 * h)
            level = idx[0]
            g = grads[k][idx]
            assert abs(g - fd[level]) <= max(1e-4 * abs(fd[level]), 1e-9)
            others = np.delete(fd, level)
            assert np.max(np.abs(others)) <= 1e-9


def test_levels_are_independent():
    rng = np.random.default_rng(8)
    params = init_per_quantile(3, 2, 2, hidden=(4,), rng=rng)
    Z = _encode(params, [0, 1], rng.normal(size=(2, 2)))
    single = params.level(1)
    out_all = per_quantile_predict_raw(params, [0, 1], Z[:, 2:])
    out_one = per_quantile_predict_raw(single, [0, 1], Z[:, 2:])
    np.testing.assert_allclose(out_all[:, 1], out_one[:, 0], atol=1e-14)


def test_per_quantile_constant_targets():
    rng = np.random.default_rng(9)
    t, X = rng.integers(0, 2, 2000), rng.normal(size=(2000, 2))
    Y = np.full((2000, 5), 1.5)
    grid = QuantileGrid.midpoints(5)
    params = per_quantile_fit(t, X, Y, grid, TrainConfig(dropout_rate=0.0), 2)
    np.testing.assert_allclose(per_quantile_predict_raw(params, t[:10], X[:10]), 1.5, atol=0.05)


def test_per_quantile_round_trip(tmp_path):
    params = init_per_quantile(3, 2, 2, hidden=(4,), rng=0)
    params.save(tmp_path / "pq.ckpt")
    loaded = PerQuantileParams.load(tmp_path / "pq.ckpt")
    for a, b in zip(params.arrays(), loaded.arrays()):
        assert np.array_equal(a, b)


def test_per_quantile_curves_cross_before_rearrangement():
    data = generate(DgpConfig(n_units=600, seed=10)).to_units(GRID)
    reg = PerQuantileRegressor(TrainConfig(epochs=5)).fit(
        data.treatment, data.covariates, data.curves, 5, GRID, seed=0
    )
    raw = per_quantile_predict_raw(reg.params, data.treatment, data.covariates)
    violations = int(np.sum(np.any(np.diff(raw, axis=1) < 0, axis=1)))
    assert violations > 0
    assert np.all(np.diff(reg.predict(0, data.covariates[:20]), axis=1) >= 0)
