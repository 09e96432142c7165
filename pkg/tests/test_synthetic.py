import json

import numpy as np
import pytest
from scipy import integrate, optimize
from scipy.special import beta as beta_fn

from distcause.quantile_space import QuantileGrid
from distcause.synthetic import (
    DgpConfig,
    SyntheticDataset,
    generate,
    inverse_beta_cdf,
    mean_mixture_curve,
    mixture_weights,
    regularized_incomplete_beta,
    true_causal_maps,
    true_propensity,
    true_quantile,
    true_quantile_matrix,
)

GRID = QuantileGrid.midpoints(100)


def _beta_cdf_quad(a, b, x):
    """Regularized incomplete beta by quadrature; algebraic weights absorb
    the endpoint singularities at 0 and 1."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    kw = dict(weight="alg", epsabs=1e-15, epsrel=1e-13, limit=200)
    if x <= 0.5:
        val, _ = integrate.quad(lambda s: (1 - s) ** (b - 1), 0, x, wvar=(a - 1, 0), **kw)
        return val / beta_fn(a, b)
    val, _ = integrate.quad(lambda s: s ** (a - 1), x, 1, wvar=(0, b - 1), **kw)
    return 1.0 - val / beta_fn(a, b)


def quadrature_beta_inverse(a, b, t):
    """Independent oracle: adaptive quadrature of the density and brentq."""
    return optimize.brentq(lambda x: _beta_cdf_quad(a, b, x) - t, 0.0, 1.0,
                           xtol=1e-15, rtol=1e-15)


# --- incomplete beta ---------------------------------------------------------------


def test_uniform_beta_inverse_is_identity():
    t = np.linspace(0.01, 0.99, 50)
    np.testing.assert_allclose(inverse_beta_cdf(1, 1, t), t, atol=1e-14)


def test_symmetric_beta_median():
    assert inverse_beta_cdf(2, 2, 0.5) == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize(
    "a,b,t", [(2, 5, 0.3), (5, 2, 0.3), (1, 3, 0.9), (3, 1, 0.05), (2, 2, 0.77), (0.5, 0.7, 0.4)]
)
def test_inverse_beta_matches_quadrature_oracle(a, b, t):
    assert inverse_beta_cdf(a, b, t) == pytest.approx(quadrature_beta_inverse(a, b, t), abs=1e-8)


def test_incomplete_beta_against_quadrature():
    for a, b in [(2, 5), (1, 3), (3, 1), (0.7, 2.5)]:
        for x in (0.05, 0.3, 0.5, 0.9):
            assert regularized_incomplete_beta(a, b, x) == pytest.approx(
                _beta_cdf_quad(a, b, x), abs=1e-12
            )


def test_inverse_beta_errors():
    with pytest.raises(ValueError):
        inverse_beta_cdf(2, 5, 1.0)
    with pytest.raises(ValueError):
        inverse_beta_cdf(2, 5, -0.1)
    with pytest.raises(ValueError):
        inverse_beta_cdf(0, 5, 0.5)


# --- configuration -----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        DgpConfig(n_covariates=3)
    with pytest.raises(ValueError):
        DgpConfig(c=1.5)
    with pytest.raises(ValueError):
        DgpConfig(beta_params=((2, 5), (5, 2), (2, 2), (1, 3), (3, -1)))


def test_config_dict_round_trip():
    cfg = DgpConfig(c=0.4, n_units=77)
    again = DgpConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_default_covariate_means():
    np.testing.assert_allclose(
        DgpConfig().covariate_means, [-2, -2, -1, -1, 0, 0, 1, 1, 2, 2]
    )


# --- true quantile function ---------------------------------------------------------


def test_equal_products_give_equal_mixture_weights():
    x = np.ones(10)
    np.testing.assert_allclose(mixture_weights(DgpConfig(), x), [[0.2] * 5])


def test_null_effect_configuration_gives_constant_curves():
    cfg = DgpConfig(c=1.0)
    rng = np.random.default_rng(0)
    for d in cfg.treatment_values:
        np.testing.assert_array_equal(true_quantile(cfg, rng.normal(size=10), d, GRID).values,
                                      np.ones(100))
    maps = true_causal_maps(cfg, GRID, n_mc=1000)
    for curve in maps.values():
        np.testing.assert_array_equal(curve.values, np.ones(100))


def test_uniform_component_gives_affine_curve():
    cfg = DgpConfig(n_covariates=2, beta_params=((1.0, 1.0),), treatment_values=(1.0, 4.0))
    vals = true_quantile(cfg, [0.3, -1.0], 4.0, GRID).values
    slope = (1 - cfg.c) * (cfg.expected_treatment + 2.0)
    np.testing.assert_allclose(vals, cfg.c + slope * GRID.levels, atol=1e-12)


def test_true_quantile_matches_independent_formula():
    cfg = DgpConfig()
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 10))
    d = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 2.0])
    scores = X[:, 0::2] * X[:, 1::2]
    w = np.exp(scores - scores.max(1, keepdims=True))
    w /= w.sum(1, keepdims=True)
    levels = GRID.levels[::11]
    comps = np.array([[quadrature_beta_inverse(a, b, t) for t in levels]
                      for a, b in cfg.beta_params])
    expected = cfg.c + (1 - cfg.c) * (cfg.expected_treatment + np.sqrt(d))[:, None] * (w @ comps)
    np.testing.assert_allclose(true_quantile_matrix(cfg, X, d, levels), expected, atol=1e-8)


def test_expected_treatment_is_a_weighted_mean():
    cfg = DgpConfig()
    assert 1.0 < cfg.expected_treatment < 5.0
    rng = np.random.default_rng(2)
    X = rng.normal(np.asarray(cfg.covariate_means), 1.0, size=(200_000, 10))
    mc = float(np.mean(true_propensity(cfg, X) @ np.asarray(cfg.treatment_values)))
    assert cfg.expected_treatment == pytest.approx(mc, abs=0.01)


def test_propensity_has_overlap():
    cfg = DgpConfig()
    X = generate(DgpConfig(n_units=20_000, seed=3)).covariates
    p = true_propensity(cfg, X)
    assert np.mean(p < 0.01) < 0.01
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)


# --- oracle maps ------------------------------------------------------------------


def test_single_draw_oracle_equals_unit_curve():
    cfg = DgpConfig()
    maps = true_causal_maps(cfg, GRID, n_mc=1, seed=9)
    x = np.random.default_rng(9).normal(np.asarray(cfg.covariate_means), 1.0, size=(1, 10))[0]
    for label, d in zip(cfg.labels, cfg.treatment_values):
        np.testing.assert_allclose(maps[label].values, true_quantile(cfg, x, d, GRID).values,
                                   atol=1e-12)


def test_monte_carlo_oracle_converges():
    cfg = DgpConfig()
    small, se = mean_mixture_curve(cfg, GRID.levels, 10_000, seed=1)
    big, _ = mean_mixture_curve(cfg, GRID.levels, 1_000_000, seed=2)
    assert np.all(np.abs(big - small) <= 3 * se + 1e-12)


# --- datasets ----------------------------------------------------------------------


def test_generate_shapes_and_determinism():
    cfg = DgpConfig(n_units=50, obs_per_unit=20, seed=4)
    a, b = generate(cfg), generate(cfg)
    assert a.observations.shape == (50, 20)
    assert np.array_equal(a.observations, b.observations)
    assert np.array_equal(a.treatment, b.treatment)
    assert not np.array_equal(a.observations, generate(DgpConfig(n_units=50, obs_per_unit=20,
                                                                   seed=5)).observations)


def test_curves_vary_in_shape():
    data = generate(DgpConfig(n_units=10, seed=6))
    medians = data.true_curves(GRID)[:, 49]
    assert np.std(medians) > 0


def test_empirical_curves_track_true_curves():
    data = generate(DgpConfig(n_units=20, obs_per_unit=20_000, seed=7))
    gap = np.abs(data.empirical_curves(GRID) - data.true_curves(GRID))
    assert np.max(gap[:, 5:-5]) < 0.1


def test_treatment_assignment_follows_propensity():
    cfg = DgpConfig(n_units=50_000, obs_per_unit=1, seed=8)
    data = generate(cfg)
    freq = np.bincount(data.treatment, minlength=5) / cfg.n_units
    expected = true_propensity(cfg, data.covariates).mean(axis=0)
    np.testing.assert_allclose(freq, expected, atol=0.01)


def test_export_csv(tmp_path):
    data = generate(DgpConfig(n_units=5, obs_per_unit=3, seed=9))
    data.export_csv(tmp_path)
    units = (tmp_path / "units.csv").read_text().splitlines()
    assert units[0] == "unit_id,treatment," + ",".join(f"x{j}" for j in range(1, 11))
    assert len(units) == 6
    obs = (tmp_path / "observations.csv").read_text().splitlines()
    assert len(obs) == 16
    cfg = DgpConfig.from_dict(json.loads((tmp_path / "dgp_config.json").read_text()))
    assert cfg == data.config
    assert isinstance(data, SyntheticDataset)
