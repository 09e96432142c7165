import numpy as np
import pytest

from distcause.baselines import RidgeRegressor
from distcause.estimators import MeanRegressor
from distcause.ingest import (
    REPORT_LEVELS,
    BinningRule,
    IngestError,
    bootstrap_ci,
    export_units,
    ingest,
    to_unit_data,
)
from distcause.quantile_space import QuantileGrid
from distcause.synthetic import DgpConfig, generate

GRID = QuantileGrid.midpoints(100)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def tiny(tmp_path):
    units = write(tmp_path / "units.csv",
                  "unit_id,treatment,age,credit\nu1,a,30,9000\nu2,b,40,12000\nu3,a,50,500\n")
    obs = write(tmp_path / "obs.csv",
                "unit_id,value\nu1,1.0\nu1,2.0\nu2,3.5\nu2,0.5\nu3,7\nu3,8\n")
    return units, obs


def test_three_small_units(tiny):
    units = ingest(*tiny, min_obs=1)
    assert [u.unit_id for u in units] == ["u1", "u2", "u3"]
    assert units[1].covariates == {"age": 40.0, "credit": 12000.0}
    np.testing.assert_array_equal(units[1].observations.observations, [3.5, 0.5])


def test_binning_is_left_closed(tmp_path, tiny):
    units_csv = write(tmp_path / "binned.csv",
                      "unit_id,age,credit\nu1,30,9000\nu2,40,12000\nu3,50,500\n")
    rule = BinningRule("credit", [1000, 9000], ["Low", "Middle", "High"])
    assert rule.assign(9000) == "High"
    rule = BinningRule("credit", [9000, 20000], ["Low", "Middle", "High"])
    assert rule.assign(9000) == "Middle"
    assert rule.assign(8999.99) == "Low"
    units = ingest(units_csv, tiny[1], binning=rule, min_obs=1)
    assert [u.treatment for u in units] == ["Middle", "Middle", "Low"]
    # the binned column becomes the treatment and is not also a covariate
    assert list(units[0].covariates) == ["age"]


def test_binning_rule_validation():
    with pytest.raises(ValueError):
        BinningRule("x", [2, 1], ["a", "b", "c"])
    with pytest.raises(ValueError):
        BinningRule("x", [1, 2], ["a", "b"])
    with pytest.raises(ValueError):
        BinningRule("x", [1, 2], ["a", "a", "b"])


def test_missing_columns_listed(tmp_path):
    units = write(tmp_path / "u.csv", "id,arm\nu1,a\n")
    obs = write(tmp_path / "o.csv", "unit_id,value\nu1,1\n")
    with pytest.raises(IngestError, match="unit_id, treatment"):
        ingest(units, obs)


def test_orphan_rows_reported(tiny, tmp_path):
    obs = write(tmp_path / "o.csv", "unit_id,value\nu1,1\nzz,2\nu2,3\nyy,4\n")
    with pytest.raises(IngestError, match="rows 3, 5"):
        ingest(tiny[0], obs, min_obs=1)


def test_small_units_dropped_with_warning(tiny):
    with pytest.warns(RuntimeWarning, match="dropped 3 unit"):
        assert ingest(*tiny, min_obs=3) == []


def test_bad_values(tmp_path, tiny):
    obs = write(tmp_path / "o.csv", "unit_id,value\nu1,abc\n")
    with pytest.raises(IngestError, match="not a number"):
        ingest(tiny[0], obs, min_obs=1)
    obs = write(tmp_path / "o.csv", "unit_id,value\nu1,nan\n")
    with pytest.raises(IngestError, match="non-finite"):
        ingest(tiny[0], obs, min_obs=1)
    with pytest.raises(IngestError, match="file not found"):
        ingest(tmp_path / "missing.csv", obs)


def test_synthetic_round_trip_is_exact(tmp_path):
    data = generate(DgpConfig(n_units=40, obs_per_unit=25, seed=3))
    data.export_csv(tmp_path)
    units = ingest(tmp_path / "units.csv", tmp_path / "observations.csv")
    assert len(units) == 40
    labels = data.labels
    for i, u in enumerate(units):
        assert u.unit_id == f"u{i}"
        assert u.treatment == labels[data.treatment[i]]
        assert np.array_equal(np.array(list(u.covariates.values())), data.covariates[i])
        assert np.array_equal(u.observations.observations, data.observations[i])
    ud = to_unit_data(units, GRID)
    assert ud.labels == labels
    assert np.array_equal(ud.curves, data.empirical_curves(GRID))


def test_export_ingest_is_idempotent(tmp_path):
    generate(DgpConfig(n_units=15, obs_per_unit=12, seed=4)).export_csv(tmp_path / "a")
    first = ingest(tmp_path / "a" / "units.csv", tmp_path / "a" / "observations.csv")
    export_units(first, tmp_path / "b")
    second = ingest(tmp_path / "b" / "units.csv", tmp_path / "b" / "observations.csv")
    export_units(second, tmp_path / "c")
    for name in ("units.csv", "observations.csv"):
        assert (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()


def test_to_unit_data_errors(tiny):
    units = ingest(*tiny, min_obs=1)
    with pytest.raises(IngestError, match="not in the label set"):
        to_unit_data(units, GRID, labels=["a"])
    with pytest.raises(IngestError):
        to_unit_data([], GRID)


# --- bootstrap reports ------------------------------------------------------------


def test_identical_replicates_give_zero_width():
    rng = np.random.default_rng(0)
    curves = np.sort(rng.normal(size=(2, 100)), axis=1)
    n = 20
    from distcause.estimators import UnitData

    t = np.arange(n) % 2
    data = UnitData(("a", "b"), t, np.zeros((n, 1)) + t[:, None], curves[t], GRID)
    rep = bootstrap_ci(data, "dr", b_reps=2, regressor=MeanRegressor())
    np.testing.assert_allclose(rep.hi - rep.lo, 0.0, atol=1e-12)
    expected = [np.interp(REPORT_LEVELS, GRID.levels, c) for c in curves]
    np.testing.assert_allclose(rep.point, expected, atol=1e-12)


def test_report_invariants_and_shape(tmp_path):
    data = generate(DgpConfig(n_units=400, seed=5)).to_units(GRID)
    rep = bootstrap_ci(data, "dml", b_reps=10, seed=1, regressor=RidgeRegressor())
    assert rep.point.shape == (5, len(REPORT_LEVELS))
    assert np.all(rep.lo <= rep.point) and np.all(rep.point <= rep.hi)
    assert np.all(np.diff(rep.point, axis=1) >= 0)
    expected = 100 * (rep.point[1] - rep.point[0]) / rep.point[0]
    np.testing.assert_allclose(rep.pct_change[("1", "2")], expected)
    rep.write_csv(tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0].startswith("quantile,1,1_ci_lo,1_ci_hi,2")
    assert len(rows) == 1 + 9


def test_bootstrap_argument_checks():
    data = generate(DgpConfig(n_units=50, seed=6)).to_units(GRID)
    with pytest.raises(ValueError):
        bootstrap_ci(data, b_reps=1)
    with pytest.raises(ValueError):
        bootstrap_ci(data, alpha=1.5)


def test_bootstrap_is_deterministic():
    data = generate(DgpConfig(n_units=200, seed=7)).to_units(GRID)
    a = bootstrap_ci(data, "dr", b_reps=4, seed=3, regressor=RidgeRegressor())
    b = bootstrap_ci(data, "dr", b_reps=4, seed=3, regressor=RidgeRegressor())
    assert np.array_equal(a.lo, b.lo) and np.array_equal(a.hi, b.hi)
