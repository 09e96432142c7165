import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distcause.basis import BSplineBasis, design_matrix, evaluate
from distcause.quantile_space import QuantileGrid


def cox_de_boor(i, p, knots, t):
    """Textbook scalar recursion, written independently of the library."""
    if p == 0:
        last = max(j for j in range(len(knots) - 1) if knots[j] < knots[j + 1])
        if knots[i] <= t < knots[i + 1]:
            return 1.0
        return 1.0 if (t == knots[-1] and i == last) else 0.0
    left = right = 0.0
    if knots[i + p] != knots[i]:
        left = (t - knots[i]) / (knots[i + p] - knots[i]) * cox_de_boor(i, p - 1, knots, t)
    if knots[i + p + 1] != knots[i + 1]:
        right = ((knots[i + p + 1] - t) / (knots[i + p + 1] - knots[i + 1])
                 * cox_de_boor(i + 1, p - 1, knots, t))
    return left + right


def test_knot_vector():
    np.testing.assert_allclose(
        BSplineBasis(3, 10).knots,
        [0, 0, 0, 0, 1 / 7, 2 / 7, 3 / 7, 4 / 7, 5 / 7, 6 / 7, 1, 1, 1, 1],
    )


def test_degree_zero_single_function():
    b = BSplineBasis(0, 1)
    for t in (0.0, 0.3, 1.0):
        np.testing.assert_array_equal(evaluate(b, t), [1.0])
    np.testing.assert_array_equal(design_matrix(b, QuantileGrid.midpoints(5)), np.ones((5, 1)))


def test_clamped_endpoints():
    b = BSplineBasis()
    np.testing.assert_array_equal(evaluate(b, 0.0), np.eye(10)[0])
    np.testing.assert_array_equal(evaluate(b, 1.0), np.eye(10)[-1])


@pytest.mark.parametrize("t", [0.37, 0.0, 0.5, 0.999, 1.0, 1 / 7])
def test_matches_independent_recursion(t):
    b = BSplineBasis(3, 10)
    ref = [cox_de_boor(i, 3, list(b.knots), t) for i in range(10)]
    np.testing.assert_allclose(evaluate(b, t), ref, atol=1e-14)


def test_design_matrix_partition_of_unity_and_recheck():
    grid = QuantileGrid.midpoints(100)
    for degree, v in [(0, 4), (1, 5), (2, 8), (3, 10), (3, 20)]:
        b = BSplineBasis(degree, v)
        D = design_matrix(b, grid)
        assert D.shape == (100, v)
        assert np.max(np.abs(D.sum(axis=1) - 1)) <= 1e-12
        assert np.all(D >= 0)
        for i in (0, 17, 99):
            np.testing.assert_array_equal(D[i], evaluate(b, grid.levels[i]))


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0, 1),
    st.integers(0, 4).flatmap(lambda p: st.tuples(st.just(p), st.integers(p + 1, p + 12))),
)
def test_partition_of_unity_property(t, spec):
    p, v = spec
    vals = evaluate(BSplineBasis(p, v), t)
    assert abs(vals.sum() - 1) <= 1e-12
    assert np.all(vals >= -1e-15)
    # local support: at most p + 1 non-zero functions
    assert np.count_nonzero(vals > 1e-15) <= p + 1


def test_errors():
    with pytest.raises(ValueError):
        evaluate(BSplineBasis(), 1.2)
    with pytest.raises(ValueError):
        evaluate(BSplineBasis(), [-0.1, 0.5])
    with pytest.raises(ValueError):
        BSplineBasis(3, 3)
