"""Distributions represented by their quantile functions on a fixed grid.

In one dimension the 2-Wasserstein geometry is flat once a distribution is
replaced by its quantile function: distances are L2 distances between
quantile functions and barycenters are pointwise means.  Everything in this
module works on that representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    pass


def _as_readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QuantileGrid:
    """Strictly increasing quantile levels inside the open unit interval."""

    levels: np.ndarray

    def __post_init__(self):
        levels = _as_readonly(self.levels)
        if levels.ndim != 1 or levels.size == 0:
            raise ValueError("grid levels must be a non-empty 1-D sequence")
        if not (levels[0] > 0.0 and levels[-1] < 1.0):
            raise ValueError("grid levels must lie strictly inside (0, 1)")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("grid levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def midpoints(cls, m: int = 100) -> "QuantileGrid":
        """Levels (i - 0.5) / m for i = 1..m."""
        if m < 1:
            raise ValueError("grid size must be positive")
        return cls((np.arange(1, m + 1) - 0.5) / m)

    def __len__(self) -> int:
        return self.levels.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantileGrid):
            return NotImplemented
        return self is other or np.array_equal(self.levels, other.levels)

    def __hash__(self) -> int:
        return hash(self.levels.tobytes())

    @property
    def l2_weights(self) -> np.ndarray:
        """Quadrature weights for the integral over (0, 1).

        Trapezoid between the first and last level, constant continuation of
        the integrand beyond them.
        """
        w = trapezoid_weights(self.levels).copy()
        w[0] += self.levels[0]
        w[-1] += 1.0 - self.levels[-1]
        return w


def trapezoid_weights(levels: np.ndarray) -> np.ndarray:
    """Weights w such that ``w @ f`` is the trapezoid rule over ``levels``."""
    levels = np.asarray(levels, dtype=float)
    w = np.zeros_like(levels)
    if levels.size > 1:
        h = np.diff(levels)
        w[:-1] += h / 2
        w[1:] += h / 2
    return w


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError("grid mismatch")


@dataclass(frozen=True, eq=False)
class EffectCurve:
    """Values on a grid with no monotonicity requirement (e.g. a difference
    of two quantile functions)."""

    grid: QuantileGrid
    values: np.ndarray

    def __post_init__(self):
        values = _as_readonly(self.values)
        if values.shape != (len(self.grid),):
            raise ValueError(
                f"expected {len(self.grid)} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite value")
        object.__setattr__(self, "values", values)

    def __call__(self, tau):
        """Linear interpolation between grid levels, constant outside."""
        return np.interp(tau, self.grid.levels, self.values)

    def __len__(self):
        return len(self.grid)


@dataclass(frozen=True, eq=False)
class QuantileCurve(EffectCurve):
    """A non-decreasing quantile function sampled on a grid."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(np.diff(self.values) < 0):
            raise ValueError("quantile curve values must be non-decreasing")


@dataclass(frozen=True)
class Sample:
    observations: np.ndarray = field(repr=False)

    def __post_init__(self):
        obs = _as_readonly(np.ravel(self.observations))
        if obs.size == 0:
            raise ValueError("empty sample")
        if not np.all(np.isfinite(obs)):
            raise ValueError("non-finite value")
        object.__setattr__(self, "observations", obs)

    def __len__(self):
        return self.observations.size


def quantile_values(observations, levels) -> np.ndarray:
    """Left-continuous empirical quantile: the ceil(n * tau)-th order statistic."""
    x = np.sort(np.asarray(observations, dtype=float))
    n = x.size
    # the small slack keeps n * tau that is integral up to rounding on the
    # lower order statistic
    idx = np.ceil(n * np.asarray(levels) - 1e-9).astype(int) - 1
    return x[np.clip(idx, 0, n - 1)]


def empirical_quantile(sample, grid: QuantileGrid) -> QuantileCurve:
    """Type-1 empirical quantile curve of ``sample`` on ``grid``.

    >>> grid = QuantileGrid([0.25, 0.5, 0.75])
    >>> empirical_quantile([2.0, 0.0, 1.0], grid).values
    array([0., 1., 2.])
    """
    if not isinstance(sample, Sample):
        sample = Sample(np.asarray(sample, dtype=float))
    return QuantileCurve(grid, quantile_values(sample.observations, grid.levels))


def wasserstein2(a: EffectCurve, b: EffectCurve) -> float:
    """2-Wasserstein distance between two quantile curves on a shared grid."""
    _check_same_grid(a, b)
    d = a.values - b.values
    return float(np.sqrt(max(a.grid.l2_weights @ (d * d), 0.0)))


def barycenter(curves) -> QuantileCurve:
    """Wasserstein barycenter: the pointwise mean of the quantile curves."""
    curves = list(curves)
    if not curves:
        raise ValueError("barycenter of an empty collection")
    grid = curves[0].grid
    for c in curves[1:]:
        _check_same_grid(curves[0], c)
    # averaging offsets from the first curve keeps identical inputs exact
    base = curves[0].values
    values = base + np.mean([c.values - base for c in curves], axis=0)
    # a mean of sorted vectors is sorted; guard against last-ulp reorderings
    return QuantileCurve(grid, np.maximum.accumulate(values))


def effect_map(a: EffectCurve, b: EffectCurve) -> EffectCurve:
    """Pointwise difference ``a - b``."""
    _check_same_grid(a, b)
    return EffectCurve(a.grid, a.values - b.values)


def inverse_transform_sample(curve: EffectCurve, uniforms) -> Sample:
    u = np.asarray(uniforms, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("uniforms must lie in the open interval (0, 1)")
    return Sample(np.interp(u, curve.grid.levels, curve.values))


def rearrange_monotone(values, grid: QuantileGrid) -> QuantileCurve:
    """Monotone rearrangement (sorting) of raw values into a quantile curve."""
    values = np.asarray(values, dtype=float)
    if values.shape != (len(grid),):
        raise ValueError(
            f"length mismatch: {values.shape[0] if values.ndim else 0} values "
            f"for a grid of {len(grid)}"
        )
    return QuantileCurve(grid, np.sort(values))
