"""Clamped uniform B-spline basis on [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantile_space import QuantileGrid


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    """B-spline basis with ``num_basis`` functions of polynomial ``degree``.

    The knot vector repeats 0 and 1 ``degree + 1`` times and spaces the
    interior knots uniformly.
    """

    degree: int = 3
    num_basis: int = 10

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.num_basis < self.degree + 1:
            raise ValueError("num_basis must be at least degree + 1")

    @property
    def knots(self) -> np.ndarray:
        n_inner = self.num_basis - self.degree - 1
        inner = np.linspace(0.0, 1.0, n_inner + 2)[1:-1]
        return np.concatenate(
            [np.zeros(self.degree + 1), inner, np.ones(self.degree + 1)]
        )

    def __call__(self, t):
        return evaluate(self, t)


def evaluate(basis: BSplineBasis, t) -> np.ndarray:
    """Basis values at ``t`` via the Cox-de Boor recursion.

    Returns shape ``(num_basis,)`` for scalar ``t`` and ``(len(t), num_basis)``
    for an array.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any((t < 0) | (t > 1)) or not np.all(np.isfinite(t)):
        raise ValueError("t must lie in [0, 1]")
    k = basis.knots
    p = basis.degree
    n_spans = k.size - 1

    # degree 0: indicator of the half-open span [k_i, k_{i+1}); t = 1 belongs
    # to the last non-degenerate span
    span = np.searchsorted(k, t, side="right") - 1
    last = np.max(np.nonzero(k[:-1] < k[1:])[0])
    span = np.minimum(span, last)
    B = np.zeros((t.size, n_spans))
    B[np.arange(t.size), span] = 1.0

    for d in range(1, p + 1):
        nb = n_spans - d
        out = np.zeros((t.size, nb))
        for i in range(nb):
            den1 = k[i + d] - k[i]
            den2 = k[i + d + 1] - k[i + 1]
            if den1 > 0:
                out[:, i] += (t - k[i]) / den1 * B[:, i]
            if den2 > 0:
                out[:, i] += (k[i + d + 1] - t) / den2 * B[:, i + 1]
        B = out
    return B[0] if scalar else B


def design_matrix(basis: BSplineBasis, grid: QuantileGrid) -> np.ndarray:
    """Matrix with row i equal to the basis evaluated at grid level i."""
    return evaluate(basis, grid.levels)
