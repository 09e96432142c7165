"""Reference outcome regressions.

* Ridge functional regression: each target curve is projected onto the
  B-spline basis, then the basis coefficients are regressed linearly on
  (intercept, treatment dummies, covariates).
* Per-quantile MLPs: one independent scalar regressor per grid level, the
  outputs concatenated and sorted into a curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .basis import BSplineBasis, design_matrix
from .nfr_net import TrainConfig, holdout_split
from .quantile_space import QuantileCurve, QuantileGrid


class SingularSystemError(ValueError):
    pass


def predictor_matrix(treatments, covariates, n_treatments: int) -> np.ndarray:
    """Columns: intercept, dummies for treatments 1..r-1, raw covariates.

    The first treatment is the reference level, which keeps the intercept
    and the dummies linearly independent.
    """
    t = np.atleast_1d(np.asarray(treatments)).astype(int)
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    if t.size == 1 and X.shape[0] > 1:
        t = np.repeat(t, X.shape[0])
    if t.size != X.shape[0]:
        raise ValueError("treatments and covariates differ in length")
    dummies = np.zeros((t.size, n_treatments - 1))
    rows = np.flatnonzero(t > 0)
    dummies[rows, t[rows] - 1] = 1.0
    return np.hstack([np.ones((t.size, 1)), dummies, X])


def project_onto_basis(curves, design: np.ndarray, penalty: float = 1e-10) -> np.ndarray:
    """Least-squares basis coefficients of each curve, shape ``(N, v)``."""
    G = design.T @ design
    G = G + penalty * np.trace(G) / G.shape[0] * np.eye(G.shape[0])
    return np.linalg.solve(G, design.T @ np.atleast_2d(curves).T).T


@dataclass
class RidgeFrParams:
    coef: np.ndarray  # (1 + (r - 1) + p, v)
    lam: float
    n_treatments: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.coef)):
            raise ValueError("non-finite coefficient")

    @property
    def n_covariates(self) -> int:
        return self.coef.shape[0] - self.n_treatments

    def save(self, path):
        checkpoint.save(
            path, "ridge", {"coef": self.coef},
            {"lam": self.lam, "n_treatments": self.n_treatments},
        )

    @classmethod
    def load(cls, path):
        kind, arrays, meta = checkpoint.load(path)
        if kind != "ridge":
            raise ValueError(f"expected a ridge checkpoint, got {kind!r}")
        return cls(arrays["coef"], meta["lam"], meta["n_treatments"])


def ridge_normal_equations(Z, C, lam):
    """The ridge system ``A B = rhs`` (intercept unpenalized)."""
    P = np.eye(Z.shape[1])
    P[0, 0] = 0.0
    return Z.T @ Z + lam * P, Z.T @ C


def ridge_fit(treatments, covariates, curves, basis: BSplineBasis, grid: QuantileGrid,
              lam: float = 1.0, n_treatments: int | None = None) -> RidgeFrParams:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    t = np.asarray(treatments).astype(int)
    if t.size == 0:
        raise ValueError("empty dataset")
    r = int(t.max()) + 1 if n_treatments is None else n_treatments
    Z = predictor_matrix(t, covariates, r)
    C = project_onto_basis(curves, design_matrix(basis, grid))
    A, rhs = ridge_normal_equations(Z, C, lam)
    if np.linalg.cond(A) > 1e12:
        raise SingularSystemError(
            "ridge system is singular or ill-conditioned; use lambda > 0"
        )
    return RidgeFrParams(np.linalg.solve(A, rhs), float(lam), r)


def ridge_predict_raw(params: RidgeFrParams, treatments, covariates, design) -> np.ndarray:
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    if X.shape[1] != params.n_covariates:
        raise ValueError(
            f"dimension mismatch: expected {params.n_covariates} covariates, got {X.shape[1]}"
        )
    Z = predictor_matrix(treatments, X, params.n_treatments)
    return Z @ params.coef @ design.T


def ridge_predict(params, treatment, covariates, basis, grid) -> QuantileCurve:
    x = np.asarray(covariates, dtype=float)[None, :]
    raw = ridge_predict_raw(params, [treatment], x, design_matrix(basis, grid))[0]
    return QuantileCurve(grid, np.sort(raw))


@dataclass
class RidgeRegressor:
    lam: float = 1.0
    basis: BSplineBasis = field(default_factory=BSplineBasis)
    params: RidgeFrParams | None = None

    def fit(self, treatments, covariates, curves, n_treatments, grid, seed=None):
        self._design = design_matrix(self.basis, grid)
        self.params = ridge_fit(
            treatments, covariates, curves, self.basis, grid, self.lam, n_treatments
        )
        return self

    def predict(self, treatment, covariates):
        return np.sort(
            ridge_predict_raw(self.params, [treatment], covariates, self._design), axis=1
        )


# --- per-quantile MLPs ---------------------------------------------------------


@dataclass
class PerQuantileParams:
    """``M`` independent MLPs stored as stacked arrays.

    ``weights[l]`` has shape ``(M, fan_in, fan_out)`` and ``biases[l]`` shape
    ``(M, fan_out)``; the last layer has ``fan_out == 1``.
    """

    weights: list
    biases: list
    n_treatments: int
    x_mean: np.ndarray
    x_scale: np.ndarray

    @property
    def n_levels(self) -> int:
        return self.weights[0].shape[0]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays):
        return replace(self, weights=list(arrays[0::2]), biases=list(arrays[1::2]))

    def level(self, i: int) -> "PerQuantileParams":
        """Parameters of the regressor for grid level ``i`` alone."""
        return self.with_arrays([a[i : i + 1] for a in self.arrays()])

    def save(self, path):
        arrays = {"x_mean": self.x_mean, "x_scale": self.x_scale}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i + 1}"] = w
            arrays[f"b{i + 1}"] = b
        checkpoint.save(
            path, "per_quantile", arrays,
            {"n_treatments": self.n_treatments, "n_layers": len(self.weights)},
        )

    @classmethod
    def load(cls, path):
        kind, arrays, meta = checkpoint.load(path)
        if kind != "per_quantile":
            raise ValueError(f"expected a per_quantile checkpoint, got {kind!r}")
        n = meta["n_layers"]
        return cls(
            [arrays[f"W{i + 1}"] for i in range(n)],
            [arrays[f"b{i + 1}"] for i in range(n)],
            meta["n_treatments"], arrays["x_mean"], arrays["x_scale"],
        )


def _encode(params, treatments, covariates):
    t = np.atleast_1d(np.asarray(treatments)).astype(int)
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    if X.shape[1] != params.x_mean.size:
        raise ValueError(
            f"dimension mismatch: expected {params.x_mean.size} covariates, got {X.shape[1]}"
        )
    if t.size == 1 and X.shape[0] > 1:
        t = np.repeat(t, X.shape[0])
    onehot = np.zeros((t.size, params.n_treatments))
    onehot[np.arange(t.size), t] = 1.0
    return np.hstack([onehot, (X - params.x_mean) / params.x_scale])


def _forward(params, Z, masks=None):
    pre, post = [], [np.broadcast_to(Z, (params.n_levels, *Z.shape))]
    a = post[0]
    for l in range(len(params.weights) - 1):
        h = a @ params.weights[l] + params.biases[l][:, None, :]
        a = np.maximum(h, 0.0)
        if masks is not None:
            a = a * masks[l]
        pre.append(h)
        post.append(a)
    out = a @ params.weights[-1] + params.biases[-1][:, None, :]
    return out[:, :, 0], (pre, post)  # (M, B)


def per_quantile_objective(params, Z, targets, masks=None, weight_decay=0.0):
    """Summed per-level mean squared errors and their gradients.

    The levels share no parameters, so the gradient block of level ``i``
    depends only on that level's loss.  Returns ``(per_level_loss, grads)``.
    """
    B = Z.shape[0]
    out, (pre, post) = _forward(params, Z, masks)
    resid = out - targets.T  # (M, B)
    per_level = np.mean(resid * resid, axis=1)
    delta = (2.0 / B) * resid[:, :, None]
    n = len(params.weights)
    grads = [None] * (2 * n)
    for l in range(n - 1, -1, -1):
        grads[2 * l] = np.swapaxes(post[l], 1, 2) @ delta
        grads[2 * l + 1] = delta.sum(axis=1)
        if l == 0:
            break
        da = delta @ np.swapaxes(params.weights[l], 1, 2)
        if masks is not None:
            da = da * masks[l - 1]
        delta = da * (pre[l - 1] > 0)
    if weight_decay:
        arrays = params.arrays()
        per_level = per_level + 0.5 * weight_decay * sum(
            np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1) for a in arrays
        )
        grads = [g + weight_decay * a for g, a in zip(grads, arrays)]
    return per_level, grads


def init_per_quantile(n_levels, n_treatments, n_covariates, hidden=(64, 64), rng=None,
                      x_mean=None, x_scale=None) -> PerQuantileParams:
    rng = np.random.default_rng(rng)
    sizes = [n_treatments + n_covariates, *hidden, 1]
    weights, biases = [], []
    for i, (fi, fo) in enumerate(zip(sizes, sizes[1:])):
        gain = 2.0 if i < len(hidden) else 1.0
        weights.append(rng.normal(0.0, np.sqrt(gain / fi), (n_levels, fi, fo)))
        biases.append(np.zeros((n_levels, fo)))
    return PerQuantileParams(
        weights, biases, n_treatments,
        np.zeros(n_covariates) if x_mean is None else x_mean,
        np.ones(n_covariates) if x_scale is None else x_scale,
    )


def per_quantile_fit(treatments, covariates, curves, grid: QuantileGrid,
                     config: TrainConfig = TrainConfig(), n_treatments=None,
                     hidden=(64, 64)) -> PerQuantileParams:
    """Train one scalar MLP per grid level on that level's target values.

    Every level keeps its own Adam moments, learning rate and plateau
    counter; the levels only share the minibatch order and dropout draws.
    """
    t = np.asarray(treatments).astype(int)
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    Y = np.atleast_2d(np.asarray(curves, dtype=float))
    if t.size == 0:
        raise ValueError("empty dataset")
    if Y.shape[1] != len(grid):
        raise ValueError("target curves do not match the grid")
    r = int(t.max()) + 1 if n_treatments is None else n_treatments
    rng = np.random.default_rng(config.seed)
    tr, ho = holdout_split(t.size, config.holdout_fraction, rng)
    x_mean = X[tr].mean(axis=0)
    x_scale = X[tr].std(axis=0)
    x_scale[x_scale == 0] = 1.0
    M = len(grid)
    params = init_per_quantile(M, r, X.shape[1], hidden, rng, x_mean, x_scale)
    Z = _encode(params, t, X)
    Z_tr, Y_tr = Z[tr], Y[tr]
    Z_ho, Y_ho = (Z[ho], Y[ho]) if ho.size else (Z_tr, Y_tr)

    lr = np.full(M, config.learning_rate)
    b1, b2, eps = 0.9, 0.999, 1e-8
    m_state = [np.zeros_like(a) for a in params.arrays()]
    v_state = [np.zeros_like(a) for a in params.arrays()]
    step = 0
    keep = 1.0 - config.dropout_rate
    best = np.full(M, np.inf)
    stale = np.zeros(M, dtype=int)
    for _ in range(config.epochs):
        order = rng.permutation(tr.size)
        for start in range(0, tr.size, config.batch_size):
            b = order[start : start + config.batch_size]
            masks = None
            if config.dropout_rate > 0:
                masks = [(rng.random((M, b.size, w.shape[2])) < keep) / keep
                         for w in params.weights[:-1]]
            _, grads = per_quantile_objective(
                params, Z_tr[b], Y_tr[b], masks, config.weight_decay
            )
            step += 1
            c1, c2 = 1 - b1**step, 1 - b2**step
            new = []
            for a, g, m, v in zip(params.arrays(), grads, m_state, v_state):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                lr_b = lr.reshape(-1, *([1] * (a.ndim - 1)))
                new.append(a - lr_b * (m / c1) / (np.sqrt(v / c2) + eps))
            params = params.with_arrays(new)
        out, _ = _forward(params, Z_ho)
        held = np.mean((out - Y_ho.T) ** 2, axis=1)
        improved = held < best
        best = np.where(improved, held, best)
        stale = np.where(improved, 0, stale + 1)
        if config.lr_halving:
            halve = stale >= config.plateau_patience
            lr[halve] /= 2
            stale[halve] = 0
    return params


def per_quantile_predict_raw(params: PerQuantileParams, treatments, covariates):
    out, _ = _forward(params, _encode(params, treatments, covariates))
    return out.T


def per_quantile_predict(params, treatment, covariates, grid: QuantileGrid) -> QuantileCurve:
    raw = per_quantile_predict_raw(params, [treatment], np.asarray(covariates)[None, :])[0]
    return QuantileCurve(grid, np.sort(raw))


@dataclass
class PerQuantileRegressor:
    config: TrainConfig = field(default_factory=TrainConfig)
    hidden: tuple = (64, 64)
    params: PerQuantileParams | None = None

    def fit(self, treatments, covariates, curves, n_treatments, grid, seed=None):
        config = self.config if seed is None else replace(self.config, seed=seed)
        self.params = per_quantile_fit(
            treatments, covariates, curves, grid, config, n_treatments, self.hidden
        )
        return self

    def predict(self, treatment, covariates):
        return np.sort(per_quantile_predict_raw(self.params, [treatment], covariates), axis=1)
