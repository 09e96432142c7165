"""Neural functional regression network.

A small ReLU MLP maps (one-hot treatment, standardized covariates) to ``u``
representation coefficients.  A continuous layer turns them into a curve::

    raw(t) = sum_i F_i(d, x) * sum_j gamma[i, j] * phi_j(t)

with ``phi`` a B-spline basis.  Training minimises the trapezoid-rule
integral of the squared error against empirical quantile curves.  Gradients
are derived by hand; predictions are sorted (monotone rearrangement) so they
are valid quantile curves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint
from .basis import BSplineBasis, design_matrix
from .quantile_space import QuantileCurve, QuantileGrid, trapezoid_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 128
    epochs: int = 150
    dropout_rate: float = 0.1
    weight_decay: float = 0.001
    plateau_patience: int = 10
    lr_halving: bool = True
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class NfrParams:
    """Network weights.

    ``weights[l]`` has shape ``(fan_in, fan_out)``; the last layer is linear
    and emits the ``u`` representations.  ``gamma`` is ``(u, v)``.
    ``x_mean``/``x_scale`` standardize covariates before they enter the MLP.
    """

    weights: list
    biases: list
    gamma: np.ndarray
    n_treatments: int
    x_mean: np.ndarray
    x_scale: np.ndarray

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias width does not match layer width")
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("consecutive layer widths differ")
        if self.weights[-1].shape[1] != self.gamma.shape[0]:
            raise ValueError("MLP output width must equal gamma rows")
        if self.weights[0].shape[0] != self.n_treatments + self.x_mean.size:
            raise ValueError("input width must be n_treatments + n_covariates")
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("non-finite parameter")

    @property
    def n_covariates(self) -> int:
        return self.x_mean.size

    def arrays(self) -> list:
        """Trainable arrays in a fixed order: W1, b1, ..., WL, bL, gamma."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.gamma]

    def with_arrays(self, arrays) -> "NfrParams":
        n = len(self.weights)
        return replace(
            self,
            weights=list(arrays[0 : 2 * n : 2]),
            biases=list(arrays[1 : 2 * n : 2]),
            gamma=arrays[2 * n],
        )

    def copy(self) -> "NfrParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def save(self, path):
        arrays = {"x_mean": self.x_mean, "x_scale": self.x_scale, "gamma": self.gamma}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i + 1}"] = w
            arrays[f"b{i + 1}"] = b
        checkpoint.save(
            path,
            "nfr",
            arrays,
            {"n_treatments": self.n_treatments, "n_layers": len(self.weights)},
        )

    @classmethod
    def load(cls, path) -> "NfrParams":
        kind, arrays, meta = checkpoint.load(path)
        if kind != "nfr":
            raise ValueError(f"expected an nfr checkpoint, got {kind!r}")
        n = meta["n_layers"]
        return cls(
            weights=[arrays[f"W{i + 1}"] for i in range(n)],
            biases=[arrays[f"b{i + 1}"] for i in range(n)],
            gamma=arrays["gamma"],
            n_treatments=meta["n_treatments"],
            x_mean=arrays["x_mean"],
            x_scale=arrays["x_scale"],
        )


def init_params(
    n_treatments: int,
    n_covariates: int,
    num_basis: int,
    hidden=(64, 64),
    n_repr: int = 16,
    rng=None,
    x_mean=None,
    x_scale=None,
) -> NfrParams:
    rng = np.random.default_rng(rng)
    sizes = [n_treatments + n_covariates, *hidden, n_repr]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        # He init for ReLU layers, Glorot-style for the linear output
        gain = 2.0 if i < len(hidden) else 1.0
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    gamma = rng.normal(0.0, 1.0 / np.sqrt(n_repr), (n_repr, num_basis))
    return NfrParams(
        weights=weights,
        biases=biases,
        gamma=gamma,
        n_treatments=n_treatments,
        x_mean=np.zeros(n_covariates) if x_mean is None else np.asarray(x_mean, float),
        x_scale=np.ones(n_covariates) if x_scale is None else np.asarray(x_scale, float),
    )


def encode_inputs(params: NfrParams, treatments, covariates) -> np.ndarray:
    """One-hot treatment indices concatenated with standardized covariates."""
    t = np.atleast_1d(np.asarray(treatments))
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    if X.shape[1] != params.n_covariates:
        raise ValueError(
            f"dimension mismatch: expected {params.n_covariates} covariates, "
            f"got {X.shape[1]}"
        )
    if t.shape[0] == 1 and X.shape[0] > 1:
        t = np.repeat(t, X.shape[0])
    if t.shape[0] != X.shape[0]:
        raise ValueError("treatments and covariates differ in length")
    if np.any((t < 0) | (t >= params.n_treatments)):
        raise ValueError("treatment index out of range")
    onehot = np.zeros((t.shape[0], params.n_treatments))
    onehot[np.arange(t.shape[0]), t.astype(int)] = 1.0
    return np.hstack([onehot, (X - params.x_mean) / params.x_scale])


def _mlp(params: NfrParams, Z: np.ndarray, masks=None):
    """Forward through the numerical layers, keeping what backprop needs."""
    pre, post = [], [Z]
    a = Z
    n_hidden = len(params.weights) - 1
    for l in range(n_hidden):
        h = a @ params.weights[l] + params.biases[l]
        a = np.maximum(h, 0.0)
        if masks is not None:
            a = a * masks[l]
        pre.append(h)
        post.append(a)
    F = a @ params.weights[-1] + params.biases[-1]
    return F, (pre, post)


def representations(params: NfrParams, treatments, covariates) -> np.ndarray:
    F, _ = _mlp(params, encode_inputs(params, treatments, covariates))
    return F


def forward_raw(params: NfrParams, treatments, covariates, design: np.ndarray):
    """Unsorted curve values, shape ``(n, M)``; ``design`` is ``(M, v)``."""
    F = representations(params, treatments, covariates)
    return F @ (params.gamma @ design.T)


def forward(params, treatment, covariates, basis: BSplineBasis, grid: QuantileGrid):
    """Predicted quantile curve for a single (treatment, covariates) input."""
    x = np.asarray(covariates, dtype=float)
    if x.ndim != 1:
        raise ValueError("forward takes a single covariate vector")
    raw = forward_raw(params, [treatment], x[None, :], design_matrix(basis, grid))[0]
    return QuantileCurve(grid, np.sort(raw))


predict_m = forward


def predict_curves(params, treatments, covariates, design) -> np.ndarray:
    """Batched prediction, rows sorted into quantile curves."""
    return np.sort(forward_raw(params, treatments, covariates, design), axis=1)


def loss(pred_raw, target, grid_or_levels) -> float:
    """Trapezoid-rule integral of the squared error over the grid levels."""
    levels = getattr(grid_or_levels, "levels", grid_or_levels)
    target_values = getattr(target, "values", target)
    pred_raw = np.asarray(pred_raw, dtype=float)
    target_values = np.asarray(target_values, dtype=float)
    if pred_raw.shape != target_values.shape or pred_raw.shape[-1] != len(levels):
        raise ValueError("length mismatch")
    r = pred_raw - target_values
    return float(np.mean((r * r) @ trapezoid_weights(levels)))


def objective_and_gradients(
    params: NfrParams,
    Z: np.ndarray,
    targets: np.ndarray,
    design: np.ndarray,
    quad_weights: np.ndarray,
    masks=None,
    weight_decay: float = 0.0,
):
    """Mean batch loss (+ L2 penalty) and its exact gradient.

    ``Z`` is the encoded input batch.  Gradients come back as a list aligned
    with :meth:`NfrParams.arrays`.
    """
    if Z.shape[0] == 0:
        raise ValueError("empty batch")
    B = Z.shape[0]
    F, (pre, post) = _mlp(params, Z, masks)
    basis_proj = params.gamma @ design.T  # (u, M)
    resid = F @ basis_proj - targets
    value = float(np.mean((resid * resid) @ quad_weights))

    d_raw = (2.0 / B) * resid * quad_weights  # (B, M)
    d_raw_phi = d_raw @ design  # (B, v)
    d_gamma = F.T @ d_raw_phi
    dF = d_raw_phi @ params.gamma.T  # (B, u)

    n = len(params.weights)
    dW = [None] * n
    db = [None] * n
    delta = dF
    for l in range(n - 1, -1, -1):
        dW[l] = post[l].T @ delta
        db[l] = delta.sum(axis=0)
        if l == 0:
            break
        da = delta @ params.weights[l].T
        if masks is not None:
            da = da * masks[l - 1]
        delta = da * (pre[l - 1] > 0)

    grads = []
    for w, b in zip(dW, db):
        grads += [w, b]
    grads.append(d_gamma)
    if weight_decay:
        arrays = params.arrays()
        value += 0.5 * weight_decay * sum(float(np.sum(a * a)) for a in arrays)
        grads = [g + weight_decay * a for g, a in zip(grads, arrays)]
    return value, grads


def gradients(params, treatments, covariates, targets, basis, grid, weight_decay=0.0):
    """Gradient of the mean batch loss with respect to every parameter."""
    Z = encode_inputs(params, treatments, covariates)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    design = design_matrix(basis, grid)
    _, grads = objective_and_gradients(
        params, Z, targets, design, trapezoid_weights(grid.levels),
        weight_decay=weight_decay,
    )
    return params.with_arrays(grads)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, arrays, grads):
        if self.m is None:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        out = []
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            out.append(a - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        return out


def holdout_split(n: int, fraction: float, rng):
    """Random train/held-out index split; no hold-out for tiny datasets."""
    n_hold = int(round(fraction * n))
    if n_hold < 1 or n - n_hold < 1:
        idx = np.arange(n)
        return idx, idx[:0]
    perm = rng.permutation(n)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def train(
    treatments,
    covariates,
    curves,
    config: TrainConfig,
    basis: BSplineBasis,
    grid: QuantileGrid,
    n_treatments: int | None = None,
    hidden=(64, 64),
    n_repr: int = 16,
    callback=None,
) -> NfrParams:
    """Fit the network with minibatch Adam.

    ``curves`` is an ``(N, M)`` array of target quantile values.  A random
    ``config.holdout_fraction`` of the rows is held out to drive learning
    rate halving.  ``callback(epoch, train_loss, heldout_loss)`` is invoked
    after every epoch (dropout off for both losses).
    """
    t = np.asarray(treatments).astype(int)
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    Y = np.atleast_2d(np.asarray(curves, dtype=float))
    if t.size == 0:
        raise ValueError("empty dataset")
    if not (t.shape[0] == X.shape[0] == Y.shape[0]):
        raise ValueError("treatments, covariates and curves differ in length")
    if Y.shape[1] != len(grid):
        raise ValueError("target curves do not match the grid")
    n_treatments = int(t.max()) + 1 if n_treatments is None else n_treatments

    rng = np.random.default_rng(config.seed)
    tr, ho = holdout_split(t.size, config.holdout_fraction, rng)
    x_mean = X[tr].mean(axis=0)
    x_scale = X[tr].std(axis=0)
    x_scale[x_scale == 0] = 1.0
    params = init_params(
        n_treatments, X.shape[1], basis.num_basis, hidden, n_repr, rng, x_mean, x_scale
    )
    design = design_matrix(basis, grid)
    qw = trapezoid_weights(grid.levels)
    Z = encode_inputs(params, t, X)
    Z_tr, Y_tr = Z[tr], Y[tr]
    Z_ho, Y_ho = (Z[ho], Y[ho]) if ho.size else (Z_tr, Y_tr)

    def eval_loss(Zs, Ys):
        F, _ = _mlp(params, Zs)
        r = F @ (params.gamma @ design.T) - Ys
        return float(np.mean((r * r) @ qw))

    opt = Adam(config.learning_rate)
    keep = 1.0 - config.dropout_rate
    widths = [w.shape[1] for w in params.weights[:-1]]
    best, stale = np.inf, 0
    for epoch in range(config.epochs):
        order = rng.permutation(tr.size)
        for start in range(0, tr.size, config.batch_size):
            b = order[start : start + config.batch_size]
            masks = None
            if config.dropout_rate > 0:
                masks = [(rng.random((b.size, w)) < keep) / keep for w in widths]
            value, grads = objective_and_gradients(
                params, Z_tr[b], Y_tr[b], design, qw, masks, config.weight_decay
            )
            if not np.isfinite(value):
                raise FloatingPointError(f"training diverged at epoch {epoch}: non-finite loss")
            params = params.with_arrays(opt.step(params.arrays(), grads))
        held = eval_loss(Z_ho, Y_ho)
        if callback is not None:
            callback(epoch, eval_loss(Z_tr, Y_tr), held)
        if held < best:
            best, stale = held, 0
        else:
            stale += 1
            if config.lr_halving and stale >= config.plateau_patience:
                opt.lr /= 2
                stale = 0
                log.debug("epoch %d: learning rate halved to %g", epoch, opt.lr)
    # rebuilding re-runs the finiteness checks on the trained weights
    return NfrParams(**params.__dict__)


@dataclass
class NfrRegressor:
    """Outcome regression ``m_d(x)`` backed by the NFR network.

    Conforms to the regressor protocol used by :mod:`distcause.estimators`:
    ``fit(treatments, covariates, curves, n_treatments, grid)`` and
    ``predict(treatment, covariates) -> (n, M)`` sorted curves.
    """

    config: TrainConfig = field(default_factory=TrainConfig)
    basis: BSplineBasis = field(default_factory=BSplineBasis)
    hidden: tuple = (64, 64)
    n_repr: int = 16
    params: NfrParams | None = None

    def fit(self, treatments, covariates, curves, n_treatments, grid, seed=None):
        config = self.config if seed is None else replace(self.config, seed=seed)
        self._grid = grid
        self._design = design_matrix(self.basis, grid)
        self.params = train(
            treatments, covariates, curves, config, self.basis, grid,
            n_treatments=n_treatments, hidden=self.hidden, n_repr=self.n_repr,
        )
        return self

    def predict(self, treatment, covariates):
        return predict_curves(self.params, [treatment], covariates, self._design)
