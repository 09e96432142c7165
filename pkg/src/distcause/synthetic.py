"""Synthetic units whose outcomes are distributions.

Each unit has 10 (by default) Gaussian covariates, a treatment drawn from a
softmax over linear scores, and an outcome quantile function::

    Q_s(t) = c + (1 - c) * (E[D] + sqrt(D_s)) * sum_j w_j(X_s) Binv_j(t) + eps_s

where ``w(X)`` is a softmax over the pairwise products ``X^{2j-1} X^{2j}``,
``Binv_j`` is the inverse CDF of Beta(alpha_j, beta_j) and ``eps_s`` is a
per-unit Gaussian shift.  Observations are drawn from ``Q_s`` by inverse
transform sampling.  Because the truth is known, the module also exposes
oracle quantities (true curves, causal maps, propensities).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .quantile_space import QuantileCurve, QuantileGrid, quantile_values

DEFAULT_BETA_PARAMS = ((2.0, 5.0), (5.0, 2.0), (2.0, 2.0), (1.0, 3.0), (3.0, 1.0))
GAMMA_W_SEED = 20240917
EXPECTED_D_DRAWS = 1_000_000
EXPECTED_D_SEED = 7


# --- regularized incomplete beta and its inverse ---------------------------

_TINY = 1e-300


def _beta_cf(a, b, x, max_iter=500, eps=3e-16):
    """Continued fraction for I_x(a, b) (modified Lentz), vectorized."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h *= delta
        if np.all(np.abs(delta - 1.0) < eps):
            break
    return h


def _log_beta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def regularized_incomplete_beta(a: float, b: float, x):
    """I_x(a, b), the CDF of Beta(a, b) at ``x``."""
    if a <= 0 or b <= 0:
        raise ValueError("beta shape parameters must be positive")
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 1.0, 1.0, 0.0)
    inside = (x > 0) & (x < 1)
    if not np.any(inside):
        return out if out.ndim else float(out)
    xi = x[inside]
    lbeta = _log_beta(a, b)
    with np.errstate(divide="ignore"):
        front = np.exp(a * np.log(xi) + b * np.log1p(-xi) - lbeta)
    direct = xi < (a + 1.0) / (a + b + 2.0)
    val = np.empty_like(xi)
    if np.any(direct):
        val[direct] = front[direct] * _beta_cf(a, b, xi[direct]) / a
    if np.any(~direct):
        xr = 1.0 - xi[~direct]
        val[~direct] = 1.0 - front[~direct] * _beta_cf(b, a, xr) / b
    out[inside] = np.clip(val, 0.0, 1.0)
    return out if out.ndim else float(out)


def inverse_beta_cdf(alpha: float, beta: float, t, tol: float = 1e-13):
    """Inverse CDF of Beta(alpha, beta) at levels ``t`` in (0, 1).

    Safeguarded Newton iteration on the bracket [0, 1]: a Newton step that
    leaves the current bracket is replaced by bisection.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("beta shape parameters must be positive")
    t = np.asarray(t, dtype=float)
    if np.any((t <= 0) | (t >= 1)) or not np.all(np.isfinite(t)):
        raise ValueError("t must lie in the open interval (0, 1)")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    lo = np.zeros_like(t)
    hi = np.ones_like(t)
    x = np.full_like(t, alpha / (alpha + beta))
    lbeta = _log_beta(alpha, beta)
    active = np.ones(t.shape, dtype=bool)
    for _ in range(200):
        xa = x[active]
        f = regularized_incomplete_beta(alpha, beta, xa) - t[active]
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(f < 0, xa, lo_a)
        hi_a = np.where(f > 0, xa, hi_a)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            pdf = np.exp(
                (alpha - 1.0) * np.log(xa) + (beta - 1.0) * np.log1p(-xa) - lbeta
            )
            step = xa - f / pdf
        bad = ~np.isfinite(step) | (step <= lo_a) | (step >= hi_a)
        new = np.where(bad, 0.5 * (lo_a + hi_a), step)
        done = (np.abs(new - xa) < tol) | (f == 0) | (hi_a - lo_a < tol)
        x[active] = np.where(f == 0, xa, new)
        lo[active], hi[active] = lo_a, hi_a
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not np.any(active):
            break
    return float(x[0]) if scalar else x


@lru_cache(maxsize=64)
def _inverse_table(alpha, beta, n_nodes=8193):
    """Dense (u, Binv(u)) table on [0, 1], nodes clustered toward both ends."""
    u = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_nodes) / (n_nodes - 1)))
    vals = np.empty_like(u)
    vals[0], vals[-1] = 0.0, 1.0
    vals[1:-1] = inverse_beta_cdf(alpha, beta, u[1:-1])
    u.setflags(write=False)
    vals.setflags(write=False)
    return u, vals


@lru_cache(maxsize=64)
def _inverse_at_levels(alpha, beta, levels_bytes):
    vals = inverse_beta_cdf(alpha, beta, np.frombuffer(levels_bytes))
    vals.setflags(write=False)
    return vals


# --- configuration ---------------------------------------------------------


def default_gamma_w(n_treatments=5, n_covariates=10, scale=0.1):
    """Treatment-assignment coefficients, drawn once from a fixed seed."""
    rng = np.random.default_rng(GAMMA_W_SEED)
    g = rng.normal(0.0, scale, size=(n_treatments, n_covariates))
    return tuple(tuple(float(v) for v in row) for row in g)


@dataclass(frozen=True)
class DgpConfig:
    n_covariates: int = 10
    treatment_values: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    c: float = 0.2
    beta_params: tuple = DEFAULT_BETA_PARAMS
    gamma_w: tuple | None = None
    gamma_w_scale: float = 0.1
    noise_sigma: float = math.sqrt(0.05)
    n_units: int = 5000
    obs_per_unit: int = 100
    seed: int = 0
    covariate_means: tuple | None = None

    def __post_init__(self):
        n = self.n_covariates
        if n < 2 or n % 2:
            raise ValueError("n_covariates must be a positive even number")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("c must lie in [0, 1]")
        if len(self.beta_params) != n // 2:
            raise ValueError("need one (alpha, beta) pair per covariate pair")
        for pair in self.beta_params:
            if len(pair) != 2 or min(pair) <= 0:
                raise ValueError(f"invalid beta parameters {pair!r}")
        if any(v < 0 for v in self.treatment_values):
            raise ValueError("treatment values must be non-negative")
        if self.n_units < 1 or self.obs_per_unit < 1:
            raise ValueError("n_units and obs_per_unit must be positive")
        r = len(self.treatment_values)
        # normalize to hashable tuples so configs can key caches
        object.__setattr__(
            self, "treatment_values", tuple(float(v) for v in self.treatment_values)
        )
        object.__setattr__(
            self, "beta_params", tuple((float(a), float(b)) for a, b in self.beta_params)
        )
        if self.gamma_w is None:
            gw = default_gamma_w(r, n, self.gamma_w_scale)
        else:
            gw = tuple(tuple(float(v) for v in row) for row in self.gamma_w)
        if len(gw) != r or any(len(row) != n for row in gw):
            raise ValueError("gamma_w must be n_treatments x n_covariates")
        object.__setattr__(self, "gamma_w", gw)
        if self.covariate_means is None:
            means = np.repeat(np.linspace(-2.0, 2.0, n // 2), 2)
        else:
            means = np.asarray(self.covariate_means, dtype=float)
            if means.shape != (n,):
                raise ValueError("covariate_means must have n_covariates entries")
        object.__setattr__(self, "covariate_means", tuple(float(m) for m in means))

    @property
    def n_treatments(self) -> int:
        return len(self.treatment_values)

    @property
    def labels(self) -> tuple:
        return tuple(_label(v) for v in self.treatment_values)

    @property
    def expected_treatment(self) -> float:
        return _expected_treatment(
            self.gamma_w, self.covariate_means, self.treatment_values
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["expected_treatment"] = self.expected_treatment
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        d = {k: v for k, v in d.items() if k != "expected_treatment"}
        for key in ("treatment_values", "covariate_means"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        for key in ("beta_params", "gamma_w"):
            if d.get(key) is not None:
                d[key] = tuple(tuple(row) for row in d[key])
        return cls(**d)


def _label(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def draw_covariates(config: DgpConfig, n: int, rng) -> np.ndarray:
    return rng.normal(np.asarray(config.covariate_means), 1.0, size=(n, config.n_covariates))


def _softmax(s):
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def true_propensity(config: DgpConfig, covariates) -> np.ndarray:
    """P(D = d | X) for every treatment, shape ``(n, r)``."""
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    return _softmax(X @ np.asarray(config.gamma_w).T)


@lru_cache(maxsize=32)
def _expected_treatment(gamma_w, means, values):
    rng = np.random.default_rng(EXPECTED_D_SEED)
    g = np.asarray(gamma_w)
    total = 0.0
    chunk = 200_000
    for start in range(0, EXPECTED_D_DRAWS, chunk):
        X = rng.normal(np.asarray(means), 1.0, size=(chunk, len(means)))
        total += float((_softmax(X @ g.T) @ np.asarray(values)).sum())
    return total / EXPECTED_D_DRAWS


def mixture_weights(config: DgpConfig, covariates) -> np.ndarray:
    """Softmax over the pairwise covariate products, shape ``(n, n/2)``."""
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    return _softmax(X[:, 0::2] * X[:, 1::2])


def _component_matrix(config: DgpConfig, levels) -> np.ndarray:
    levels = np.ascontiguousarray(levels, dtype=float)
    return np.stack(
        [_inverse_at_levels(a, b, levels.tobytes()) for a, b in config.beta_params]
    )


def treatment_scale(config: DgpConfig, treatment_value) -> np.ndarray:
    return (1.0 - config.c) * (
        config.expected_treatment + np.sqrt(np.asarray(treatment_value, dtype=float))
    )


def true_quantile_matrix(config: DgpConfig, covariates, treatment_values, levels):
    """Noise-free unit quantile values, shape ``(n, len(levels))``."""
    W = mixture_weights(config, covariates)
    comps = _component_matrix(config, levels)
    scale = np.broadcast_to(treatment_scale(config, treatment_values), (W.shape[0],))
    return config.c + scale[:, None] * (W @ comps)


def true_quantile(config: DgpConfig, covariates, treatment_value, grid: QuantileGrid):
    x = np.asarray(covariates, dtype=float)[None, :]
    vals = true_quantile_matrix(config, x, treatment_value, grid.levels)[0]
    return QuantileCurve(grid, np.maximum.accumulate(vals))


def mean_mixture_curve(config: DgpConfig, levels, n_mc: int, seed: int = 0):
    """Monte Carlo mean of the covariate-weighted Beta mixture and its
    standard error at each level."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    comps = _component_matrix(config, levels)
    rng = np.random.default_rng(seed)
    total = np.zeros(len(levels))
    total_sq = np.zeros(len(levels))
    chunk = 100_000
    done = 0
    while done < n_mc:
        n = min(chunk, n_mc - done)
        vals = mixture_weights(config, draw_covariates(config, n, rng)) @ comps
        total += vals.sum(axis=0)
        total_sq += (vals * vals).sum(axis=0)
        done += n
    mean = total / n_mc
    var = np.maximum(total_sq / n_mc - mean * mean, 0.0)
    return mean, np.sqrt(var / n_mc)


def true_causal_map(config, treatment_value, n_mc, grid: QuantileGrid, seed=0):
    """Barycenter quantile curve of the potential outcomes under a treatment.

    The per-unit noise has mean zero and drops out of the expectation.
    """
    mean, _ = mean_mixture_curve(config, grid.levels, n_mc, seed)
    vals = config.c + treatment_scale(config, treatment_value) * mean
    return QuantileCurve(grid, np.maximum.accumulate(vals))


def true_causal_maps(config, grid: QuantileGrid, n_mc=1_000_000, seed=0) -> dict:
    """Oracle causal map for every treatment label (one shared MC draw)."""
    mean, _ = mean_mixture_curve(config, grid.levels, n_mc, seed)
    out = {}
    for label, d in zip(config.labels, config.treatment_values):
        vals = config.c + treatment_scale(config, d) * mean
        out[label] = QuantileCurve(grid, np.maximum.accumulate(vals))
    return out


# --- datasets ----------------------------------------------------------------


@dataclass
class SyntheticDataset:
    config: DgpConfig
    treatment: np.ndarray  # (N,) indices into config.treatment_values
    covariates: np.ndarray  # (N, n)
    noise: np.ndarray  # (N,)
    observations: np.ndarray = field(repr=False)  # (N, obs_per_unit)

    @property
    def labels(self) -> tuple:
        return self.config.labels

    @property
    def treatment_values(self) -> np.ndarray:
        return np.asarray(self.config.treatment_values)[self.treatment]

    def empirical_curves(self, grid: QuantileGrid) -> np.ndarray:
        """Type-1 empirical quantile curve of every unit, shape ``(N, M)``."""
        return np.stack([quantile_values(o, grid.levels) for o in self.observations])

    def true_curves(self, grid: QuantileGrid) -> np.ndarray:
        base = true_quantile_matrix(
            self.config, self.covariates, self.treatment_values, grid.levels
        )
        return base + self.noise[:, None]

    def to_units(self, grid: QuantileGrid):
        from .estimators import UnitData

        return UnitData(
            labels=self.labels,
            treatment=self.treatment.copy(),
            covariates=self.covariates,
            curves=self.empirical_curves(grid),
            grid=grid,
        )

    def export_csv(self, directory):
        """Write ``units.csv``, ``observations.csv`` and ``dgp_config.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        n = self.config.n_covariates
        lines = ["unit_id,treatment," + ",".join(f"x{j + 1}" for j in range(n))]
        labels = self.labels
        for i in range(self.treatment.size):
            row = [f"u{i}", labels[self.treatment[i]]]
            row += [repr(float(v)) for v in self.covariates[i]]
            lines.append(",".join(row))
        (directory / "units.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        obs = ["unit_id,value"]
        for i, row in enumerate(self.observations):
            obs.extend(f"u{i},{float(v)!r}" for v in row)
        (directory / "observations.csv").write_text(
            "\n".join(obs) + "\n", encoding="utf-8"
        )
        (directory / "dgp_config.json").write_text(
            json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def sample_mixture_quantile(config: DgpConfig, weights, u) -> np.ndarray:
    """Evaluate sum_j w_j Binv_j(u) for uniforms ``u`` of shape ``(N, k)``."""
    out = np.zeros_like(u)
    for j, (a, b) in enumerate(config.beta_params):
        nodes, vals = _inverse_table(a, b)
        out += weights[:, j : j + 1] * np.interp(u, nodes, vals)
    return out


def generate(config: DgpConfig) -> SyntheticDataset:
    """Draw ``config.n_units`` units; deterministic given ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    N = config.n_units
    X = draw_covariates(config, N, rng)
    probs = true_propensity(config, X)
    cum = np.cumsum(probs, axis=1)
    u_treat = rng.random(N)
    treatment = np.minimum((u_treat[:, None] > cum).sum(axis=1), config.n_treatments - 1)
    noise = rng.normal(0.0, config.noise_sigma, size=N)
    u = rng.random((N, config.obs_per_unit))
    # uniforms are in [0, 1); 0 maps to the lower support end
    mix = sample_mixture_quantile(config, mixture_weights(config, X), u)
    scale = treatment_scale(config, np.asarray(config.treatment_values)[treatment])
    obs = config.c + scale[:, None] * mix + noise[:, None]
    return SyntheticDataset(config, treatment, X, noise, obs)


class OracleRegressor:
    """True ``m_d(x)``: the noise-free unit quantile curve (noise has mean 0)."""

    def __init__(self, config: DgpConfig):
        self.config = config

    def fit(self, treatments, covariates, curves, n_treatments, grid, seed=None):
        self._levels = grid.levels
        return self

    def predict(self, treatment, covariates):
        d = self.config.treatment_values[treatment]
        return np.sort(true_quantile_matrix(self.config, covariates, d, self._levels), axis=1)


class OraclePropensity:
    """True assignment probabilities."""

    def __init__(self, config: DgpConfig):
        self.config = config

    def fit(self, covariates, treatments, n_treatments, seed=None):
        return self

    def predict(self, covariates):
        return true_propensity(self.config, covariates)
