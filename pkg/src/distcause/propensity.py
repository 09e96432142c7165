"""Multinomial logistic propensity scores with probability clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

from . import checkpoint


@dataclass
class LogisticParams:
    """One weight vector and intercept per treatment class.

    With ``reference_normalized`` the intercepts are shifted so that the
    first class's intercept is zero; softmax is invariant to that shift.
    """

    weights: np.ndarray  # (r, p)
    intercepts: np.ndarray  # (r,)
    reference_normalized: bool = True

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.intercepts = np.asarray(self.intercepts, dtype=float)
        if self.intercepts.shape != (self.weights.shape[0],):
            raise ValueError("need one intercept per class")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.intercepts))):
            raise ValueError("non-finite parameter")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    def save(self, path):
        checkpoint.save(
            path,
            "logistic",
            {"weights": self.weights, "intercepts": self.intercepts},
            {"reference_normalized": self.reference_normalized},
        )

    @classmethod
    def load(cls, path):
        kind, arrays, meta = checkpoint.load(path)
        if kind != "logistic":
            raise ValueError(f"expected a logistic checkpoint, got {kind!r}")
        return cls(arrays["weights"], arrays["intercepts"], meta["reference_normalized"])


def fit(
    covariates,
    treatments,
    l2_penalty: float = 1e-4,
    n_classes: int | None = None,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> LogisticParams:
    """Maximise the L2-penalized multinomial log-likelihood.

    The objective is the mean negative log-likelihood plus
    ``l2_penalty / 2 * ||weights||^2`` (intercepts unpenalized), minimised by
    L-BFGS from a zero start until the gradient norm drops below ``tol``.
    """
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    t = np.asarray(treatments).astype(int)
    if t.size == 0:
        raise ValueError("empty data")
    if X.shape[0] != t.size:
        raise ValueError("covariates and treatments differ in length")
    if l2_penalty < 0:
        raise ValueError("l2_penalty must be >= 0")
    r = int(t.max()) + 1 if n_classes is None else n_classes
    if np.unique(t).size < 2:
        raise ValueError("degenerate treatment column")
    n, p = X.shape
    Y = np.zeros((n, r))
    Y[np.arange(n), t] = 1.0
    Xb = np.hstack([X, np.ones((n, 1))])

    def objective(flat):
        B = flat.reshape(p + 1, r)
        logp = log_softmax(Xb @ B, axis=1)
        nll = -np.sum(Y * logp) / n
        W = B[:p]
        val = nll + 0.5 * l2_penalty * np.sum(W * W)
        grad = Xb.T @ (np.exp(logp) - Y) / n
        grad[:p] += l2_penalty * W
        return val, grad.ravel()

    res = minimize(
        objective,
        np.zeros((p + 1) * r),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0, "maxcor": 20},
    )
    B = res.x.reshape(p + 1, r)
    W, b = B[:p].T.copy(), B[p].copy()
    # intercepts are unpenalized, so only they carry a free common shift
    b -= b[0]
    return LogisticParams(W, b, reference_normalized=True)


def predict_proba(params: LogisticParams, covariates) -> np.ndarray:
    """Softmax class probabilities; shape ``(r,)`` or ``(n, r)``."""
    X = np.asarray(covariates, dtype=float)
    if X.shape[-1] != params.weights.shape[1]:
        raise ValueError(
            f"dimension mismatch: expected {params.weights.shape[1]} covariates, "
            f"got {X.shape[-1]}"
        )
    return softmax(X @ params.weights.T + params.intercepts, axis=-1)


def clip(probabilities, epsilon: float = 0.01) -> np.ndarray:
    """Clamp each probability into [epsilon, 1 - epsilon], then renormalize."""
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    p = np.clip(np.asarray(probabilities, dtype=float), epsilon, 1.0 - epsilon)
    return p / p.sum(axis=-1, keepdims=True)


@dataclass
class LogisticPropensity:
    """Propensity model protocol used by the estimators:
    ``fit(covariates, treatments, n_treatments)`` and ``predict(covariates)``.
    """

    l2_penalty: float = 1e-4
    params: LogisticParams | None = None

    def fit(self, covariates, treatments, n_treatments, seed=None):
        self.params = fit(covariates, treatments, self.l2_penalty, n_treatments)
        return self

    def predict(self, covariates):
        return predict_proba(self.params, covariates)
