"""Cross-fitted DR, IPW and DML estimators of causal maps.

For each treatment ``d`` the causal map is the expected quantile function of
the potential outcome under ``d``.  Units are split into K folds; nuisance
models (outcome regression ``m`` and propensity ``pi``) are fitted on the
complement of each fold and evaluated on the fold itself::

    DR   mean_s m_d(X_s)
    IPW  mean_s 1{D_s = d} / pi_d(X_s) * Q_s
    DML  mean_s m_d(X_s) + 1{D_s = d} / pi_d(X_s) * (Q_s - m_d(X_s))

Fold results are combined with weights N_k / N.
"""

from __future__ import annotations

import copy
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .propensity import LogisticPropensity, clip
from .quantile_space import EffectCurve, QuantileCurve, QuantileGrid

KINDS = ("dr", "ipw", "dml")
SCHEMA_VERSION = 1


class NoSupportError(ValueError):
    pass


def worker_count() -> int:
    """Worker cap from ``DISTCAUSE_THREADS``; defaults to the CPU count."""
    env = os.environ.get("DISTCAUSE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class UnitData:
    """Column-oriented units ready for estimation.

    ``treatment`` holds indices into ``labels``; ``curves`` holds each unit's
    empirical quantile values on ``grid``.
    """

    labels: tuple
    treatment: np.ndarray
    covariates: np.ndarray
    curves: np.ndarray
    grid: QuantileGrid

    def __post_init__(self):
        self.labels = tuple(str(l) for l in self.labels)
        self.treatment = np.asarray(self.treatment).astype(int)
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        self.curves = np.atleast_2d(np.asarray(self.curves, dtype=float))
        n = self.treatment.size
        if self.covariates.shape[0] != n or self.curves.shape[0] != n:
            raise ValueError("treatment, covariates and curves differ in length")
        if self.curves.shape[1] != len(self.grid):
            raise ValueError("curves do not match the grid")

    def __len__(self):
        return self.treatment.size

    @property
    def n_treatments(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "UnitData":
        return UnitData(
            self.labels, self.treatment[idx], self.covariates[idx], self.curves[idx], self.grid
        )


@dataclass(frozen=True)
class FoldAssignment:
    fold_of_unit: np.ndarray
    k: int

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_unit == fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of_unit, minlength=self.k)


def split_folds(n_units: int, k: int, seed: int = 0) -> FoldAssignment:
    """Uniformly random partition into ``k`` folds whose sizes differ by <= 1."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n_units < k:
        raise ValueError("fewer units than folds")
    perm = np.random.default_rng(seed).permutation(n_units)
    fold = np.empty(n_units, dtype=int)
    fold[perm] = np.arange(n_units) % k
    return FoldAssignment(fold, k)


# --- per-fold contributions --------------------------------------------------


def estimate_fold_dr(m_hat: np.ndarray) -> np.ndarray:
    """Average predicted curves over every unit in the fold.

    ``m_hat`` has shape ``(r, n_k, M)``: predictions for each treatment at each
    fold unit, whatever treatment the unit actually received.
    """
    if m_hat.shape[1] == 0:
        raise ValueError("empty fold")
    n = m_hat.shape[1]
    out = np.empty((m_hat.shape[0], m_hat.shape[2]))
    for d in range(m_hat.shape[0]):
        out[d] = np.sum(m_hat[d], axis=0) / n
    return out


def ipw_weights(treatment, propensity: np.ndarray) -> np.ndarray:
    """``1{D_s = d} / pi_d(X_s)``, shape ``(n_k, r)``."""
    n, r = propensity.shape
    ind = np.zeros((n, r))
    ind[np.arange(n), treatment] = 1.0
    return ind / propensity


def _warn_untreated(treatment, r, labels=None):
    counts = np.bincount(treatment, minlength=r)
    for d in np.flatnonzero(counts == 0):
        name = labels[d] if labels else d
        warnings.warn(
            f"no unit with treatment {name} in fold; its IPW term is zero",
            RuntimeWarning,
            stacklevel=3,
        )
    return counts


def estimate_fold_ipw(treatment, propensity, curves, labels=None) -> np.ndarray:
    """Inverse-propensity weighted average of the fold's quantile curves.

    ``propensity`` is ``(n_k, r)`` and should already be clipped.
    """
    treatment = np.asarray(treatment).astype(int)
    n = treatment.size
    if n == 0:
        raise ValueError("empty fold")
    r = propensity.shape[1]
    _warn_untreated(treatment, r, labels)
    w = ipw_weights(treatment, propensity)
    out = np.empty((r, curves.shape[1]))
    for d in range(r):
        out[d] = np.sum(w[:, d : d + 1] * curves, axis=0) / n
    return out


def estimate_fold_dml(treatment, propensity, curves, m_hat, labels=None) -> np.ndarray:
    """DR term plus an inverse-propensity weighted residual correction."""
    treatment = np.asarray(treatment).astype(int)
    n = treatment.size
    if n == 0:
        raise ValueError("empty fold")
    r = propensity.shape[1]
    _warn_untreated(treatment, r, labels)
    w = ipw_weights(treatment, propensity)
    out = np.empty((r, curves.shape[1]))
    for d in range(r):
        out[d] = np.sum(m_hat[d] + w[:, d : d + 1] * (curves - m_hat[d]), axis=0) / n
    return out


# --- simple nuisance models --------------------------------------------------


class ZeroRegressor:
    """``m_d(x) = 0`` for every treatment."""

    def fit(self, treatments, covariates, curves, n_treatments, grid, seed=None):
        self._m = len(grid)
        return self

    def predict(self, treatment, covariates):
        return np.zeros((np.atleast_2d(covariates).shape[0], self._m))


class MeanRegressor:
    """Per-treatment barycenter of the training curves, ignoring covariates."""

    def fit(self, treatments, covariates, curves, n_treatments, grid, seed=None):
        overall = curves.mean(axis=0)
        self._means = np.stack(
            [
                curves[treatments == d].mean(axis=0) if np.any(treatments == d) else overall
                for d in range(n_treatments)
            ]
        )
        return self

    def predict(self, treatment, covariates):
        n = np.atleast_2d(covariates).shape[0]
        return np.repeat(self._means[treatment][None, :], n, axis=0)


class UniformPropensity:
    """``pi_d(x) = 1 / r``, a deliberately wrong propensity model."""

    def fit(self, covariates, treatments, n_treatments, seed=None):
        self._r = n_treatments
        return self

    def predict(self, covariates):
        n = np.atleast_2d(covariates).shape[0]
        return np.full((n, self._r), 1.0 / self._r)


# --- full estimator ------------------------------------------------------------


@dataclass
class CausalMapEstimate:
    maps: dict  # label -> QuantileCurve
    kind: str
    k: int
    seed: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> QuantileGrid:
        return next(iter(self.maps.values())).grid

    @property
    def labels(self) -> tuple:
        return tuple(self.maps)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "estimator": self.kind,
            "folds": self.k,
            "seed": self.seed,
            "grid": [float(v) for v in self.grid.levels],
            "maps": {lab: [float(v) for v in c.values] for lab, c in self.maps.items()},
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CausalMapEstimate":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported causal map schema version")
        grid = QuantileGrid(doc["grid"])
        maps = {lab: QuantileCurve(grid, v) for lab, v in doc["maps"].items()}
        return cls(maps, doc["estimator"], doc["folds"], doc["seed"], doc.get("diagnostics", {}))

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    def csv_rows(self):
        for lab, curve in self.maps.items():
            for tau, v in zip(curve.grid.levels, curve.values):
                yield lab, float(tau), float(v)

    def write_csv(self, path):
        lines = ["treatment,tau,value"]
        lines += [f"{lab},{tau!r},{v!r}" for lab, tau, v in self.csv_rows()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _canonical_order(data: UnitData) -> np.ndarray:
    keys = np.column_stack([data.treatment, data.covariates, data.curves])
    return np.lexsort(keys.T[::-1])


def _fold_seeds(seed: int, k: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def cross_fit(
    data: UnitData,
    kinds=KINDS,
    k: int = 5,
    seed: int = 0,
    epsilon: float = 0.01,
    regressor=None,
    propensity=None,
    folds: FoldAssignment | None = None,
    n_jobs: int | None = None,
) -> dict:
    """Run the cross-fitting algorithm once and return an estimate per kind.

    Nuisance models are shared between the requested kinds, so asking for
    all three costs the same as asking for DML alone.  ``regressor`` and
    ``propensity`` are prototypes; a fresh deep copy is fitted per fold.
    """
    kinds = tuple(kinds)
    for kind in kinds:
        if kind not in KINDS:
            raise ValueError(f"unknown estimator kind {kind!r}")
    r = data.n_treatments
    present = np.bincount(data.treatment, minlength=r)
    missing = [data.labels[d] for d in np.flatnonzero(present == 0)]
    if missing:
        raise NoSupportError(f"treatment without support: {', '.join(missing)}")
    if len(data) < k:
        raise ValueError("fewer units than folds")
    # estimates must not depend on the order units are supplied in, so the
    # default folds are drawn over a canonical ordering
    order = _canonical_order(data)
    if folds is None:
        fold_of = split_folds(len(data), k, seed).fold_of_unit
    elif folds.fold_of_unit.shape != (len(data),):
        raise ValueError("fold assignment does not match the data")
    else:
        k = folds.k
        fold_of = folds.fold_of_unit[order]
    data = data.subset(order)

    need_m = any(kind in ("dr", "dml") for kind in kinds)
    need_pi = any(kind in ("ipw", "dml") for kind in kinds)
    if need_m and regressor is None:
        from .nfr_net import NfrRegressor

        regressor = NfrRegressor()
    if need_pi and propensity is None:
        propensity = LogisticPropensity()
    seeds = _fold_seeds(seed, k)

    def run_fold(j):
        test = np.flatnonzero(fold_of == j)
        train = np.flatnonzero(fold_of != j)
        if test.size == 0:
            raise ValueError("empty fold")
        tr, te = data.subset(train), data.subset(test)
        out = {"n": test.size, "treated": np.bincount(te.treatment, minlength=r)}
        m_hat = pi = None
        if need_m:
            model = copy.deepcopy(regressor).fit(
                tr.treatment, tr.covariates, tr.curves, r, data.grid, seed=seeds[j]
            )
            m_hat = np.stack([model.predict(d, te.covariates) for d in range(r)])
        if need_pi:
            model = copy.deepcopy(propensity).fit(
                tr.covariates, tr.treatment, r, seed=seeds[j]
            )
            pi = clip(model.predict(te.covariates), epsilon)
            out["min_propensity"] = float(pi.min())
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if "dr" in kinds:
                out["dr"] = estimate_fold_dr(m_hat)
            if "ipw" in kinds:
                out["ipw"] = estimate_fold_ipw(te.treatment, pi, te.curves, data.labels)
            if "dml" in kinds:
                out["dml"] = estimate_fold_dml(te.treatment, pi, te.curves, m_hat, data.labels)
        out["warnings"] = sorted({str(w.message) for w in caught})
        return out

    n_jobs = min(k, n_jobs or worker_count())
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run_fold, range(k)))
    else:
        results = [run_fold(j) for j in range(k)]

    N = len(data)
    diagnostics = {
        "fold_sizes": [int(res["n"]) for res in results],
        "treated_per_fold": [[int(c) for c in res["treated"]] for res in results],
        "warnings": sorted({w for res in results for w in res["warnings"]}),
    }
    if need_pi:
        diagnostics["min_clipped_propensity"] = min(res["min_propensity"] for res in results)
    for msg in diagnostics["warnings"]:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)

    estimates = {}
    for kind in kinds:
        total = np.zeros((r, len(data.grid)))
        for res in results:
            total += (res["n"] / N) * res[kind]
        if kind in ("dr", "dml"):
            total = np.sort(total, axis=1)
        maps = {lab: QuantileCurve(data.grid, total[d]) for d, lab in enumerate(data.labels)}
        estimates[kind] = CausalMapEstimate(maps, kind, k, seed, dict(diagnostics))
    return estimates


def estimate(data: UnitData, kind: str = "dml", k: int = 5, seed: int = 0, epsilon=0.01,
             regressor=None, propensity=None, folds=None, n_jobs=None) -> CausalMapEstimate:
    """Cross-fitted estimate of every treatment's causal map."""
    return cross_fit(
        data, (kind,), k, seed, epsilon, regressor, propensity, folds, n_jobs
    )[kind]


@dataclass
class EffectReport:
    pair: tuple
    curve: EffectCurve
    readouts: dict  # level -> value

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "treatment": self.pair[0],
            "baseline": self.pair[1],
            "grid": [float(v) for v in self.curve.grid.levels],
            "values": [float(v) for v in self.curve.values],
            "readouts": {repr(float(k)): float(v) for k, v in self.readouts.items()},
        }


def effect(est: CausalMapEstimate, d_i, d_j, levels=(0.1, 0.3, 0.5, 0.7, 0.9)) -> EffectReport:
    """Causal effect map of ``d_i`` relative to ``d_j`` with readouts."""
    for d in (d_i, d_j):
        if d not in est.maps:
            raise KeyError(f"unknown treatment label {d!r}")
    a, b = est.maps[d_i], est.maps[d_j]
    curve = EffectCurve(a.grid, a.values - b.values)
    levels = [float(t) for t in levels]
    for t in levels:
        if not 0 < t < 1:
            raise ValueError("readout levels must lie in (0, 1)")
    readouts = {t: float(curve(t)) for t in levels}
    return EffectReport((d_i, d_j), curve, readouts)
