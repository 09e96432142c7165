"""MAE of estimated causal effect maps against the synthetic ground truth."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .baselines import PerQuantileRegressor, RidgeRegressor
from .estimators import (
    CausalMapEstimate,
    MeanRegressor,
    UniformPropensity,
    ZeroRegressor,
    cross_fit,
)
from .nfr_net import NfrRegressor, TrainConfig
from .propensity import LogisticPropensity
from .quantile_space import QuantileGrid
from .synthetic import (
    DgpConfig,
    OraclePropensity,
    OracleRegressor,
    generate,
    true_causal_maps,
)

log = logging.getLogger(__name__)

LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)
REGRESSORS = ("nfr", "ridge", "per-quantile", "oracle", "zero", "mean")
PROPENSITIES = ("logistic", "oracle", "uniform")


def _maps(x) -> dict:
    return x.maps if isinstance(x, CausalMapEstimate) else x


def mae_at_quantiles(true_maps, est, levels=LEVELS) -> np.ndarray:
    """Per-level mean over ordered pairs (i != j) of the absolute error of
    the effect map ``map_i - map_j``."""
    true_maps, est = _maps(true_maps), _maps(est)
    if set(true_maps) != set(est):
        raise ValueError("treatment mismatch between true and estimated maps")
    labels = list(true_maps)
    if len(labels) < 2:
        raise ValueError("need at least two treatments")
    levels = np.asarray(levels, dtype=float)
    T = np.stack([true_maps[l](levels) for l in labels])
    E = np.stack([est[l](levels) for l in labels])
    dT = T[:, None, :] - T[None, :, :]
    dE = E[:, None, :] - E[None, :, :]
    off = ~np.eye(len(labels), dtype=bool)
    return np.abs(dE - dT)[off].mean(axis=0)


@dataclass
class MaeReport:
    estimator: str
    regressor: str
    levels: tuple
    per_trial: list  # per-trial per-level MAE rows
    propensity: str = "logistic"

    @property
    def trials(self) -> int:
        return len(self.per_trial)

    @property
    def per_quantile(self) -> np.ndarray:
        return np.mean(np.asarray(self.per_trial), axis=0)

    @property
    def trial_averages(self) -> np.ndarray:
        return np.mean(np.asarray(self.per_trial), axis=1)

    @property
    def average(self) -> float:
        return float(np.mean(self.per_quantile))

    @property
    def std(self) -> float:
        return float(np.std(self.trial_averages))

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_trial"] = [[float(v) for v in row] for row in self.per_trial]
        d["per_quantile"] = [float(v) for v in self.per_quantile]
        d["average"] = self.average
        d["std"] = self.std
        d["trials"] = self.trials
        return d


def make_regressor(name: str, config: DgpConfig | None = None, train: TrainConfig | None = None):
    train = train or TrainConfig()
    if name == "nfr":
        return NfrRegressor(train)
    if name == "ridge":
        return RidgeRegressor()
    if name == "per-quantile":
        return PerQuantileRegressor(train)
    if name == "oracle":
        return OracleRegressor(config)
    if name == "zero":
        return ZeroRegressor()
    if name == "mean":
        return MeanRegressor()
    raise ValueError(f"unknown regressor {name!r}; choose from {REGRESSORS}")


def make_propensity(name: str, config: DgpConfig | None = None):
    if name == "logistic":
        return LogisticPropensity()
    if name == "oracle":
        return OraclePropensity(config)
    if name == "uniform":
        return UniformPropensity()
    raise ValueError(f"unknown propensity model {name!r}; choose from {PROPENSITIES}")


@lru_cache(maxsize=16)
def _oracle(config_key: DgpConfig, levels_bytes: bytes, n_mc: int):
    grid = QuantileGrid(np.frombuffer(levels_bytes))
    return true_causal_maps(config_key, grid, n_mc=n_mc, seed=12345)


def oracle_maps(config: DgpConfig, grid: QuantileGrid, n_mc: int = 1_000_000) -> dict:
    """True causal maps; cached per DGP (dataset size and seed excluded)."""
    key = replace(config, n_units=1, seed=0)
    return _oracle(key, grid.levels.tobytes(), n_mc)


def trial_seeds(seed: int, trials: int):
    return [
        [int(v) for v in s.generate_state(2)]
        for s in np.random.SeedSequence(seed).spawn(trials)
    ]


def run_trials(
    config: DgpConfig,
    kinds=("dr", "ipw", "dml"),
    regressor: str = "nfr",
    propensity: str = "logistic",
    trials: int = 50,
    seed: int = 0,
    grid: QuantileGrid | None = None,
    k: int = 5,
    epsilon: float = 0.01,
    n_mc: int = 1_000_000,
    train: TrainConfig | None = None,
    checkpoint_dir=None,
) -> dict:
    """Repeat (fresh dataset, cross-fit, MAE vs oracle) ``trials`` times.

    All requested estimator kinds share each trial's nuisance fits.  With
    ``checkpoint_dir`` every finished trial is stored as JSON and skipped on
    a re-run, so an interrupted study resumes where it stopped.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = grid or QuantileGrid.midpoints(100)
    truth = oracle_maps(config, grid, n_mc)
    kinds = tuple(kinds)
    rows = {kind: [] for kind in kinds}
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
    for i, (data_seed, fit_seed) in enumerate(trial_seeds(seed, trials)):
        path = ckpt / f"trial_{i:04d}.json" if ckpt else None
        if path and path.exists():
            stored = json.loads(path.read_text())
            if all(kind in stored for kind in kinds):
                for kind in kinds:
                    rows[kind].append(stored[kind])
                continue
        t0 = time.perf_counter()
        data = generate(replace(config, seed=data_seed)).to_units(grid)
        ests = cross_fit(
            data, kinds, k=k, seed=fit_seed, epsilon=epsilon,
            regressor=make_regressor(regressor, config, train),
            propensity=make_propensity(propensity, config),
        )
        result = {kind: [float(v) for v in mae_at_quantiles(truth, ests[kind])] for kind in kinds}
        log.info("trial %d done in %.1fs: %s", i, time.perf_counter() - t0,
                 {kk: round(float(np.mean(v)), 4) for kk, v in result.items()})
        if path:
            path.write_text(json.dumps(result) + "\n")
        for kind in kinds:
            rows[kind].append(result[kind])
    return {kind: MaeReport(kind, regressor, LEVELS, rows[kind], propensity) for kind in kinds}


def run_experiment(config, kind="dml", regressor="nfr", trials=50, seed=0, **kwargs) -> MaeReport:
    return run_trials(config, (kind,), regressor, trials=trials, seed=seed, **kwargs)[kind]


def convergence_study(config: DgpConfig, sizes, trials=10, seed=0, kind="dml",
                      regressor="oracle", propensity="oracle", **kwargs) -> list:
    """Median per-trial average MAE for each sample size: ``[(N, median)]``."""
    sizes = list(sizes)
    if not sizes:
        raise ValueError("need at least one size")
    out = []
    for n in sizes:
        rep = run_trials(
            replace(config, n_units=int(n)), (kind,), regressor, propensity,
            trials=trials, seed=seed, **kwargs,
        )[kind]
        out.append((int(n), float(np.median(rep.trial_averages))))
    return out


def table_rows(reports) -> list:
    """Benchmark table rows: estimator, regressor, per-level MAE, average, std."""
    rows = []
    for rep in reports:
        rows.append(
            [rep.estimator.upper(), rep.regressor]
            + [f"{v:.6f}" for v in rep.per_quantile]
            + [f"{rep.average:.6f}", f"{rep.std:.6f}"]
        )
    return rows


def write_table_csv(reports, path):
    header = ["estimator", "regressor"] + [f"Q={int(round(l * 100))}%" for l in LEVELS]
    header += ["Average", "std"]
    lines = [",".join(header)] + [",".join(r) for r in table_rows(reports)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
