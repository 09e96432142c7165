"""Loading observational units from CSV files and bootstrap quantile reports.

Two files describe a dataset:

* units CSV: ``unit_id``, a treatment column (or a numeric column to bin),
  then covariate columns;
* observations CSV: ``unit_id,value`` with one row per raw outcome draw.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .estimators import UnitData, cross_fit, worker_count
from .quantile_space import QuantileGrid, Sample, quantile_values

log = logging.getLogger(__name__)


class IngestError(ValueError):
    """Input files are malformed or inconsistent."""


@dataclass
class Unit:
    unit_id: str
    treatment: str
    covariates: dict
    observations: Sample


@dataclass(frozen=True)
class BinningRule:
    """Left-closed bins ``[b_i, b_{i+1})`` over a numeric column.

    ``labels`` has one more entry than ``breaks``: values below the first
    break get ``labels[0]``, values at or above the last get ``labels[-1]``.
    """

    column: str
    breaks: tuple
    labels: tuple

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        labels = tuple(str(l) for l in self.labels)
        if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(labels) != len(breaks) + 1:
            raise ValueError("need exactly one more label than breakpoints")
        if len(set(labels)) != len(labels):
            raise ValueError("bin labels must be distinct")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "labels", labels)

    def assign(self, value: float) -> str:
        return self.labels[int(np.searchsorted(self.breaks, value, side="right"))]


def _read_csv(path):
    path = Path(path)
    if not path.exists():
        raise IngestError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path} is empty") from None
        rows = [row for row in reader if row]
    return header, rows


def _parse_float(text, where):
    try:
        v = float(text)
    except ValueError:
        raise IngestError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise IngestError(f"{where}: non-finite value")
    return v


def ingest(units_csv, observations_csv, binning: BinningRule | None = None,
           min_obs: int = 10, treatment_column: str = "treatment") -> list:
    """Join the two CSV files on ``unit_id`` into a list of :class:`Unit`.

    Units with fewer than ``min_obs`` observations are dropped with a
    warning.  Observation rows naming an unknown unit are an error.
    """
    header, rows = _read_csv(units_csv)
    role = binning.column if binning else treatment_column
    missing = [c for c in ("unit_id", role) if c not in header]
    if missing:
        raise IngestError(f"{units_csv}: missing columns: {', '.join(missing)}")
    id_col = header.index("unit_id")
    role_col = header.index(role)
    cov_cols = [i for i in range(len(header)) if i not in (id_col, role_col)]
    cov_names = [header[i] for i in cov_cols]

    units = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise IngestError(f"{units_csv}:{lineno}: expected {len(header)} fields")
        uid = row[id_col].strip()
        if uid in units:
            raise IngestError(f"{units_csv}:{lineno}: duplicate unit_id {uid!r}")
        raw = row[role_col].strip()
        treatment = binning.assign(_parse_float(raw, f"{units_csv}:{lineno}")) if binning else raw
        covs = {
            name: _parse_float(row[i], f"{units_csv}:{lineno}")
            for name, i in zip(cov_names, cov_cols)
        }
        units[uid] = (treatment, covs, [])

    oheader, orows = _read_csv(observations_csv)
    missing = [c for c in ("unit_id", "value") if c not in oheader]
    if missing:
        raise IngestError(f"{observations_csv}: missing columns: {', '.join(missing)}")
    oid, oval = oheader.index("unit_id"), oheader.index("value")
    orphans = []
    for lineno, row in enumerate(orows, start=2):
        uid = row[oid].strip()
        if uid not in units:
            orphans.append(lineno)
            continue
        units[uid][2].append(_parse_float(row[oval], f"{observations_csv}:{lineno}"))
    if orphans:
        shown = ", ".join(map(str, orphans[:20])) + (" ..." if len(orphans) > 20 else "")
        raise IngestError(
            f"{observations_csv}: observations for unknown unit_id at rows {shown}"
        )

    out, dropped = [], []
    for uid, (treatment, covs, obs) in units.items():
        if len(obs) < max(min_obs, 1):
            dropped.append(uid)
            continue
        out.append(Unit(uid, treatment, covs, Sample(np.array(obs))))
    if dropped:
        msg = f"dropped {len(dropped)} unit(s) with fewer than {min_obs} observations"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return out


def export_units(units, directory):
    """Write ``units.csv`` and ``observations.csv`` for a list of units."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(units[0].covariates) if units else []
    lines = [",".join(["unit_id", "treatment", *names])]
    obs = ["unit_id,value"]
    for u in units:
        lines.append(",".join([u.unit_id, u.treatment] + [repr(u.covariates[n]) for n in names]))
        obs.extend(f"{u.unit_id},{float(v)!r}" for v in u.observations.observations)
    (directory / "units.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (directory / "observations.csv").write_text("\n".join(obs) + "\n", encoding="utf-8")


def _label_order(labels):
    uniq = sorted(set(labels))
    try:
        return sorted(uniq, key=float)
    except ValueError:
        return uniq


def to_unit_data(units, grid: QuantileGrid, labels=None) -> UnitData:
    """Stack units into arrays; each unit's outcome becomes its empirical
    quantile curve on ``grid``."""
    if not units:
        raise IngestError("no units to analyse")
    names = list(units[0].covariates)
    for u in units:
        if list(u.covariates) != names:
            raise IngestError(f"unit {u.unit_id}: covariate names differ")
    labels = tuple(labels) if labels else tuple(_label_order(u.treatment for u in units))
    index = {lab: i for i, lab in enumerate(labels)}
    unknown = {u.treatment for u in units} - set(index)
    if unknown:
        raise IngestError(f"treatment labels not in the label set: {sorted(unknown)}")
    return UnitData(
        labels=labels,
        treatment=np.array([index[u.treatment] for u in units]),
        covariates=np.array([[u.covariates[n] for n in names] for u in units]).reshape(len(units), len(names)),
        curves=np.stack([quantile_values(u.observations.observations, grid.levels) for u in units]),
        grid=grid,
    )


# --- bootstrap report --------------------------------------------------------


@dataclass
class QuantileReport:
    """Causal-map values with bootstrap percentile intervals.

    ``point``, ``lo`` and ``hi`` are ``(r, L)`` arrays over ``labels`` and
    ``levels``.  ``pct_change[(a, b)]`` is ``100 * (b - a) / a`` per level.
    """

    labels: tuple
    levels: tuple
    point: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    b_reps: int
    alpha: float
    pct_change: dict = field(default_factory=dict)
    widened: int = 0

    def rows(self):
        header = ["quantile"]
        for lab in self.labels:
            header += [lab, f"{lab}_ci_lo", f"{lab}_ci_hi"]
        header += [f"{a}->{b}_pct" for a, b in self.pct_change]
        out = [header]
        for j, tau in enumerate(self.levels):
            row = [f"{tau:g}"]
            for i in range(len(self.labels)):
                row += [repr(float(self.point[i, j])), repr(float(self.lo[i, j])),
                        repr(float(self.hi[i, j]))]
            row += [repr(float(v[j])) for v in self.pct_change.values()]
            out.append(row)
        return out

    def write_csv(self, path):
        Path(path).write_text(
            "\n".join(",".join(r) for r in self.rows()) + "\n", encoding="utf-8"
        )


REPORT_LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def _resample(n, treatment, r, rng, max_retries=10):
    for _ in range(max_retries + 1):
        idx = rng.integers(0, n, size=n)
        if np.all(np.bincount(treatment[idx], minlength=r) > 0):
            return idx
    raise IngestError("bootstrap replicate kept missing a treatment; too few units per arm")


def bootstrap_ci(
    data: UnitData,
    kind: str = "dml",
    b_reps: int = 200,
    alpha: float = 0.05,
    seed: int = 0,
    levels=REPORT_LEVELS,
    pairs=None,
    **estimator_kwargs,
) -> QuantileReport:
    """Nonparametric bootstrap over units of the full cross-fitted estimator.

    The point estimate comes from the original sample; intervals are the
    ``alpha/2`` and ``1 - alpha/2`` percentiles of the replicate estimates,
    widened where needed so they always contain the point estimate.
    """
    if b_reps < 2:
        raise ValueError("b_reps must be >= 2")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    levels = tuple(float(t) for t in levels)
    est_seed = estimator_kwargs.pop("seed", seed)
    point_est = cross_fit(data, (kind,), seed=est_seed, **estimator_kwargs)[kind]
    point = np.stack([point_est.maps[l](levels) for l in data.labels])

    # resample indices are drawn up front so replicates can run in any order
    rng = np.random.default_rng(seed)
    draws = [_resample(len(data), data.treatment, data.n_treatments, rng) for _ in range(b_reps)]

    def replicate(b):
        est = cross_fit(data.subset(draws[b]), (kind,), seed=est_seed + b + 1,
                        n_jobs=1, **estimator_kwargs)[kind]
        return np.stack([est.maps[l](levels) for l in data.labels])

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with ThreadPoolExecutor(worker_count()) as pool:
            reps = np.stack(list(pool.map(replicate, range(b_reps))))
    lo = np.quantile(reps, alpha / 2, axis=0)
    hi = np.quantile(reps, 1 - alpha / 2, axis=0)
    widened = int(np.sum(point < lo) + np.sum(point > hi))
    lo, hi = np.minimum(lo, point), np.maximum(hi, point)

    if pairs is None:
        pairs = [(data.labels[0], lab) for lab in data.labels[1:]]
    pos = {lab: i for i, lab in enumerate(data.labels)}
    pct = {}
    for a, b in pairs:
        base = point[pos[a]]
        with np.errstate(divide="ignore", invalid="ignore"):
            pct[(a, b)] = 100.0 * (point[pos[b]] - base) / base
    return QuantileReport(data.labels, levels, point, lo, hi, b_reps, alpha, pct, widened)
