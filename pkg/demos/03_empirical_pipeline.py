"""
From CSV files to a quantile report
===================================

Real data arrives as two files: one row per unit (identifier, treatment or a
numeric column to bin into treatments, covariates) and one row per observed
value.  This demo writes such files from the synthetic generator, bins a
numeric column into three treatment levels and produces a report with
bootstrap confidence intervals.
"""

import tempfile
import warnings
from pathlib import Path

import numpy as np

from distcause import DgpConfig, QuantileGrid, generate
from distcause.baselines import RidgeRegressor
from distcause.ingest import BinningRule, bootstrap_ci, ingest, to_unit_data

workdir = Path(tempfile.mkdtemp())
data = generate(DgpConfig(n_units=600, obs_per_unit=80, seed=3))

# a units file whose treatment is a numeric "dose" column instead of a label
dose = np.asarray(data.config.treatment_values)[data.treatment] * 1000.0
rows = ["unit_id,dose," + ",".join(f"x{j + 1}" for j in range(data.covariates.shape[1]))]
for i, x in enumerate(data.covariates):
    rows.append(f"u{i},{float(dose[i])!r}," + ",".join(repr(float(v)) for v in x))
(workdir / "units.csv").write_text("\n".join(rows) + "\n")
data.export_csv(workdir / "raw")

# bins are left closed: [0, 2500) is Low, [2500, 4500) Middle, the rest High
rule = BinningRule("dose", [2500, 4500], ["Low", "Middle", "High"])
units = ingest(workdir / "units.csv", workdir / "raw" / "observations.csv", rule)
unit_data = to_unit_data(units, QuantileGrid.midpoints(100), rule.labels)
print("units per bin:", dict(zip(rule.labels, np.bincount(unit_data.treatment).tolist())))

with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    report = bootstrap_ci(unit_data, "dml", b_reps=30, seed=0, regressor=RidgeRegressor())

report.write_csv(workdir / "report.csv")
print((workdir / "report.csv").read_text())
print("files written to", workdir)
