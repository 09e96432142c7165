"""Command-line interface.

Every subcommand writes ``manifest.json`` next to its outputs.  The manifest
records the fully resolved arguments, so ``distcause replay MANIFEST --out
DIR`` regenerates the same files.

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 numerical
failure.  Failures print one ``error: <category>: <reason>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baselines import SingularSystemError
from .estimators import KINDS, CausalMapEstimate, NoSupportError, cross_fit, effect
from .evaluation import (
    PROPENSITIES,
    REGRESSORS,
    make_propensity,
    make_regressor,
    run_trials,
    write_table_csv,
)
from .ingest import BinningRule, IngestError, bootstrap_ci, ingest, to_unit_data
from .nfr_net import TrainConfig
from .quantile_space import QuantileGrid
from .synthetic import DgpConfig, generate

log = logging.getLogger("distcause")

MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text, cast=str):
    return [cast(x.strip()) for x in text.split(",") if x.strip()]


# --- shared option groups ------------------------------------------------------


def _add_data_args(p):
    p.add_argument("--data", help="directory holding units.csv and observations.csv")
    p.add_argument("--units-csv", help="units file (unit_id, treatment, covariates...)")
    p.add_argument("--observations-csv", help="observations file (unit_id, value)")
    p.add_argument("--bin-on", help="numeric column binned into treatments")
    p.add_argument("--breaks", help="comma separated bin breakpoints, left-closed bins")
    p.add_argument("--labels", help="comma separated bin labels (one more than breaks)")
    p.add_argument("--min-obs", type=int, default=10)


def _add_estimator_args(p):
    p.add_argument("--estimator", choices=KINDS, default="dml")
    p.add_argument("--regressor", choices=REGRESSORS[:3], default="nfr")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=150, help="training epochs for neural regressors")


def _train_config(args):
    return TrainConfig(epochs=args.epochs)


def _load_units(args):
    units_csv, obs_csv = args.units_csv, args.observations_csv
    if args.data:
        units_csv = units_csv or str(Path(args.data) / "units.csv")
        obs_csv = obs_csv or str(Path(args.data) / "observations.csv")
    if not units_csv or not obs_csv:
        raise UsageError("give --data or both --units-csv and --observations-csv")
    rule = None
    if args.bin_on:
        if not args.breaks:
            raise UsageError("--bin-on needs --breaks")
        breaks = _csv_list(args.breaks, float)
        labels = _csv_list(args.labels) if args.labels else [f"bin{i}" for i in range(len(breaks) + 1)]
        try:
            rule = BinningRule(args.bin_on, breaks, labels)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    units = ingest(units_csv, obs_csv, rule, args.min_obs)
    grid = QuantileGrid.midpoints(args.grid)
    return to_unit_data(units, grid, rule.labels if rule else None)


def _fit_kwargs(args):
    return dict(
        k=args.folds,
        epsilon=args.epsilon,
        regressor=make_regressor(args.regressor, train=_train_config(args)),
        propensity=make_propensity("logistic"),
    )


# --- subcommands -----------------------------------------------------------------


def cmd_simulate(args, out: Path):
    config = DgpConfig(
        n_units=args.units, seed=args.seed, c=args.c, obs_per_unit=args.obs_per_unit
    )
    generate(config).export_csv(out)
    return ["units.csv", "observations.csv", "dgp_config.json"]


def cmd_fit(args, out: Path):
    data = _load_units(args)
    est = cross_fit(data, (args.estimator,), seed=args.seed, **_fit_kwargs(args))[args.estimator]
    est.write_json(out / "causal_maps.json")
    est.write_csv(out / "causal_maps.csv")
    return ["causal_maps.json", "causal_maps.csv"]


def cmd_effect(args, out: Path):
    doc = json.loads(Path(args.maps).read_text(encoding="utf-8"))
    est = CausalMapEstimate.from_json(doc)
    labels = est.labels
    if args.pairs:
        pairs = [tuple(p.split(":")) for p in _csv_list(args.pairs)]
        if any(len(p) != 2 for p in pairs):
            raise UsageError("--pairs expects a:b entries")
    else:
        pairs = [(a, b) for a in labels for b in labels if a != b]
    levels = _csv_list(args.levels, float)
    reports = []
    lines = ["treatment,baseline,tau,value"]
    for a, b in pairs:
        try:
            rep = effect(est, a, b, levels)
        except KeyError as exc:
            raise IngestError(str(exc)) from None
        reports.append(rep.to_json())
        for tau, v in zip(rep.curve.grid.levels, rep.curve.values):
            lines.append(f"{a},{b},{float(tau)!r},{float(v)!r}")
    (out / "effects.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "effects.json").write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")
    return ["effects.csv", "effects.json"]


def cmd_evaluate(args, out: Path):
    config = DgpConfig(n_units=args.units, c=args.c)
    grid = QuantileGrid.midpoints(args.grid)
    kinds = _csv_list(args.estimators)
    for kind in kinds:
        if kind not in KINDS:
            raise UsageError(f"unknown estimator {kind!r}")
    reports = []
    for reg in _csv_list(args.regressors):
        if reg not in REGRESSORS:
            raise UsageError(f"unknown regressor {reg!r}")
        res = run_trials(
            config, kinds, reg, args.propensity, trials=args.trials, seed=args.seed,
            grid=grid, k=args.folds, epsilon=args.epsilon, n_mc=args.n_mc,
            train=_train_config(args),
        )
        reports += [res[kind] for kind in kinds]
    reports.sort(key=lambda r: (KINDS.index(r.estimator), r.regressor))
    write_table_csv(reports, out / "mae_table.csv")
    (out / "reports.json").write_text(
        json.dumps([r.to_json() for r in reports], indent=2) + "\n", encoding="utf-8"
    )
    return ["mae_table.csv", "reports.json"]


def cmd_report(args, out: Path):
    data = _load_units(args)
    levels = _csv_list(args.levels, float)
    rep = bootstrap_ci(
        data, args.estimator, b_reps=args.bootstrap, alpha=args.alpha, seed=args.seed,
        levels=levels, **_fit_kwargs(args),
    )
    rep.write_csv(out / "report.csv")
    lines = ["treatment,tau,value,ci_lo,ci_hi"]
    for i, lab in enumerate(rep.labels):
        for j, tau in enumerate(rep.levels):
            lines.append(
                f"{lab},{tau!r},{float(rep.point[i, j])!r},"
                f"{float(rep.lo[i, j])!r},{float(rep.hi[i, j])!r}"
            )
    (out / "causal_maps.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ["report.csv", "causal_maps.csv"]


def cmd_plot_data(args, out: Path):
    lines = ["series,treatment,tau,value"]
    if args.maps:
        est = CausalMapEstimate.from_json(json.loads(Path(args.maps).read_text(encoding="utf-8")))
        for lab, tau, v in est.csv_rows():
            lines.append(f"causal_map,{lab},{tau!r},{v!r}")
    if args.data or args.units_csv:
        data = _load_units(args)
        rng = np.random.default_rng(args.seed)
        n_show = min(args.max_units, len(data))
        for i in np.sort(rng.choice(len(data), n_show, replace=False)):
            lab = data.labels[data.treatment[i]]
            for tau, v in zip(data.grid.levels, data.curves[i]):
                lines.append(f"unit{int(i)},{lab},{float(tau)!r},{float(v)!r}")
    if len(lines) == 1:
        raise UsageError("plot-data needs --maps and/or unit data")
    (out / "curves_long.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return ["curves_long.csv"]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "effect": cmd_effect,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "plot-data": cmd_plot_data,
}

_PATH_ARGS = ("data", "units_csv", "observations_csv", "maps")


def build_parser():
    parser = _Parser(prog="distcause", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset as CSV files")
    p.add_argument("--units", type=int, default=5000)
    p.add_argument("--obs-per-unit", type=int, default=100)
    p.add_argument("--c", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit", help="estimate causal maps from CSV data")
    _add_data_args(p)
    _add_estimator_args(p)

    p = sub.add_parser("effect", help="pairwise causal effect maps from causal_maps.json")
    p.add_argument("--maps", required=True)
    p.add_argument("--pairs", help="comma separated a:b pairs (default: all ordered pairs)")
    p.add_argument("--levels", default="0.1,0.3,0.5,0.7,0.9")

    p = sub.add_parser("evaluate", help="synthetic MAE benchmark against oracle maps")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--units", type=int, default=5000)
    p.add_argument("--c", type=float, default=0.2)
    p.add_argument("--estimators", default="dr,ipw,dml")
    p.add_argument("--regressors", default="nfr")
    p.add_argument("--regressor", dest="regressors", help=argparse.SUPPRESS)
    p.add_argument("--propensity", choices=PROPENSITIES, default="logistic")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--n-mc", type=int, default=1_000_000)

    p = sub.add_parser("report", help="quantile report with bootstrap confidence intervals")
    _add_data_args(p)
    _add_estimator_args(p)
    p.add_argument("--bootstrap", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--levels", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")

    p = sub.add_parser("plot-data", help="long-format curves for external plotting")
    p.add_argument("--maps")
    _add_data_args(p)
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--max-units", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")

    for name, sp in sub.choices.items():
        sp.add_argument("--out", required=True, help="output directory")
    return parser


def _versions():
    return {
        "distcause": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def _resolve_paths(args):
    for key in _PATH_ARGS:
        if getattr(args, key, None):
            setattr(args, key, str(Path(getattr(args, key)).resolve()))


def run_command(args) -> list:
    out = Path(args.out)
    if args.command == "replay":
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        if manifest.get("schema_version") != MANIFEST_VERSION:
            raise UsageError("unsupported manifest version")
        recorded = argparse.Namespace(**manifest["args"])
        recorded.out = args.out
        return run_command(recorded)
    _resolve_paths(args)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        files = COMMANDS[args.command](args, out)
    for w in {str(w.message) for w in caught}:
        log.warning("%s", w)
    recorded = {k: v for k, v in vars(args).items() if k not in ("out", "verbose")}
    manifest = {
        "schema_version": MANIFEST_VERSION,
        "command": args.command,
        "args": recorded,
        "seed": recorded.get("seed"),
        "outputs": files,
        "versions": _versions(),
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return files


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        run_command(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    except (IngestError, NoSupportError, FileNotFoundError) as exc:
        print(f"error: data: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except (SingularSystemError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"error: numerical: {' '.join(str(exc).split())}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: data: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
