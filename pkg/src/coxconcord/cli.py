"""Command-line interface: ``coxconcord {fit,predict,evaluate,cv,experiment}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baseline import BaselineSet, breslow_cumhaz, predict_times
from .concordance import cindex_from_baselines, cindex_linear_predictor, cindex_within_strata
from .coxph import FitOptions, fit_cox
from .cv import METRICS, cv_evaluate, kfold_split
from .data import Dataset, DataValidationError, read_csv
from .lasso import fit_lasso_cox, lambda_max
from .simulation import load_config, run_experiment

FORMAT_VERSION = 1
THREADS_ENV = "COXCONCORD_THREADS"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 3

logger = logging.getLogger("coxconcord")


class CliError(Exception):
    pass


def _fingerprint(covariates, strata_col) -> str:
    payload = json.dumps({"covariates": list(covariates), "strata_column": strata_col}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _dump_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _standardize(ds: Dataset):
    center = ds.X.mean(axis=0)
    scale = ds.X.std(axis=0)
    scale[scale == 0] = 1.0
    return Dataset.from_arrays((ds.X - center) / scale, ds.time, ds.event, ds.stratum, ds.covariate_names), center, scale


def _fit_options(args) -> FitOptions:
    return FitOptions(max_iterations=args.max_iter, gradient_tolerance=args.tol)


def _strata_col(args) -> str | None:
    return None if args.strata_col in ("", "none") else args.strata_col


def _read(path, args, outcome=True) -> Dataset:
    return read_csv(path, strata_col=_strata_col(args), outcome=outcome)


def _load_model(path) -> dict:
    model = json.loads(Path(path).read_text(encoding="utf-8"))
    if model.get("format_version") != FORMAT_VERSION:
        raise CliError(f"{path}: unsupported model format_version {model.get('format_version')!r}")
    return model


def _read_for_model(path, model, outcome=True) -> Dataset:
    ds = read_csv(path, strata_col=model["strata_column"], outcome=outcome)
    if list(ds.covariate_names) != model["covariates"]:
        raise CliError(
            f"schema mismatch: model covariates {model['covariates']} but {path} has {list(ds.covariate_names)}"
        )
    return ds


# -- subcommands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    ds = _read(args.csv, args)
    work, center, scale = _standardize(ds) if args.standardize else (ds, np.zeros(ds.d), np.ones(ds.d))
    options = _fit_options(args)
    if args.penalty is None:
        fit = fit_cox(work, options)
        beta_work = fit.beta
        diagnostics = {
            "method": "newton",
            "converged": fit.converged,
            "n_iterations": fit.n_iterations,
            "log_partial_likelihood": fit.log_partial_likelihood,
            "final_gradient_norm": fit.final_gradient_norm,
            "message": fit.message,
        }
        converged = fit.converged
    else:
        fit = fit_lasso_cox(work, args.penalty, None, options)
        beta_work = fit.beta
        diagnostics = {
            "method": "lasso",
            "converged": fit.converged,
            "n_iterations": fit.n_iterations,
            "penalized_objective": fit.objective,
            "kkt_violation": fit.kkt_violation,
            "active_set": list(fit.active_set),
            "lambda_max": lambda_max(work),
        }
        converged = fit.converged
    beta = beta_work / scale
    baselines = breslow_cumhaz(ds, beta)
    strata_col = _strata_col(args)
    model = {
        "format_version": FORMAT_VERSION,
        "covariates": list(ds.covariate_names),
        "strata_column": strata_col,
        "schema_fingerprint": _fingerprint(ds.covariate_names, strata_col),
        "beta": beta.tolist(),
        "penalty": args.penalty,
        "standardized": bool(args.standardize),
        "center": center.tolist(),
        "scale": scale.tolist(),
        "n": ds.n,
        "n_events": ds.n_events,
        "baselines": baselines.to_dict(),
        "diagnostics": diagnostics,
    }
    _dump_json(model, args.out)
    if not converged:
        print(f"error: fit did not converge: {json.dumps(diagnostics)}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    ds = _read_for_model(args.csv, model, outcome=False)
    beta = np.array(model["beta"])
    baselines = BaselineSet.from_dict(model["baselines"])
    pred = predict_times(beta, baselines, ds, policy=args.unseen)
    lp = ds.X @ beta
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["id", "stratum", "linear_predictor", "expected_time"])
        for i in range(ds.n):
            w.writerow([i + 1, int(ds.stratum[i]), repr(float(lp[i])),
                        "" if np.isnan(pred[i]) else repr(float(pred[i]))])
    finally:
        if out is not sys.stdout:
            out.close()
    dropped = int(np.isnan(pred).sum())
    if dropped:
        print(f"warning: {dropped} row(s) in strata without a baseline were dropped", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_model(args.model)
    ds = _read_for_model(args.csv, model)
    beta = np.array(model["beta"])
    metric = args.metric.replace("_", "-")
    if metric == "cindex":
        report = cindex_linear_predictor(beta, ds).to_dict()
    elif metric == "within-strata":
        report = cindex_within_strata(beta, ds).to_dict()
    else:
        report = cindex_from_baselines(beta, BaselineSet.from_dict(model["baselines"]), ds).to_dict()
    report = {"metric": metric, **report}
    _dump_json(report, args.out)
    return EXIT_OK


def cmd_cv(args) -> int:
    ds = _read(args.csv, args)
    work = _standardize(ds)[0] if args.standardize else ds
    metric = args.metric.replace("-", "_")
    lam_max = lambda_max(work)
    grid = lam_max * np.geomspace(1.0, args.min_ratio, args.n_lambda)
    assignment = kfold_split(work, args.folds, args.seed)
    result = cv_evaluate(work, assignment, grid, (metric,), _fit_options(args))[metric]
    out = result.to_dict()
    out.update({
        "format_version": FORMAT_VERSION,
        "lambda_max": lam_max,
        "standardized": bool(args.standardize),
        "fold_sizes": assignment.sizes(),
    })
    _dump_json(out, args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = load_config(args.config)
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_experiment(config, args.replications, threads=max(1, threads))
    result.write_csv(out_dir / "results.csv")
    result.write_summary(out_dir / "summary.json")
    if result.failures:
        print(f"warning: {len(result.failures)} replication(s) reported failures", file=sys.stderr)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def _add_fit_flags(p):
    p.add_argument("--max-iter", type=int, default=100, help="maximum outer iterations (default 100)")
    p.add_argument("--tol", type=float, default=1e-8, help="gradient-norm tolerance for Newton fits (default 1e-8)")


def _add_data_flags(p):
    p.add_argument("--strata-col", default="stratum",
                   help="column holding stratum labels; 'none' for a single stratum (default: stratum)")
    p.add_argument("--standardize", action="store_true",
                   help="center and scale covariates before fitting; coefficients are reported on the original scale")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coxconcord", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a (stratified, optionally L1-penalized) Cox model")
    p.add_argument("csv", help="training CSV (time, event, [stratum], covariates...)")
    p.add_argument("-o", "--out", help="model JSON path (default: stdout)")
    p.add_argument("--penalty", type=float, default=None, metavar="LAMBDA",
                   help="L1 penalty; omit for an unpenalized Newton fit")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="expected survival times from a fitted model")
    p.add_argument("model", help="model JSON written by 'fit'")
    p.add_argument("csv", help="CSV with the model's covariate columns")
    p.add_argument("-o", "--out", help="predictions CSV path (default: stdout)")
    p.add_argument("--unseen", choices=("fail", "drop"), default="fail",
                   help="rows in strata without a baseline: fail (default) or drop")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="C-index of a fitted model on a dataset")
    p.add_argument("model", help="model JSON written by 'fit'")
    p.add_argument("csv", help="evaluation CSV")
    p.add_argument("--metric", choices=("cindex", "within-strata", "baseline-adjusted"), default="baseline-adjusted",
                   help="cindex: -beta'x over all pairs; within-strata: stratum-averaged; "
                        "baseline-adjusted: expected survival times over all pairs (default)")
    p.add_argument("-o", "--out", help="report JSON path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv", help="cross-validated choice of the L1 penalty")
    p.add_argument("csv", help="training CSV")
    p.add_argument("--folds", type=int, default=5, help="number of folds (default 5)")
    p.add_argument("--metric", default="baseline-adjusted-cindex",
                   choices=[m.replace("_", "-") for m in METRICS], help="selection metric")
    p.add_argument("--n-lambda", type=int, default=50, help="grid size (default 50)")
    p.add_argument("--min-ratio", type=float, default=0.05, help="smallest lambda as a fraction of lambda_max (default 0.05)")
    p.add_argument("--seed", type=int, default=0, help="fold assignment seed (default 0)")
    p.add_argument("-o", "--out", help="result JSON path (default: stdout)")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("experiment", help="run a simulation experiment from a config file")
    p.add_argument("config", help="INI experiment config")
    p.add_argument("--replications", type=int, default=None, help="override the config's replication count")
    p.add_argument("--threads", type=int, default=None,
                   help=f"parallel worker processes (default: ${THREADS_ENV} or 1)")
    p.add_argument("--out-dir", default=".", help="directory for results.csv and summary.json")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataValidationError, CliError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
