"""Synthetic survival data and the two replication experiments.

Times follow a Cox model with constant per-stratum baseline hazard, drawn
by inverse transform.  The *stratified* experiment fits an unpenalized Cox
model on a training split and compares three test-set C-indices; the *cv*
experiment selects the lasso penalty by cross-validation under each metric
and records the squared error of the refitted coefficients.

Every replication draws from its own generator seeded by ``(seed,
replication)``, so serial and parallel runs produce identical numbers.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from .concordance import cindex_baseline_adjusted, cindex_linear_predictor, cindex_within_strata
from .coxph import FitOptions, fit_cox
from .cv import METRICS, cv_evaluate, kfold_split
from .data import Dataset
from .lasso import lambda_max, lambda_path

__all__ = [
    "SCENARIOS",
    "SimConfig",
    "ExperimentResult",
    "gen_covariates",
    "gen_survival",
    "apply_censoring",
    "simulate",
    "stratified_train_test_split",
    "run_stratified_experiment",
    "run_cv_experiment",
    "run_experiment",
    "load_config",
    "config_to_ini",
    "ETA_CAP",
]

logger = logging.getLogger(__name__)

#: Linear predictors are clipped to +-ETA_CAP before exponentiation.
ETA_CAP = 30.0

SCENARIOS = {
    "iid_correct": ("iid", False),
    "ar1_correct": ("ar1", False),
    "iid_misspecified": ("iid", True),
    "ar1_misspecified": ("ar1", True),
}

STRATIFIED_METRICS = ("within_stratum", "linear_predictor", "baseline_adjusted")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SimConfig:
    """Declarative description of one experiment.

    ``beta_true`` left empty means "derive from ``kind`` and ``signal``":
    the stratified design alternates +-0.5 (low signal: a single 0.25),
    the cv design puts (1, -1, 1) on the first three coordinates.
    ``baseline_hazards`` left empty means log-spaced between
    ``baseline_min`` and ``baseline_max`` across strata.
    """

    kind: str = "stratified"
    n: int = 1000
    d: int = 10
    beta_true: tuple[float, ...] = ()
    signal: str = "regular"
    covariate_design: str = "iid"
    rho: float = 0.5
    n_strata: int = 10
    baseline_hazards: tuple[float, ...] = ()
    baseline_min: float = 0.5
    baseline_max: float = 2.0
    censoring_rate: float | None = None
    interaction: tuple[int, int, float] | None = None
    train_fraction: float = 0.7
    scenario: str = "iid_correct"
    k_folds: int = 5
    n_lambda: int = 50
    min_ratio: float = 0.05
    replications: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("stratified", "cv"):
            raise ValueError(f"kind must be 'stratified' or 'cv', got {self.kind!r}")
        if self.n < 2 or self.d < 1:
            raise ValueError("need n >= 2 and d >= 1")
        if self.signal not in ("regular", "low"):
            raise ValueError(f"signal must be 'regular' or 'low', got {self.signal!r}")
        if self.covariate_design not in ("iid", "ar1"):
            raise ValueError(f"covariate_design must be 'iid' or 'ar1', got {self.covariate_design!r}")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.n_strata < 1:
            raise ValueError("n_strata must be positive")
        if self.beta_true and len(self.beta_true) != self.d:
            raise ValueError(f"beta_true has {len(self.beta_true)} entries, d={self.d}")
        if self.baseline_hazards:
            if len(self.baseline_hazards) != self.n_strata:
                raise ValueError("one baseline hazard per stratum required")
            if min(self.baseline_hazards) <= 0:
                raise ValueError("baseline hazards must be positive")
        elif not 0 < self.baseline_min <= self.baseline_max:
            raise ValueError("need 0 < baseline_min <= baseline_max")
        if self.censoring_rate is not None and self.censoring_rate <= 0:
            raise ValueError("censoring_rate must be positive (or omitted for none)")
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {sorted(SCENARIOS)}, got {self.scenario!r}")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be positive")

    def true_beta(self) -> np.ndarray:
        if self.beta_true:
            return np.array(self.beta_true, dtype=float)
        beta = np.zeros(self.d)
        if self.kind == "stratified":
            if self.signal == "low":
                beta[0] = 0.25
            else:
                beta[:] = 0.5 * (-1.0) ** np.arange(self.d)
        else:
            lead = np.array([1.0, -1.0, 1.0])[: self.d]
            beta[: lead.size] = lead
        return beta

    def hazards(self) -> np.ndarray:
        if self.baseline_hazards:
            return np.array(self.baseline_hazards, dtype=float)
        return np.geomspace(self.baseline_min, self.baseline_max, self.n_strata)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["beta_true"] = self.true_beta().tolist()
        out["baseline_hazards"] = self.hazards().tolist()
        return out


def gen_covariates(n: int, d: int, design: str = "iid", seed=0, rho: float = 0.0) -> np.ndarray:
    """Standard normal covariates, independent or AR(1) across coordinates.

    For ``ar1`` each row is a stationary AR(1) sequence with unit marginal
    variance: ``x[j+1] = rho * x[j] + sqrt(1 - rho^2) * e[j]``.
    """
    rng = _rng(seed)
    if design == "iid":
        return rng.standard_normal((n, d))
    if design != "ar1":
        raise ValueError(f"unknown design {design!r}")
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    eps = rng.standard_normal((n, d))
    X = np.empty((n, d))
    X[:, 0] = eps[:, 0]
    innov = math.sqrt(1.0 - rho * rho)
    for j in range(1, d):
        X[:, j] = rho * X[:, j - 1] + innov * eps[:, j]
    return X


def linear_predictor(covariates, beta_true, interaction=None) -> np.ndarray:
    X = np.asarray(covariates, dtype=float)
    eta = X @ np.asarray(beta_true, dtype=float)
    if interaction is not None:
        j, l, gamma = interaction
        eta = eta + gamma * X[:, int(j)] * X[:, int(l)]
    return eta


def gen_survival(covariates, strata_labels, beta_true, baselines, interaction=None, seed=0):
    """Exact Cox-model event times under constant baseline hazards.

    ``baselines[k - 1]`` is the hazard of stratum label ``k``.  Returns
    ``(times, events)`` with every event observed.
    """
    rng = _rng(seed)
    X = np.asarray(covariates, dtype=float)
    labels = np.asarray(strata_labels, dtype=np.int64)
    h0 = np.asarray(baselines, dtype=float)
    if np.any(h0 <= 0):
        raise ValueError("baseline hazards must be positive")
    if labels.shape[0] != X.shape[0]:
        raise ValueError("one stratum label per row required")
    if labels.min() < 1 or labels.max() > h0.shape[0]:
        raise ValueError("stratum label without a baseline hazard")
    eta = np.clip(linear_predictor(X, beta_true, interaction), -ETA_CAP, ETA_CAP)
    u = 1.0 - rng.random(X.shape[0])  # uniform on (0, 1]
    times = -np.log(u) / (h0[labels - 1] * np.exp(eta))
    times = np.maximum(times, np.finfo(float).tiny)
    return times, np.ones(X.shape[0], dtype=np.int8)


def apply_censoring(times, rate: float | None = None, seed=0):
    """Independent exponential censoring; ``rate=None`` censors nothing."""
    times = np.asarray(times, dtype=float)
    if rate is None:
        return times.copy(), np.ones(times.shape[0], dtype=np.int8)
    if rate <= 0:
        raise ValueError("censoring rate must be positive")
    cens = _rng(seed).exponential(1.0 / rate, times.shape[0])
    observed = np.minimum(times, cens)
    observed = np.maximum(observed, np.finfo(float).tiny)
    return observed, (times <= cens).astype(np.int8)


def simulate(config: SimConfig, seed) -> tuple[Dataset, np.ndarray]:
    """One dataset drawn under ``config``; returns it with the true beta."""
    rng = _rng(seed)
    if config.kind == "cv":
        design, misspecified = SCENARIOS[config.scenario]
        n_strata = 1
        hazards = config.hazards()[:1]
        interaction = (config.interaction or (0, 1, 1.0)) if misspecified else None
    else:
        design = config.covariate_design
        n_strata = config.n_strata
        hazards = config.hazards()
        interaction = config.interaction
    beta = config.true_beta()
    X = gen_covariates(config.n, config.d, design, rng, config.rho)
    strata = rng.integers(1, n_strata + 1, config.n)
    times, _ = gen_survival(X, strata, beta, hazards, interaction, rng)
    times, events = apply_censoring(times, config.censoring_rate, rng)
    return Dataset.from_arrays(X, times, events, strata), beta


def stratified_train_test_split(dataset: Dataset, train_fraction: float, seed):
    """Split each stratum separately so every stratum lands in both parts."""
    rng = _rng(seed)
    train_idx = []
    for s in dataset.strata:
        members = rng.permutation(np.flatnonzero(dataset.stratum == s))
        if members.size < 2:
            raise ValueError(f"stratum {s} has fewer than 2 observations")
        cut = min(max(int(round(train_fraction * members.size)), 1), members.size - 1)
        train_idx.append(members[:cut])
    train_mask = np.zeros(dataset.n, dtype=bool)
    train_mask[np.concatenate(train_idx)] = True
    return dataset.subset(train_mask), dataset.subset(~train_mask)


@dataclass
class ExperimentResult:
    kind: str
    label: str
    config: SimConfig
    n_replications: int
    records: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def values(self, metric: str) -> np.ndarray:
        return np.array([r["value"] for r in self.records if r["metric"] == metric])

    @property
    def metrics(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r["metric"], None)
        return list(seen)

    def summary(self) -> dict:
        out = {}
        for m in self.metrics:
            v = self.values(m)
            v = v[np.isfinite(v)]
            if v.size == 0:
                out[m] = {"n": 0}
                continue
            q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
            out[m] = {
                "n": int(v.size),
                "mean": float(v.mean()),
                "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                "min": float(v.min()),
                "q1": float(q1),
                "median": float(med),
                "q3": float(q3),
                "max": float(v.max()),
            }
        return {
            "format_version": 1,
            "kind": self.kind,
            "label": self.label,
            "replications": self.n_replications,
            "failures": self.failures,
            "config": self.config.to_dict(),
            "metrics": out,
        }

    def write_csv(self, path) -> None:
        columns = ["experiment", "label", "replication", "metric", "value", "selected_lambda"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in self.records:
                lam = r.get("selected_lambda")
                w.writerow([
                    self.kind, self.label, r["replication"], r["metric"],
                    repr(float(r["value"])), "" if lam is None else repr(float(lam)),
                ])

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _stratified_replication(config: SimConfig, rep: int) -> dict:
    rng = np.random.Generator(np.random.PCG64([config.seed, rep]))
    data, _ = simulate(config, rng)
    train, test = stratified_train_test_split(data, config.train_fraction, rng)
    fit = fit_cox(train)
    return {
        "within_stratum": cindex_within_strata(fit.beta, test).index,
        "linear_predictor": cindex_linear_predictor(fit.beta, test).index,
        "baseline_adjusted": cindex_baseline_adjusted(train, test, fit.beta).index,
        "_converged": fit.converged,
    }


def _cv_replication(config: SimConfig, rep: int) -> dict:
    rng = np.random.Generator(np.random.PCG64([config.seed, rep]))
    data, beta_true = simulate(config, rng)
    options = FitOptions()
    grid = lambda_max(data) * np.geomspace(1.0, config.min_ratio, config.n_lambda)
    assignment = kfold_split(data, config.k_folds, int(rng.integers(2**31)))
    results = cv_evaluate(data, assignment, grid, METRICS, options)
    path = lambda_path(data, lambdas=grid, options=options)
    errors = np.array([float(np.sum((f.beta - beta_true) ** 2)) for f in path.fits])
    out = {}
    for metric, res in results.items():
        i = res.selected_index
        out[metric] = (np.nan, None) if i is None else (errors[i], float(grid[i]))
    best = int(np.argmin(errors))
    out["grid_best"] = (errors[best], float(grid[best]))
    out["null_model"] = (errors[0], float(grid[0]))
    return out


def _run(worker, config: SimConfig, n_replications: int, threads: int):
    reps = range(n_replications)
    if threads <= 1:
        return [_guarded(worker, config, r) for r in reps]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_guarded, [worker] * n_replications, [config] * n_replications, reps))


def _guarded(worker, config, rep):
    try:
        return worker(config, rep)
    except Exception as exc:  # recorded per replication, never fatal
        return {"_error": f"{type(exc).__name__}: {exc}"}


def run_stratified_experiment(config: SimConfig, n_replications: int | None = None, threads: int = 1) -> ExperimentResult:
    config = replace(config, kind="stratified")
    n_rep = n_replications or config.replications
    label = f"{config.signal}_signal"
    result = ExperimentResult("stratified", label, config, n_rep)
    for rep, out in enumerate(_run(_stratified_replication, config, n_rep, threads)):
        if "_error" in out:
            result.failures.append({"replication": rep, "error": out["_error"]})
            continue
        if not out["_converged"]:
            result.failures.append({"replication": rep, "error": "Cox fit did not converge"})
        for m in STRATIFIED_METRICS:
            v = out[m]
            result.records.append({"replication": rep, "metric": m, "value": np.nan if v is None else v})
    return result


def run_cv_experiment(
    config: SimConfig,
    n_replications: int | None = None,
    scenario: str | None = None,
    threads: int = 1,
) -> ExperimentResult:
    config = replace(config, kind="cv", scenario=scenario or config.scenario)
    n_rep = n_replications or config.replications
    result = ExperimentResult("cv", config.scenario, config, n_rep)
    for rep, out in enumerate(_run(_cv_replication, config, n_rep, threads)):
        if "_error" in out:
            result.failures.append({"replication": rep, "error": out["_error"]})
            continue
        for metric, (mse, lam) in out.items():
            result.records.append({"replication": rep, "metric": metric, "value": mse, "selected_lambda": lam})
    return result


def run_experiment(config: SimConfig, n_replications: int | None = None, threads: int = 1) -> ExperimentResult:
    if config.kind == "stratified":
        return run_stratified_experiment(config, n_replications, threads)
    return run_cv_experiment(config, n_replications, threads=threads)


# -- config files -------------------------------------------------------------

_SECTION = "experiment"


def _parse_value(name: str, raw: str, kind) -> Any:
    raw = raw.strip()
    if name in ("beta_true", "baseline_hazards"):
        return tuple(float(v) for v in raw.replace(",", " ").split()) if raw else ()
    if name == "interaction":
        if raw.lower() in ("", "none"):
            return None
        j, l, g = raw.replace(",", " ").split()
        return (int(j), int(l), float(g))
    if name == "censoring_rate":
        return None if raw.lower() in ("", "none") else float(raw)
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw


def load_config(path) -> SimConfig:
    """Read an experiment config (INI, single ``[experiment]`` section)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section(_SECTION):
        raise ValueError(f"{path}: missing [{_SECTION}] section")
    known = {f.name: f.type for f in fields(SimConfig)}
    kwargs = {}
    for name, raw in parser.items(_SECTION):
        if name not in known:
            raise ValueError(f"{path}: unknown key {name!r}")
        kind = {"n": int, "d": int, "n_strata": int, "k_folds": int, "n_lambda": int,
                "replications": int, "seed": int, "rho": float, "baseline_min": float,
                "baseline_max": float, "train_fraction": float, "min_ratio": float}.get(name, str)
        try:
            kwargs[name] = _parse_value(name, raw, kind)
        except ValueError as exc:
            raise ValueError(f"{path}: bad value for {name!r}: {exc}") from None
    return SimConfig(**kwargs)


def config_to_ini(config: SimConfig) -> str:
    lines = [f"[{_SECTION}]"]
    for f in fields(SimConfig):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v) if f.name != "interaction" else " ".join(str(x) for x in v)
        elif v is None:
            v = "none"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
