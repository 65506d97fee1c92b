"""K-fold cross-validation for choosing the lasso penalty.

One fold assignment is shared by every penalty value and every metric, so
metrics are compared on identical fits.  Three metrics are available, all
oriented so that larger is better:

``deviance``
    Sum over folds of the validation fold's own partial log-likelihood at the
    coefficients fitted without that fold.
``within_fold_cindex``
    Mean over folds of the C-index of ``-beta'x`` computed inside each fold.
``baseline_adjusted_cindex``
    Expected survival times are predicted for every held-out observation
    from baselines estimated on the complementary folds; one C-index is then
    computed over all observations pooled, so pairs that straddle folds count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .baseline import breslow_cumhaz, predict_times
from .concordance import cindex_from_scores, cindex_linear_predictor
from .coxph import FitOptions, partial_log_likelihood
from .data import Dataset
from .lasso import fit_lasso_cox, lambda_path

__all__ = [
    "METRICS",
    "FoldAssignment",
    "CvResult",
    "UndersizedStrataError",
    "kfold_split",
    "heldout_partial_likelihood",
    "cv_within_fold_cindex",
    "cv_baseline_adjusted_cindex",
    "cv_evaluate",
    "cv_select_lambda",
    "select_index",
]

logger = logging.getLogger(__name__)

METRICS = ("deviance", "within_fold_cindex", "baseline_adjusted_cindex")


class UndersizedStrataError(ValueError):
    def __init__(self, strata, k_folds):
        self.strata = list(strata)
        super().__init__(f"strata with fewer than {k_folds} observations: {self.strata}")


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """Fold index (0-based) of every observation."""

    folds: np.ndarray
    k_folds: int
    seed: int

    def validation_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.folds == k)

    def training_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.folds != k)

    def sizes(self) -> list[int]:
        return np.bincount(self.folds, minlength=self.k_folds).tolist()


def kfold_split(dataset: Dataset, k_folds: int, seed: int) -> FoldAssignment:
    """Stratified random fold assignment.

    Observations are shuffled within each stratum and dealt round-robin, the
    dealer continuing across strata, which balances fold sizes both overall
    and within every stratum.
    """
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    small = [s for s in dataset.strata if np.count_nonzero(dataset.stratum == s) < k_folds]
    if small:
        raise UndersizedStrataError(small, k_folds)
    rng = np.random.Generator(np.random.PCG64(seed))
    order = np.concatenate([rng.permutation(np.flatnonzero(dataset.stratum == s)) for s in dataset.strata])
    folds = np.empty(dataset.n, dtype=np.int64)
    folds[order] = np.arange(dataset.n) % k_folds
    folds.setflags(write=False)
    return FoldAssignment(folds, int(k_folds), int(seed))


def heldout_partial_likelihood(train_beta, validation: Dataset) -> float:
    """Validation-fold partial log-likelihood; 0 when the fold has no events."""
    return partial_log_likelihood(validation, train_beta)


def cv_within_fold_cindex(fold_betas, folds) -> float | None:
    values = []
    for beta, fold in zip(fold_betas, folds, strict=True):
        rep = cindex_linear_predictor(beta, fold)
        if rep.defined:
            values.append(rep.index)
    return float(np.mean(values)) if values else None


def _split(dataset, assignment):
    return [
        (dataset.subset(assignment.training_index(k)), assignment.validation_index(k),
         dataset.subset(assignment.validation_index(k)))
        for k in range(assignment.k_folds)
    ]


def _pooled_predictions(n, splits, fold_betas):
    """Expected survival for each observation from its out-of-fold fit.

    Returns predictions (NaN where the training folds hold no event for the
    observation's stratum) and the count of such exclusions.
    """
    pred = np.full(n, np.nan)
    for (train, val_idx, val), beta in zip(splits, fold_betas):
        if beta is None:
            continue
        baselines = breslow_cumhaz(train, beta)
        pred[val_idx] = predict_times(beta, baselines, val, policy="drop")
    return pred, int(np.count_nonzero(np.isnan(pred)))


def _pooled_cindex(dataset, pred) -> float | None:
    keep = ~np.isnan(pred)
    if keep.sum() < 2:
        return None
    return cindex_from_scores(pred[keep], dataset.time[keep], dataset.event[keep]).index


def cv_baseline_adjusted_cindex(
    dataset: Dataset,
    assignment: FoldAssignment,
    lam: float,
    options: FitOptions | None = None,
) -> float | None:
    splits = _split(dataset, assignment)
    fold_betas = [fit_lasso_cox(train, lam, None, options).beta for train, _, _ in splits]
    pred, _ = _pooled_predictions(dataset.n, splits, fold_betas)
    return _pooled_cindex(dataset, pred)


@dataclass(frozen=True)
class CvResult:
    lambdas: list[float]
    metric: str
    scores: list[float | None]
    selected_lambda: float | None
    selected_index: int | None
    seed: int
    k_folds: int
    fold_diagnostics: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "lambdas": self.lambdas,
            "scores": self.scores,
            "selected_lambda": self.selected_lambda,
            "selected_index": self.selected_index,
            "seed": self.seed,
            "k_folds": self.k_folds,
            "fold_diagnostics": self.fold_diagnostics,
        }


def select_index(lambdas, scores) -> int | None:
    """Argmax of the defined scores; ties go to the larger penalty."""
    best = None
    for i, (lam, s) in enumerate(zip(lambdas, scores)):
        if s is None or not np.isfinite(s):
            continue
        if best is None or s > scores[best] or (s == scores[best] and lam > lambdas[best]):
            best = i
    return best


def cv_evaluate(
    dataset: Dataset,
    assignment: FoldAssignment,
    lambdas,
    metrics=METRICS,
    options: FitOptions | None = None,
) -> dict[str, CvResult]:
    """Score every penalty under each requested metric from one set of fits.

    Within a fold the penalties are visited in decreasing order with warm
    starts; results are reported in the caller's order.
    """
    lambdas = [float(v) for v in lambdas]
    if not lambdas or min(lambdas) < 0:
        raise ValueError("lambdas must be a nonempty list of nonnegative values")
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metric(s) {sorted(unknown)}; choose from {METRICS}")
    L, K = len(lambdas), assignment.k_folds
    path_order = sorted(range(L), key=lambda i: -lambdas[i])

    betas: list[list[np.ndarray | None]] = [[None] * K for _ in range(L)]
    diagnostics: list[list[dict]] = [[{} for _ in range(K)] for _ in range(L)]
    splits = _split(dataset, assignment)
    for k, (train, _, val) in enumerate(splits):
        try:
            path = lambda_path(train, lambdas=[lambdas[i] for i in path_order], options=options)
        except ValueError as exc:
            logger.warning("fold %d failed: %s", k, exc)
            for i in range(L):
                diagnostics[i][k] = {"fold": k, "failed": str(exc)}
            continue
        for i, fit in zip(path_order, path.fits):
            betas[i][k] = fit.beta
            diagnostics[i][k] = {
                "fold": k,
                "converged": fit.converged,
                "n_iterations": fit.n_iterations,
                "kkt_violation": fit.kkt_violation,
                "n_active": len(fit.active_set),
                "validation_size": val.n,
                "validation_events": val.n_events,
            }

    results = {}
    for metric in metrics:
        scores: list[float | None] = []
        diag_out = []
        for i in range(L):
            ok = [k for k in range(K) if betas[i][k] is not None]
            diag = [dict(d) for d in diagnostics[i]]
            entry = {"lambda": lambdas[i], "folds": diag}
            if not ok:
                scores.append(None)
            elif metric == "deviance":
                total = 0.0
                for k in ok:
                    val = splits[k][2]
                    if val.n_events == 0:
                        diag[k]["no_validation_events"] = True
                    total += heldout_partial_likelihood(betas[i][k], val)
                scores.append(total)
            elif metric == "within_fold_cindex":
                scores.append(cv_within_fold_cindex(
                    [betas[i][k] for k in ok],
                    [splits[k][2] for k in ok],
                ))
            else:
                pred, excluded = _pooled_predictions(dataset.n, splits, betas[i])
                entry["excluded_predictions"] = excluded
                scores.append(_pooled_cindex(dataset, pred))
            diag_out.append(entry)
        best = select_index(lambdas, scores)
        results[metric] = CvResult(
            lambdas=lambdas,
            metric=metric,
            scores=scores,
            selected_lambda=None if best is None else lambdas[best],
            selected_index=best,
            seed=assignment.seed,
            k_folds=K,
            fold_diagnostics=diag_out,
        )
    return results


def cv_select_lambda(
    dataset: Dataset,
    k_folds: int,
    lambdas,
    metric: str = "baseline_adjusted_cindex",
    seed: int = 0,
    options: FitOptions | None = None,
) -> CvResult:
    assignment = kfold_split(dataset, k_folds, seed)
    return cv_evaluate(dataset, assignment, lambdas, (metric,), options)[metric]
