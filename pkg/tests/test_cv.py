import math

import numpy as np
import pytest

import oracles
from conftest import random_dataset
from coxconcord.baseline import breslow_cumhaz, predict_times
from coxconcord.concordance import cindex_baseline_adjusted, cindex_from_scores
from coxconcord.coxph import partial_log_likelihood
from coxconcord.cv import (
    METRICS,
    FoldAssignment,
    UndersizedStrataError,
    cv_baseline_adjusted_cindex,
    cv_evaluate,
    cv_select_lambda,
    cv_within_fold_cindex,
    heldout_partial_likelihood,
    kfold_split,
    select_index,
)
from coxconcord.data import Dataset
from coxconcord.lasso import fit_lasso_cox, kkt_tolerance, lambda_max


def test_kfold_exact_division():
    ds = Dataset.from_arrays(np.zeros((10, 1)), np.arange(1, 11.0), np.ones(10))
    a = kfold_split(ds, 5, seed=1)
    assert a.sizes() == [2] * 5


def test_kfold_remainder():
    ds = Dataset.from_arrays(np.zeros((11, 1)), np.arange(1, 12.0), np.ones(11))
    assert sorted(kfold_split(ds, 5, seed=1).sizes(), reverse=True) == [3, 2, 2, 2, 2]


def test_kfold_deterministic_and_seed_sensitive(rng):
    ds = random_dataset(rng, n=50, n_strata=3)
    a, b = kfold_split(ds, 5, 7), kfold_split(ds, 5, 7)
    assert np.array_equal(a.folds, b.folds)
    assert not np.array_equal(a.folds, kfold_split(ds, 5, 8).folds)


@pytest.mark.parametrize("seed", range(5))
def test_kfold_balanced_overall_and_within_strata(seed):
    g = np.random.default_rng(seed)
    ds = random_dataset(g, n=int(g.integers(30, 90)), n_strata=4)
    k = int(g.integers(2, 6))
    a = kfold_split(ds, k, seed)
    sizes = np.bincount(a.folds, minlength=k)
    assert sizes.max() - sizes.min() <= 1
    for s in ds.strata:
        per = np.bincount(a.folds[ds.stratum == s], minlength=k)
        assert per.max() - per.min() <= 1
    assert np.array_equal(np.sort(np.r_[a.training_index(0), a.validation_index(0)]), np.arange(ds.n))


def test_kfold_rejects_small_strata():
    ds = Dataset.from_arrays(np.zeros((7, 1)), np.arange(1, 8.0), np.ones(7), [1, 1, 1, 1, 1, 2, 2])
    with pytest.raises(UndersizedStrataError) as info:
        kfold_split(ds, 3, 0)
    assert info.value.strata == [2]
    with pytest.raises(ValueError):
        kfold_split(ds, 1, 0)


def test_heldout_partial_likelihood_zero_beta():
    val = Dataset.from_arrays(np.ones((3, 2)), [1, 2, 3], [1, 1, 1])
    expected = -(math.log(3) + math.log(2) + math.log(1))
    assert heldout_partial_likelihood([0.0, 0.0], val) == pytest.approx(expected, rel=1e-15)
    assert heldout_partial_likelihood([0.0, 0.0], Dataset.from_arrays(np.ones((2, 2)), [1, 2], [0, 0])) == 0.0


def test_heldout_likelihood_prefers_true_beta():
    g = np.random.default_rng(11)
    beta_true = np.array([0.8, -0.5, 0.3])
    wins = 0
    for _ in range(100):
        X = g.normal(size=(300, 3))
        T = g.exponential(size=300) / np.exp(X @ beta_true)
        val = Dataset.from_arrays(X, T, np.ones(300))
        perturbed = beta_true + 0.5 * g.normal(size=3)
        wins += heldout_partial_likelihood(beta_true, val) > heldout_partial_likelihood(perturbed, val)
    assert wins >= 90


def test_within_fold_cindex_unweighted_mean():
    t = np.arange(1.0, 5.0)
    perfect = Dataset.from_arrays(-t[:, None], t, np.ones(4))
    reversed_ = Dataset.from_arrays(t[:, None], t, np.ones(4))
    assert cv_within_fold_cindex([[1.0], [1.0]], [perfect, reversed_]) == 0.5
    assert cv_within_fold_cindex([[1.0], [1.0]], [perfect, perfect]) == 1.0
    censored = Dataset.from_arrays(t[:, None], t, np.zeros(4))
    assert cv_within_fold_cindex([[1.0]], [censored]) is None
    assert cv_within_fold_cindex([[1.0], [1.0]], [perfect, censored]) == 1.0


def test_within_fold_cindex_matches_oracle(rng):
    folds = [random_dataset(rng, n=20, d=2, ties=True) for _ in range(2)]
    betas = [rng.normal(size=2) for _ in range(2)]
    expected = np.mean([
        oracles.cindex([-oracles.dot(b, x) for x in f.X.tolist()], f.time.tolist(), f.event.tolist())
        for b, f in zip(betas, folds)
    ])
    assert cv_within_fold_cindex(betas, folds) == pytest.approx(expected, rel=1e-15)


def trace_algorithm(ds, assignment, lam):
    """Direct transcription of the pooled cross-validated C-index, used as a trace oracle."""
    pred = np.empty(ds.n)
    for k in range(assignment.k_folds):
        tr = ds.subset(assignment.training_index(k))
        va_idx = assignment.validation_index(k)
        beta = fit_lasso_cox(tr, lam).beta
        H = breslow_cumhaz(tr, beta)
        pred[va_idx] = predict_times(beta, H, ds.subset(va_idx))
    return oracles.cindex(pred.tolist(), ds.time.tolist(), ds.event.tolist())


def test_baseline_adjusted_cv_hand_trace_k2():
    X = np.array([[0.5], [-0.3], [1.2], [0.0], [-1.0], [0.8], [0.3], [-0.6]])
    T = np.array([1.0, 4.0, 0.5, 2.5, 6.0, 1.5, 3.0, 5.0])
    E = np.array([1, 1, 1, 0, 1, 1, 1, 0])
    ds = Dataset.from_arrays(X, T, E)
    a = FoldAssignment(np.array([0, 1, 0, 1, 0, 1, 0, 1]), 2, 0)
    lam = 0.2
    got = cv_baseline_adjusted_cindex(ds, a, lam)
    assert got == trace_algorithm(ds, a, lam)


def test_baseline_adjusted_cv_two_folds_pool_both_directions(rng):
    ds = random_dataset(rng, n=60, d=2, beta=[0.7, -0.4])
    a = kfold_split(ds, 2, 3)
    lam = 0.1 * lambda_max(ds)
    pooled = cv_baseline_adjusted_cindex(ds, a, lam)
    assert pooled == trace_algorithm(ds, a, lam)
    # each direction on its own is the train/test estimator
    d0, d1 = ds.subset(a.training_index(0)), ds.subset(a.validation_index(0))
    forward = cindex_baseline_adjusted(d0, d1, fit_lasso_cox(d0, lam).beta)
    assert 0 < forward.comparable < cindex_from_scores(np.zeros(ds.n), ds.time, ds.event).comparable


def test_baseline_adjusted_cv_null_model_near_half():
    g = np.random.default_rng(5)
    n = 200
    ds = Dataset.from_arrays(g.normal(size=(n, 2)), g.exponential(size=n), np.ones(n))
    a = kfold_split(ds, 5, 0)
    score = cv_baseline_adjusted_cindex(ds, a, 2 * lambda_max(ds))
    assert abs(score - 0.5) < 0.05


def test_baseline_adjusted_cv_strong_signal():
    g = np.random.default_rng(6)
    n = 500
    X = g.normal(size=(n, 1))
    T = g.exponential(size=n) / np.exp(2.0 * X[:, 0])
    ds = Dataset.from_arrays(X, T, np.ones(n))
    score = cv_baseline_adjusted_cindex(ds, kfold_split(ds, 5, 0), 0.01 * lambda_max(ds))
    assert score > 0.8


def test_select_index_rules():
    assert select_index([1.0], [0.3]) == 0
    assert select_index([2.0, 1.0], [0.7, 0.7]) == 0
    assert select_index([1.0, 2.0], [0.7, 0.7]) == 1
    assert select_index([3.0, 2.0, 1.0], [None, 0.4, float("nan")]) == 1
    assert select_index([1.0, 2.0], [None, None]) is None


def test_cv_single_lambda_selected(small_cox):
    res = cv_select_lambda(small_cox, 5, [0.5 * lambda_max(small_cox)], "deviance", seed=0)
    assert res.selected_index == 0
    assert res.selected_lambda == res.lambdas[0]


def test_cv_evaluate_shares_fits_and_is_order_invariant(small_cox):
    lm = lambda_max(small_cox)
    grid = list(lm * np.geomspace(1, 0.05, 6))
    a = kfold_split(small_cox, 4, 2)
    forward = cv_evaluate(small_cox, a, grid)
    shuffled = [grid[i] for i in (3, 0, 5, 1, 4, 2)]
    other = cv_evaluate(small_cox, a, shuffled)
    assert set(forward) == set(METRICS)
    for m in METRICS:
        f = dict(zip(forward[m].lambdas, forward[m].scores))
        o = dict(zip(other[m].lambdas, other[m].scores))
        for lam in grid:
            assert o[lam] == pytest.approx(f[lam], rel=1e-6, abs=1e-9)
        assert forward[m].selected_lambda == other[m].selected_lambda
    assert forward["deviance"].seed == 2 and forward["deviance"].k_folds == 4


def test_cv_fold_fits_satisfy_kkt(small_cox):
    lm = lambda_max(small_cox)
    grid = list(lm * np.geomspace(1, 0.05, 5))
    res = cv_select_lambda(small_cox, 3, grid, "within_fold_cindex", seed=1)
    for entry in res.fold_diagnostics:
        for fold in entry["folds"]:
            assert fold["converged"]
            assert fold["kkt_violation"] <= kkt_tolerance(entry["lambda"])


def test_cv_deviance_is_sum_over_folds(small_cox):
    lam = 0.3 * lambda_max(small_cox)
    a = kfold_split(small_cox, 3, 4)
    res = cv_evaluate(small_cox, a, [lam], ("deviance",))["deviance"]
    total = 0.0
    for k in range(3):
        beta = fit_lasso_cox(small_cox.subset(a.training_index(k)), lam).beta
        total += partial_log_likelihood(small_cox.subset(a.validation_index(k)), beta)
    assert res.scores[0] == pytest.approx(total, rel=1e-8)


def test_cv_result_serializes(small_cox):
    res = cv_select_lambda(small_cox, 3, [0.5 * lambda_max(small_cox)], seed=0)
    d = res.to_dict()
    assert d["metric"] == "baseline_adjusted_cindex"
    assert len(d["fold_diagnostics"][0]["folds"]) == 3
    assert d["selected_index"] == 0


def test_cv_rejects_bad_arguments(small_cox):
    a = kfold_split(small_cox, 3, 0)
    with pytest.raises(ValueError):
        cv_evaluate(small_cox, a, [])
    with pytest.raises(ValueError):
        cv_evaluate(small_cox, a, [-1.0])
    with pytest.raises(ValueError):
        cv_evaluate(small_cox, a, [1.0], ("accuracy",))


def test_cv_stratum_without_training_events_is_excluded():
    X = np.linspace(-1, 1, 12)[:, None]
    T = np.arange(1.0, 13.0)
    E = np.r_[np.ones(10), 1, 0].astype(int)
    S = np.r_[np.ones(10), 2, 2].astype(int)
    ds = Dataset.from_arrays(X, T, E, S)
    a = FoldAssignment(np.array([0, 1] * 5 + [0, 1]), 2, 0)
    res = cv_evaluate(ds, a, [0.01], ("baseline_adjusted_cindex",))["baseline_adjusted_cindex"]
    # the stratum-2 event sits in fold 0, whose training fold holds only a censored stratum-2 row
    assert res.fold_diagnostics[0]["excluded_predictions"] == 1
    assert res.scores[0] is not None


@pytest.mark.slow
def test_adjusted_selection_close_to_grid_best():
    import os
    from pathlib import Path

    from coxconcord.simulation import load_config, run_cv_experiment

    config = load_config(Path(__file__).resolve().parents[1] / "configs" / "cv_iid_correct.ini")
    threads = int(os.environ.get("COXCONCORD_THREADS", "4"))
    result = run_cv_experiment(config, n_replications=50, threads=threads)
    ratio = result.values("baseline_adjusted_cindex") / result.values("grid_best")
    print(f"median refit-MSE ratio to grid best: {np.median(ratio):.3f}")
    assert np.median(ratio) <= 1.2
