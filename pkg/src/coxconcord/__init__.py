"""Cox proportional-hazards fitting and baseline-adjusted concordance."""

from .baseline import BaselineSet, StepFunction, breslow_cumhaz, expected_survival, predict_times
from .concordance import (
    ConcordanceReport,
    StratifiedConcordance,
    cindex_baseline_adjusted,
    cindex_from_scores,
    cindex_linear_predictor,
    cindex_within_strata,
)
from .coxph import CoxFit, FitOptions, fit_cox, partial_log_likelihood, plk_gradient, plk_hessian
from .cv import CvResult, FoldAssignment, cv_baseline_adjusted_cindex, cv_select_lambda, kfold_split
from .data import Dataset, Observation, comparable_pairs, read_csv, risk_set, validate_dataset
from .lasso import LambdaPath, LassoFit, fit_lasso_cox, lambda_max, lambda_path, soft_threshold

__version__ = "0.1.0"
