"""Concordance (C-index) estimators for right-censored data.

A pair is comparable when the earlier of the two times is an observed event
and the times differ strictly.  Scores are oriented so that a higher score
predicts longer survival; a comparable pair is concordant when the earlier
failure has the lower score, and exactly tied scores earn half credit.

Four estimators are provided:

* :func:`cindex_from_scores` -- any score vector.
* :func:`cindex_linear_predictor` -- scores ``-beta'x`` over all pairs,
  ignoring strata.
* :func:`cindex_within_strata` -- per-stratum indices with scores
  ``-beta'x``, averaged with equal weight per stratum.
* :func:`cindex_baseline_adjusted` -- scores are expected survival times
  built from per-stratum Breslow baselines, so pairs across strata count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baseline import BaselineSet, breslow_cumhaz, predict_times
from .coxph import _check_beta
from .data import Dataset

__all__ = [
    "ConcordanceReport",
    "StratifiedConcordance",
    "cindex_from_scores",
    "cindex_linear_predictor",
    "cindex_within_strata",
    "cindex_within_strata_pooled",
    "cindex_baseline_adjusted",
    "cindex_from_baselines",
]

_CHUNK = 2048


@dataclass(frozen=True)
class ConcordanceReport:
    concordant: int
    comparable: int
    score_ties: int
    index: float | None

    @classmethod
    def from_counts(cls, concordant: int, comparable: int, score_ties: int) -> "ConcordanceReport":
        index = (concordant + 0.5 * score_ties) / comparable if comparable > 0 else None
        return cls(int(concordant), int(comparable), int(score_ties), index)

    @property
    def discordant(self) -> int:
        return self.comparable - self.concordant - self.score_ties

    @property
    def defined(self) -> bool:
        return self.index is not None

    def to_dict(self) -> dict:
        return {
            "concordant": self.concordant,
            "discordant": self.discordant,
            "comparable": self.comparable,
            "score_ties": self.score_ties,
            "index": self.index,
        }


@dataclass(frozen=True)
class StratifiedConcordance:
    """Equal-weight average of per-stratum C-indices.

    ``index`` is the mean over strata with at least one comparable pair; the
    counts are totals over those strata and are reported for reference only.
    """

    index: float | None
    per_stratum: dict[int, ConcordanceReport]
    excluded_strata: tuple[int, ...] = field(default=())

    @property
    def concordant(self) -> int:
        return sum(r.concordant for r in self.per_stratum.values())

    @property
    def comparable(self) -> int:
        return sum(r.comparable for r in self.per_stratum.values())

    @property
    def score_ties(self) -> int:
        return sum(r.score_ties for r in self.per_stratum.values())

    @property
    def defined(self) -> bool:
        return self.index is not None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "concordant": self.concordant,
            "comparable": self.comparable,
            "score_ties": self.score_ties,
            "per_stratum": {str(k): r.to_dict() for k, r in self.per_stratum.items()},
            "excluded_strata": list(self.excluded_strata),
        }


def _pair_counts(scores: np.ndarray, time: np.ndarray, event: np.ndarray) -> tuple[int, int, int]:
    concordant = comparable = ties = 0
    n = scores.shape[0]
    for lo in range(0, n, _CHUNK):
        rows = slice(lo, lo + _CHUNK)
        ev = event[rows] == 1
        if not ev.any():
            continue
        s_i = scores[rows][ev][:, None]
        comp = time[rows][ev][:, None] < time[None, :]
        comparable += int(np.count_nonzero(comp))
        concordant += int(np.count_nonzero(comp & (s_i < scores[None, :])))
        ties += int(np.count_nonzero(comp & (s_i == scores[None, :])))
    return concordant, comparable, ties


def cindex_from_scores(scores, times, events) -> ConcordanceReport:
    scores = np.asarray(scores, dtype=float).reshape(-1)
    times = np.asarray(times, dtype=float).reshape(-1)
    events = np.asarray(events).reshape(-1)
    if not scores.shape == times.shape == events.shape:
        raise ValueError(
            f"length mismatch: {scores.shape[0]} scores, {times.shape[0]} times, {events.shape[0]} events"
        )
    if scores.shape[0] < 2:
        raise ValueError("need at least 2 observations")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    return ConcordanceReport.from_counts(*_pair_counts(scores, times, events))


def cindex_linear_predictor(beta, dataset: Dataset) -> ConcordanceReport:
    beta = _check_beta(dataset, beta)
    return cindex_from_scores(-(dataset.X @ beta), dataset.time, dataset.event)


def _per_stratum(beta, dataset: Dataset) -> tuple[dict[int, ConcordanceReport], tuple[int, ...]]:
    beta = _check_beta(dataset, beta)
    scores = -(dataset.X @ beta)
    reports, excluded = {}, []
    for label in dataset.strata:
        m = dataset.stratum == label
        rep = ConcordanceReport.from_counts(*_pair_counts(scores[m], dataset.time[m], dataset.event[m]))
        if rep.comparable > 0:
            reports[label] = rep
        else:
            excluded.append(label)
    return reports, tuple(excluded)


def cindex_within_strata(beta, dataset: Dataset) -> StratifiedConcordance:
    """Unweighted mean of within-stratum C-indices.

    Strata without a comparable pair are left out of the mean and listed in
    ``excluded_strata``.
    """
    reports, excluded = _per_stratum(beta, dataset)
    index = float(np.mean([r.index for r in reports.values()])) if reports else None
    return StratifiedConcordance(index, reports, excluded)


def cindex_within_strata_pooled(beta, dataset: Dataset) -> ConcordanceReport:
    """Within-stratum pairs only, but pooled over strata (pair-weighted)."""
    reports, _ = _per_stratum(beta, dataset)
    return ConcordanceReport.from_counts(
        sum(r.concordant for r in reports.values()),
        sum(r.comparable for r in reports.values()),
        sum(r.score_ties for r in reports.values()),
    )


def cindex_from_baselines(fit_beta, baselines: BaselineSet, test: Dataset) -> ConcordanceReport:
    predicted = predict_times(fit_beta, baselines, test, policy="fail")
    return cindex_from_scores(predicted, test.time, test.event)


def cindex_baseline_adjusted(train: Dataset, test: Dataset, fit_beta) -> ConcordanceReport:
    """C-index of expected survival times over all comparable test pairs.

    Baselines are Breslow estimates on ``train`` at ``fit_beta``; every test
    stratum must have at least one training event.
    """
    if train.d != test.d:
        raise ValueError(f"train has d={train.d}, test has d={test.d}")
    return cindex_from_baselines(fit_beta, breslow_cumhaz(train, fit_beta), test)
