"""Breslow cumulative baseline hazards and expected survival times."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .coxph import _check_beta
from .data import Dataset, UnknownStratumError

__all__ = [
    "StepFunction",
    "BaselineSet",
    "EmptyBaselineError",
    "breslow_cumhaz",
    "expected_survival",
    "predict_times",
]


class EmptyBaselineError(ValueError):
    """Prediction asked of a stratum whose baseline has no event times."""


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous nondecreasing step function starting at 0.

    ``values[i]`` is the value on ``[knots[i], knots[i+1])``.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if knots.shape != values.shape:
            raise ValueError("knots and values differ in length")
        if knots.size:
            if knots[0] <= 0 or np.any(np.diff(knots) <= 0):
                raise ValueError("knots must be positive and strictly increasing")
            if values[0] < 0 or np.any(np.diff(values) < 0):
                raise ValueError("values must be nonnegative and nondecreasing")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def empty(self) -> bool:
        return self.knots.size == 0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        pos = np.searchsorted(self.knots, t, side="right")
        padded = np.concatenate(([0.0], self.values))
        out = padded[pos]
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "StepFunction":
        return cls(np.array(data["knots"], dtype=float), np.array(data["values"], dtype=float))

    def to_csv_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.knots.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class BaselineSet:
    """Cumulative baseline hazard per stratum label."""

    functions: Mapping[int, StepFunction]

    def __getitem__(self, stratum: int) -> StepFunction:
        try:
            return self.functions[int(stratum)]
        except KeyError:
            raise UnknownStratumError(stratum) from None

    def __contains__(self, stratum) -> bool:
        return int(stratum) in self.functions

    @property
    def strata(self) -> list[int]:
        return sorted(self.functions)

    def to_dict(self) -> dict:
        return {str(k): self.functions[k].to_dict() for k in self.strata}

    @classmethod
    def from_dict(cls, data: Mapping) -> "BaselineSet":
        return cls({int(k): StepFunction.from_dict(v) for k, v in data.items()})


def breslow_cumhaz(dataset: Dataset, beta) -> BaselineSet:
    """Breslow estimate of each stratum's cumulative baseline hazard at ``beta``.

    Knots are the distinct event times of the stratum.  Tied events merge into
    one knot whose increment is the number of ties over the risk-set sum of
    ``exp(beta'x)``.
    """
    beta = _check_beta(dataset, beta)
    eta = dataset.X @ beta
    out = {}
    for label in dataset.strata:
        members = dataset.stratum == label
        t = dataset.time[members]
        e = dataset.event[members]
        lp = eta[members]
        knots, deaths = np.unique(t[e == 1], return_counts=True)
        if knots.size == 0:
            out[label] = StepFunction(np.empty(0), np.empty(0))
            continue
        # log risk-set sum at each knot, accumulated from the longest time down
        order = np.argsort(-t, kind="stable")
        neg_sorted = -t[order]
        log_cum = np.logaddexp.accumulate(lp[order])
        last = np.searchsorted(neg_sorted, -knots, side="right") - 1
        increments = deaths * np.exp(-log_cum[last])
        out[label] = StepFunction(knots, np.cumsum(increments))
    return BaselineSet(out)


def _survival_trapezoid(H: StepFunction, linear_predictor: np.ndarray) -> np.ndarray:
    # each distinct predictor is integrated once, so equal inputs give
    # bit-identical outputs regardless of how a vectorized reduction is blocked
    lp = np.asarray(linear_predictor, dtype=float)
    unique, inverse = np.unique(lp.reshape(-1), return_inverse=True)
    grid = np.concatenate(([0.0], H.knots))
    cum = np.concatenate(([0.0], H.values))
    surv = np.exp(-np.multiply.outer(np.exp(unique), cum))
    areas = (0.5 * (surv[:, 1:] + surv[:, :-1]) * np.diff(grid)).sum(axis=1)
    return areas[inverse].reshape(lp.shape)


def expected_survival(H: StepFunction, linear_predictor) -> float | np.ndarray:
    """Trapezoidal expected survival time, truncated at the last knot.

    The survival curve ``exp(-exp(lp) * H(t))`` is integrated over the event
    time grid ``0 < t_(1) < ... < t_(m)``; the tail beyond ``t_(m)`` is
    dropped.  Accepts a scalar or an array of linear predictors.
    """
    if H.empty:
        raise EmptyBaselineError("stratum has no event times; expected survival is undefined")
    out = _survival_trapezoid(H, linear_predictor)
    return float(out) if np.ndim(out) == 0 else out


def predict_times(fit_beta, baselines: BaselineSet, newdata: Dataset, policy: str = "fail") -> np.ndarray:
    """Expected survival time for every row of ``newdata``.

    ``policy="fail"`` raises on a stratum without a usable baseline;
    ``policy="drop"`` leaves NaN in those rows instead.
    """
    if policy not in ("fail", "drop"):
        raise ValueError(f"unknown policy {policy!r}")
    beta = _check_beta(newdata, fit_beta)
    lp = newdata.X @ beta
    pred = np.full(newdata.n, np.nan)
    for label in newdata.strata:
        rows = np.flatnonzero(newdata.stratum == label)
        if label not in baselines or baselines[label].empty:
            if policy == "fail":
                if label not in baselines:
                    raise UnknownStratumError(label)
                raise EmptyBaselineError(f"stratum {label} has no training events")
            continue
        pred[rows] = _survival_trapezoid(baselines[label], lp[rows])
    return pred
