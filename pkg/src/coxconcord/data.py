"""Right-censored, stratified survival data.

A :class:`Dataset` stores covariates, observed times, event indicators and
stratum labels as read-only numpy arrays.  Construction always validates, so
every function downstream may assume a well-formed dataset.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DataValidationError",
    "UnknownStratumError",
    "Observation",
    "Dataset",
    "PairComparability",
    "validate_dataset",
    "risk_set",
    "comparable_pairs",
    "comparable_mask",
    "read_csv",
    "write_csv",
]


class DataValidationError(ValueError):
    """Raised when input rows violate the survival data contract.

    ``row`` is the 0-based index of the offending record, or ``None`` when
    the problem concerns the table as a whole.
    """

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class UnknownStratumError(KeyError):
    """A stratum label that the dataset (or a fitted baseline) does not know."""


@dataclass(frozen=True)
class Observation:
    covariates: tuple[float, ...]
    time: float
    event: int
    stratum: int = 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated collection of observations.

    Attributes
    ----------
    X : ndarray, shape (n, d)
    time : ndarray, shape (n,)
    event : ndarray of int8, shape (n,)
    stratum : ndarray of int64, shape (n,)
        Original (external) stratum labels.
    covariate_names : tuple of str
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    stratum: np.ndarray
    covariate_names: tuple[str, ...]
    # derived structures (sort orders etc.), safe because arrays are read-only
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_arrays(
        cls,
        X: Any,
        time: Any,
        event: Any,
        stratum: Any = None,
        covariate_names: Sequence[str] | None = None,
        min_rows: int = 2,
    ) -> "Dataset":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataValidationError("covariates must be a 2-d array")
        n, d = X.shape
        time = np.asarray(time, dtype=float).reshape(-1)
        event_raw = np.asarray(event, dtype=float).reshape(-1)
        if stratum is None:
            stratum_raw = np.ones(n, dtype=float)
        else:
            stratum_raw = np.asarray(stratum, dtype=float).reshape(-1)
        for name, arr in (("time", time), ("event", event_raw), ("stratum", stratum_raw)):
            if arr.shape[0] != n:
                raise DataValidationError(
                    f"{name} has length {arr.shape[0]}, expected {n}"
                )
        if n < min_rows:
            raise DataValidationError(f"need at least {min_rows} rows, got {n}")

        bad = ~np.isfinite(X).all(axis=1)
        if bad.any():
            raise DataValidationError("non-finite covariate value", int(np.argmax(bad)))
        bad = ~np.isfinite(time) | (time <= 0)
        if bad.any():
            i = int(np.argmax(bad))
            raise DataValidationError(f"time must be positive and finite, got {time[i]!r}", i)
        bad = ~np.isin(event_raw, (0.0, 1.0))
        if bad.any():
            i = int(np.argmax(bad))
            raise DataValidationError(f"event must be 0 or 1, got {event_raw[i]!r}", i)
        bad = ~np.isfinite(stratum_raw) | (stratum_raw != np.round(stratum_raw))
        if bad.any():
            i = int(np.argmax(bad))
            raise DataValidationError(f"stratum must be an integer, got {stratum_raw[i]!r}", i)

        if covariate_names is None:
            covariate_names = tuple(f"x{j + 1}" for j in range(d))
        else:
            covariate_names = tuple(covariate_names)
            if len(covariate_names) != d:
                raise DataValidationError(
                    f"{len(covariate_names)} covariate names for {d} columns"
                )
        return cls(
            X=_readonly(X.copy()),
            time=_readonly(time.copy()),
            event=_readonly(event_raw.astype(np.int8)),
            stratum=_readonly(stratum_raw.astype(np.int64)),
            covariate_names=covariate_names,
        )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def strata(self) -> list[int]:
        """Sorted distinct stratum labels."""
        return [int(s) for s in np.unique(self.stratum)]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def stratum_codes(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense 0-based stratum codes and the label each code stands for."""
        labels, codes = np.unique(self.stratum, return_inverse=True)
        return codes, labels

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(tuple(float(v) for v in self.X[i]), float(self.time[i]),
                        int(self.event[i]), int(self.stratum[i]))
            for i in range(self.n)
        ]

    def subset(self, index: Any, min_rows: int = 1) -> "Dataset":
        """Rows selected by an integer index or boolean mask, order preserved."""
        index = np.asarray(index)
        return Dataset.from_arrays(
            self.X[index], self.time[index], self.event[index], self.stratum[index],
            self.covariate_names, min_rows=min_rows,
        )

    def with_stratum(self, label: int) -> "Dataset":
        """Same data with every observation relabeled to a single stratum."""
        return Dataset.from_arrays(
            self.X, self.time, self.event, np.full(self.n, label),
            self.covariate_names, min_rows=1,
        )


def validate_dataset(rows: Iterable[Observation | Mapping[str, Any]]) -> Dataset:
    """Build a :class:`Dataset` from records, reporting the first bad row.

    Each record is an :class:`Observation` or a mapping with keys
    ``covariates``, ``time``, ``event`` and optionally ``stratum``.
    """
    rows = list(rows)
    if len(rows) < 2:
        raise DataValidationError(f"need at least 2 rows, got {len(rows)}")
    covs, times, events, strata = [], [], [], []
    d = None
    for i, row in enumerate(rows):
        if isinstance(row, Observation):
            rec = {"covariates": row.covariates, "time": row.time,
                   "event": row.event, "stratum": row.stratum}
        else:
            rec = row
        try:
            x = [float(v) for v in rec["covariates"]]
            t = float(rec["time"])
            e = float(rec["event"])
            s = float(rec.get("stratum", 1))
        except KeyError as exc:
            raise DataValidationError(f"missing field {exc.args[0]!r}", i) from None
        except (TypeError, ValueError) as exc:
            raise DataValidationError(f"unparseable value ({exc})", i) from None
        if d is None:
            d = len(x)
        elif len(x) != d:
            raise DataValidationError(
                f"ragged covariate row: length {len(x)}, expected {d}", i
            )
        if not all(math.isfinite(v) for v in x):
            raise DataValidationError("non-finite covariate value", i)
        covs.append(x)
        times.append(t)
        events.append(e)
        strata.append(s)
    X = np.array(covs, dtype=float).reshape(len(rows), d or 0)
    return Dataset.from_arrays(X, times, events, strata)


def risk_set(dataset: Dataset, stratum: int, t: float) -> np.ndarray:
    """Indices j (0-based) with ``stratum[j] == stratum`` and ``time[j] >= t``."""
    if stratum not in set(dataset.strata):
        raise UnknownStratumError(stratum)
    mask = (dataset.stratum == stratum) & (dataset.time >= t)
    return np.flatnonzero(mask)


@dataclass(frozen=True)
class PairComparability:
    """A comparable pair; ``first`` has the strictly smaller observed time."""

    first: int
    second: int

    @property
    def i(self) -> int:
        return self.first

    @property
    def j(self) -> int:
        return self.second


def comparable_mask(time: Any, event: Any) -> np.ndarray:
    """Boolean matrix ``M[i, j]``: pair is comparable with ``i`` failing first.

    ``i`` must have an observed event and ``time[i] < time[j]`` strictly; the
    status of ``j`` is irrelevant.  This encodes every censoring rule at once:
    censored-before-event, double censoring and exact ties are all excluded.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    return (event[:, None] == 1) & (time[:, None] < time[None, :])


def comparable_pairs(times: Sequence[float], events: Sequence[int]) -> list[PairComparability]:
    times = np.asarray(times, dtype=float)
    events = np.asarray(events)
    if times.shape != events.shape:
        raise ValueError(f"length mismatch: {times.shape[0]} times, {events.shape[0]} events")
    first, second = np.nonzero(comparable_mask(times, events))
    return [PairComparability(int(a), int(b)) for a, b in zip(first, second)]


def read_csv(path: str, strata_col: str | None = "stratum", outcome: bool = True) -> Dataset:
    """Read a survival CSV.

    Required columns ``time`` and ``event``; ``strata_col`` is optional (a
    single stratum 1 is assumed when absent); every other column is a numeric
    covariate, kept in file order.  Row numbers in errors count data rows
    from 1, matching what a user sees below the header.

    With ``outcome=False`` (covariates for prediction only) the time and
    event columns may be absent; missing outcomes are filled with time 1,
    censored.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError("empty file, header row required") from None
        body = [r for r in reader if any(c.strip() for c in r)]
    for col in ("time", "event"):
        if col not in header:
            if outcome:
                raise DataValidationError(f"missing required column {col!r}")
    if len(set(header)) != len(header):
        raise DataValidationError("duplicate column names in header")
    has_strata = strata_col is not None and strata_col in header
    cov_cols = [h for h in header if h not in ("time", "event") and not (has_strata and h == strata_col)]
    pos = {h: k for k, h in enumerate(header)}

    records = []
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataValidationError(
                f"expected {len(header)} fields, got {len(row)}", r
            )
        try:
            vals = {h: float(row[pos[h]]) for h in header}
        except ValueError as exc:
            raise DataValidationError(f"non-numeric value ({exc})", r) from None
        records.append(vals)
    min_rows = 2 if outcome else 1
    if len(records) < min_rows:
        raise DataValidationError(f"need at least {min_rows} rows, got {len(records)}")
    X = np.array([[rec[c] for c in cov_cols] for rec in records], dtype=float)
    X = X.reshape(len(records), len(cov_cols))
    time = [rec.get("time", 1.0) for rec in records]
    event = [rec.get("event", 0.0) for rec in records]
    stratum = [rec[strata_col] for rec in records] if has_strata else None
    try:
        return Dataset.from_arrays(X, time, event, stratum, cov_cols, min_rows=min_rows)
    except DataValidationError as exc:
        # shift to 1-based data-row numbering
        if exc.row is not None:
            msg = str(exc).split(": ", 1)[1]
            raise DataValidationError(msg, exc.row + 1) from None
        raise


def write_csv(dataset: Dataset, path: str, strata_col: str = "stratum") -> None:
    """Write ``dataset`` in the layout :func:`read_csv` accepts.

    Floats are written with ``repr``, so reading the file back reproduces
    the arrays exactly.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event", strata_col, *dataset.covariate_names])
        for i in range(dataset.n):
            w.writerow([
                repr(float(dataset.time[i])), int(dataset.event[i]), int(dataset.stratum[i]),
                *(repr(float(v)) for v in dataset.X[i]),
            ])
