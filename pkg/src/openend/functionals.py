"""Score streams for the mean and linear-model functionals.

Both estimators monitored here are plain averages of a per-observation
score: the observation itself for the mean, and ``Y_t * P_t`` for the
regression coefficients once the (known) moment matrix has cancelled from
the detector. Detectors therefore only ever see prefix sums of scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def score_mean(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float)).copy()


def score_lm(predictors, response) -> np.ndarray:
    """Score ``Y_t P_t`` of one regression observation."""
    p = np.atleast_1d(np.asarray(predictors, dtype=float))
    return float(response) * p


def scores_mean(data) -> np.ndarray:
    """Vectorised :func:`score_mean` for an ``(n, d)`` (or ``(n,)``) array."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    return data.copy()


def scores_lm(predictors, response) -> np.ndarray:
    """Vectorised :func:`score_lm`; ``predictors`` is ``(n, p)``, ``response`` is ``(n,)``."""
    predictors = np.asarray(predictors, dtype=float)
    if predictors.ndim == 1:
        predictors = predictors[:, None]
    response = np.asarray(response, dtype=float).reshape(-1)
    if response.shape[0] != predictors.shape[0]:
        raise ValueError("predictors and response have different lengths")
    return predictors * response[:, None]


@dataclass(frozen=True)
class ScoreStream:
    """Maps raw observation rows to score vectors.

    ``functional="mean"`` consumes rows of length ``d`` and yields scores of
    length ``d``. ``functional="lm"`` consumes rows ``(p_1, ..., p_p, y)``
    and yields scores of length ``p``.
    """

    functional: str
    row_width: int

    def __post_init__(self):
        if self.functional not in ("mean", "lm"):
            raise ValueError(f"unknown functional {self.functional!r}")
        if self.row_width < (2 if self.functional == "lm" else 1):
            raise ValueError(f"row width {self.row_width} too small for {self.functional}")

    @property
    def dim(self) -> int:
        return self.row_width - 1 if self.functional == "lm" else self.row_width

    @property
    def rule(self) -> Callable[[np.ndarray], np.ndarray]:
        if self.functional == "mean":
            return score_mean
        return lambda row: score_lm(row[:-1], row[-1])

    def score(self, row) -> np.ndarray:
        row = np.asarray(row, dtype=float).reshape(-1)
        if row.shape[0] != self.row_width:
            raise ValueError(f"expected {self.row_width} values, got {row.shape[0]}")
        return self.rule(row)

    def scores(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.shape[1] != self.row_width:
            raise ValueError(f"expected {self.row_width} columns, got {rows.shape[1]}")
        if self.functional == "mean":
            return scores_mean(rows)
        return scores_lm(rows[:, :-1], rows[:, -1])


class PrefixSums:
    """Growing table of prefix sums ``S_0 = 0, S_t = Z_1 + ... + Z_t``.

    Parameters
    ----------
    dim : int
        Score dimension ``p``.
    capacity : int, optional
        Initial number of rows to reserve.
    compensated : bool, default False
        Use Kahan compensation when accumulating. Plain summation is exact
        enough for the horizons used here; the toggle exists for very long
        streams with large offsets.
    """

    def __init__(self, dim: int, capacity: int = 256, compensated: bool = False):
        self.dim = int(dim)
        self.compensated = compensated
        self._data = np.zeros((max(capacity, 1) + 1, self.dim))
        self._n = 0
        self._carry = np.zeros(self.dim)

    def __len__(self) -> int:
        return self._n

    def append(self, score) -> None:
        z = np.asarray(score, dtype=float).reshape(-1)
        if z.shape[0] != self.dim:
            raise ValueError(f"score has length {z.shape[0]}, expected {self.dim}")
        if not np.all(np.isfinite(z)):
            raise ValueError("scores must be finite")
        if self._n + 1 >= self._data.shape[0]:
            grown = np.zeros((2 * self._data.shape[0], self.dim))
            grown[: self._data.shape[0]] = self._data
            self._data = grown
        prev = self._data[self._n]
        if self.compensated:
            y = z - self._carry
            t = prev + y
            self._carry = (t - prev) - y
            self._data[self._n + 1] = t
        else:
            self._data[self._n + 1] = prev + z
        self._n += 1

    def extend(self, scores) -> None:
        for z in np.atleast_2d(np.asarray(scores, dtype=float)):
            self.append(z)

    @property
    def sums(self) -> np.ndarray:
        """Read-only view of ``S_0, ..., S_n`` with shape ``(n + 1, p)``."""
        view = self._data[: self._n + 1]
        view.flags.writeable = False
        return view

    def average(self, i: int, j: int) -> np.ndarray:
        return estimator_average(self.sums, i, j)


def prefix_sums(scores) -> np.ndarray:
    """Prefix sums ``S_0..S_n`` of an ``(n, p)`` score array, with ``S_0 = 0``."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[:, None]
    out = np.zeros((scores.shape[0] + 1, scores.shape[1]))
    np.cumsum(scores, axis=0, out=out[1:])
    return out


def estimator_average(sums, i: int, j: int) -> np.ndarray:
    """Average of scores ``i..j`` (1-indexed, inclusive) from prefix sums."""
    sums = np.asarray(sums)
    n = sums.shape[0] - 1
    if not 1 <= i <= j <= n:
        raise IndexError(f"need 1 <= i <= j <= {n}, got i={i}, j={j}")
    return (sums[j] - sums[i - 1]) / (j - i + 1)
