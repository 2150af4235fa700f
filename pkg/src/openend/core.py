"""Shared building blocks: weight functions, weighted norms and detector tags."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPSILON = 1e-10


class NotPositiveDefinite(ValueError):
    """Raised when a long-run variance estimate cannot be inverted.

    Usually the training segment is too short or the bandwidth too large for
    the dependence in the data. Increase ``m`` or lower the bandwidth.
    """


class DetectorKind(str, enum.Enum):
    E = "E"
    Q = "Q"
    P = "P"

    @classmethod
    def parse(cls, value: "str | DetectorKind") -> "DetectorKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().upper())
        except ValueError:
            raise ValueError(f"unknown detector {value!r}; expected one of E, Q, P") from None


def parse_detectors(value) -> tuple[DetectorKind, ...]:
    """Parse ``"E,Q,P"`` or an iterable of tags into an ordered, unique tuple."""
    if isinstance(value, str):
        value = [v for v in value.replace(" ", "").split(",") if v]
    kinds = []
    for v in value:
        kind = DetectorKind.parse(v)
        if kind not in kinds:
            kinds.append(kind)
    if not kinds:
        raise ValueError("at least one detector is required")
    return tuple(kinds)


@dataclass(frozen=True)
class WeightFunction:
    """Threshold function ``w(t) = (1+t)^-1 max{(t/(1+t))^gamma, eps}^-1``.

    The function is zero outside ``[t_lower, t_upper]``. ``t_upper=inf`` is
    the open-end case; a finite ``t_upper`` turns monitoring into a
    closed-end scheme with horizon ``t_upper * m``.
    """

    gamma: float = 0.0
    epsilon: float = DEFAULT_EPSILON
    t_lower: float = 0.0
    t_upper: float = math.inf

    def __post_init__(self):
        if not 0.0 <= self.gamma < 0.5:
            raise ValueError(f"gamma must lie in [0, 0.5), got {self.gamma}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.t_lower < 0:
            raise ValueError(f"t_lower must be non-negative, got {self.t_lower}")
        if not self.t_lower < self.t_upper:
            raise ValueError("t_lower must be smaller than t_upper")

    def __call__(self, t):
        return weight_eval(self, t)

    @property
    def closed_end(self) -> bool:
        return math.isfinite(self.t_upper)


def weight_eval(w: WeightFunction, t):
    """Evaluate the weight function at ``t >= 0`` (scalar or array)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or not np.all(np.isfinite(t_arr)):
        raise ValueError("weight function arguments must be finite and non-negative")
    ratio = t_arr / (1.0 + t_arr)
    if w.gamma == 0.0:
        power = np.ones_like(ratio)
    else:
        power = ratio**w.gamma
    value = 1.0 / ((1.0 + t_arr) * np.maximum(power, w.epsilon))
    value = np.where((t_arr < w.t_lower) | (t_arr > w.t_upper), 0.0, value)
    if value.ndim == 0:
        return float(value)
    return value


@dataclass(frozen=True, eq=False)
class NormMatrix:
    """Positive definite matrix ``A`` inducing ``||v||_A = sqrt(v' A v)``.

    The matrix is symmetrised on construction and its Cholesky factor
    ``A = R R'`` is cached, so that ``||v||_A = |R' v|``.
    """

    matrix: np.ndarray
    factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"norm matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NotPositiveDefinite("norm matrix has non-finite entries")
        a = 0.5 * (a + a.T)
        try:
            factor = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("norm matrix is not positive definite") from None
        a.setflags(write=False)
        factor.setflags(write=False)
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "factor", factor)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """Map vectors (last axis of length p) to coordinates where the norm is Euclidean."""
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected vectors of length {self.dim}, got shape {v.shape}")
        return v @ self.factor


def weighted_norm(a: NormMatrix, v) -> float:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1 or v.shape[0] != a.dim:
        raise ValueError(f"dimension mismatch: matrix is {a.dim}x{a.dim}, vector has shape {v.shape}")
    return float(np.linalg.norm(a.whiten(v)))


def invert_to_norm(s) -> NormMatrix:
    """Build the norm matrix ``S^-1`` from a (long-run) covariance ``S``.

    Raises
    ------
    NotPositiveDefinite
        If ``S`` is singular or indefinite, e.g. a degenerate long-run
        variance estimate from constant training data.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if s.shape[0] != s.shape[1]:
        raise ValueError(f"covariance must be square, got shape {s.shape}")
    scale = max(np.max(np.abs(s)), np.finfo(float).tiny)
    if np.max(np.abs(s - s.T)) > 1e-8 * scale:
        raise ValueError("covariance matrix is not symmetric")
    s = 0.5 * (s + s.T)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            "long-run variance estimate is not positive definite; "
            "use a longer training segment or a smaller bandwidth"
        ) from None
    if np.min(np.abs(np.diag(chol))) <= 1e-12 * math.sqrt(scale):
        raise NotPositiveDefinite("long-run variance estimate is numerically singular")
    eye = np.eye(s.shape[0])
    inv_chol = np.linalg.solve(chol, eye)
    return NormMatrix(inv_chol.T @ inv_chol)
