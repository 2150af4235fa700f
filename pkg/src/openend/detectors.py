"""Streaming detectors E, Q and P over prefix sums of scores.

With prefix sums ``S_t`` of the score stream, training size ``m`` and
``k`` monitored observations, the three detectors are

* ``E(k) = m^-1/2 max_j (k-j) || S_{m+j}/(m+j) - (S_{m+k}-S_{m+j})/(k-j) ||``
* ``Q(k) = k m^-1/2 || S_m/m - (S_{m+k}-S_m)/k ||``
* ``P(k) = m^-1/2 max_j (k-j) || S_m/m - (S_{m+k}-S_{m+j})/(k-j) ||``

with ``j = 0..k-1`` and the norm induced by the inverse long-run variance
estimated from the training segment. ``Q(k)`` is the ``j = 0`` term of both
maxima, so ``E >= Q`` and ``P >= Q`` hold exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import DetectorKind, NormMatrix, WeightFunction, invert_to_norm, parse_detectors
from .functionals import PrefixSums
from .lrv import LRVConfig, lrv_estimate

KINDS = (DetectorKind.E, DetectorKind.Q, DetectorKind.P)


class HorizonExceeded(RuntimeError):
    pass


def _check(sums, m, k):
    sums = np.asarray(sums, dtype=float)
    if sums.ndim == 1:
        sums = sums[:, None]
    if m < 1 or k < 1:
        raise ValueError(f"need m >= 1 and k >= 1, got m={m}, k={k}")
    if sums.shape[0] < m + k + 1:
        raise ValueError(f"prefix sums cover {sums.shape[0] - 1} scores, need {m + k}")
    return sums


def _terms(sums_w: np.ndarray, m: int, k: int):
    """Whitened j-indexed terms of E and P at step k (before scaling by 1/sqrt(m))."""
    j = np.arange(k)
    tail = (sums_w[m + k] - sums_w[m + j]) / (k - j)[:, None]
    e_terms = (k - j) * np.sqrt(np.sum((sums_w[m + j] / (m + j)[:, None] - tail) ** 2, axis=1))
    p_terms = (k - j) * np.sqrt(np.sum((sums_w[m] / m - tail) ** 2, axis=1))
    return e_terms, p_terms


def _q_overlap(sums_w: np.ndarray, m: int, k: int) -> float:
    post = (sums_w[m + k] - sums_w[m - 1]) / (k + 1)
    return k * float(np.sqrt(np.sum((sums_w[m] / m - post) ** 2)))


def detector_values(sums, m: int, k: int, norm: NormMatrix, q_overlap: bool = False) -> dict:
    """All three detector values at step ``k`` from raw prefix sums ``S_0..S_{m+k}``."""
    sums = _check(sums, m, k)
    sums_w = norm.whiten(sums[: m + k + 1])
    e_terms, p_terms = _terms(sums_w, m, k)
    root_m = math.sqrt(m)
    q = _q_overlap(sums_w, m, k) if q_overlap else e_terms[0]
    return {
        DetectorKind.E: float(e_terms.max()) / root_m,
        DetectorKind.Q: float(q) / root_m,
        DetectorKind.P: float(p_terms.max()) / root_m,
    }


def detector_E(sums, m: int, k: int, norm: NormMatrix) -> float:
    return detector_values(sums, m, k, norm)[DetectorKind.E]


def detector_Q(sums, m: int, k: int, norm: NormMatrix, overlap: bool = False) -> float:
    return detector_values(sums, m, k, norm, q_overlap=overlap)[DetectorKind.Q]


def detector_P(sums, m: int, k: int, norm: NormMatrix) -> float:
    return detector_values(sums, m, k, norm)[DetectorKind.P]


@njit(cache=True)
def _step_values(w, m, k, q_overlap, out):
    p = w.shape[1]
    e_best = 0.0
    p_best = 0.0
    q_val = 0.0
    for j in range(k):
        n_post = k - j
        e2 = 0.0
        p2 = 0.0
        for c in range(p):
            tail = (w[m + k, c] - w[m + j, c]) / n_post
            de = w[m + j, c] / (m + j) - tail
            dp = w[m, c] / m - tail
            e2 += de * de
            p2 += dp * dp
        e_val = n_post * math.sqrt(e2)
        p_val = n_post * math.sqrt(p2)
        if j == 0:
            q_val = e_val
        if e_val > e_best:
            e_best = e_val
        if p_val > p_best:
            p_best = p_val
    if q_overlap:
        q2 = 0.0
        for c in range(p):
            d = w[m, c] / m - (w[m + k, c] - w[m - 1, c]) / (k + 1)
            q2 += d * d
        q_val = k * math.sqrt(q2)
    root_m = math.sqrt(m)
    out[0] = e_best / root_m
    out[1] = q_val / root_m
    out[2] = p_best / root_m


@njit(cache=True)
def _whiten_rows(sums, factor):
    # fixed summation order so batch and streaming paths agree bit for bit
    n, p = sums.shape
    out = np.empty((n, p))
    for t in range(n):
        for c in range(p):
            acc = 0.0
            for r in range(p):
                acc += sums[t, r] * factor[r, c]
            out[t, c] = acc
    return out


def _whiten(sums, norm: NormMatrix) -> np.ndarray:
    return _whiten_rows(np.ascontiguousarray(sums, dtype=float), np.ascontiguousarray(norm.factor))


@njit(cache=True)
def _trajectories(w, m, horizon, q_overlap):
    out = np.zeros((3, horizon))
    buf = np.zeros(3)
    for k in range(1, horizon + 1):
        _step_values(w, m, k, q_overlap, buf)
        out[0, k - 1] = buf[0]
        out[1, k - 1] = buf[1]
        out[2, k - 1] = buf[2]
    return out


@njit(cache=True)
def _first_crossings(w, m, horizon, weights, crit, active, q_overlap):
    first = np.zeros(3, dtype=np.int64)
    buf = np.zeros(3)
    remaining = 0
    for d in range(3):
        if active[d]:
            remaining += 1
    for k in range(1, horizon + 1):
        if remaining == 0:
            break
        wk = weights[k - 1]
        if wk == 0.0:
            continue
        _step_values(w, m, k, q_overlap, buf)
        for d in range(3):
            if active[d] and first[d] == 0 and wk * buf[d] > crit[d]:
                first[d] = k
                remaining -= 1
    return first


def trajectories(sums, m: int, horizon: int, norm: NormMatrix, q_overlap: bool = False) -> dict:
    """Raw detector trajectories for ``k = 1..horizon`` (batch evaluation)."""
    sums = _check(sums, m, horizon)
    w = _whiten(sums[: m + horizon + 1], norm)
    out = _trajectories(w, int(m), int(horizon), bool(q_overlap))
    return dict(zip(KINDS, out))


def first_rejections(
    sums,
    m: int,
    horizon: int,
    norm: NormMatrix,
    weight: WeightFunction,
    critical_values: dict,
    q_overlap: bool = False,
) -> dict:
    """First ``k <= horizon`` with ``w(k/m) D(k) > c`` per detector (``None`` if never).

    Stops evaluating once every requested detector has rejected.
    """
    sums = _check(sums, m, horizon)
    w = _whiten(sums[: m + horizon + 1], norm)
    weights = weight(np.arange(1, horizon + 1) / m)
    crit = np.array([critical_values.get(kind, np.inf) for kind in KINDS], dtype=float)
    active = np.array([kind in critical_values for kind in KINDS])
    first = _first_crossings(w, int(m), int(horizon), weights, crit, active, bool(q_overlap))
    return {kind: (int(first[i]) or None) for i, kind in enumerate(KINDS) if active[i]}


@dataclass(frozen=True)
class MonitorConfig:
    """Static monitoring setup.

    ``critical_values`` maps each monitored detector to its threshold
    ``c(alpha)``; its keys define the detector set. ``horizon=None`` means
    open-end monitoring (bounded only by ``weight.t_upper``).
    """

    m: int
    critical_values: dict
    weight: WeightFunction = field(default_factory=WeightFunction)
    horizon: int | None = None
    q_overlap: bool = False

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"training size m must be at least 2, got {self.m}")
        crit = {DetectorKind.parse(k): float(v) for k, v in dict(self.critical_values).items()}
        if not crit:
            raise ValueError("at least one detector with a critical value is required")
        for kind, c in crit.items():
            if not c > 0:
                raise ValueError(f"critical value for {kind.value} must be positive, got {c}")
        object.__setattr__(self, "critical_values", {k: crit[k] for k in KINDS if k in crit})
        limit = self.max_horizon
        horizon = self.horizon
        if horizon is not None:
            if horizon < 1:
                raise ValueError("horizon must be at least 1")
            if limit is not None and horizon > limit:
                raise ValueError(f"horizon {horizon} exceeds ceil(m * t_upper) = {limit}")
        elif limit is not None:
            object.__setattr__(self, "horizon", limit)

    @property
    def max_horizon(self) -> int | None:
        if math.isfinite(self.weight.t_upper):
            return math.ceil(self.m * self.weight.t_upper)
        return None

    @property
    def detectors(self) -> tuple[DetectorKind, ...]:
        return tuple(self.critical_values)


@dataclass(frozen=True)
class StepReport:
    k: int
    raw: dict
    weighted: dict
    rejected: dict

    @property
    def any_rejected(self) -> bool:
        return any(self.rejected.values())


class Monitor:
    """Sequential monitoring session.

    Train with :meth:`from_training`, then feed one score per call to
    :meth:`step`. Rejections are recorded but do not stop the session, so
    detectors that have not yet rejected can keep running.

    Examples
    --------
    >>> import numpy as np
    >>> from openend import Monitor, MonitorConfig, LRVConfig
    >>> rng = np.random.default_rng(1)
    >>> cfg = MonitorConfig(m=50, critical_values={"E": 2.4977})
    >>> mon = Monitor.from_training(rng.standard_normal((50, 1)), cfg, LRVConfig(1.7))
    >>> mon.step([0.3]).k
    1
    """

    def __init__(self, config: MonitorConfig, norm: NormMatrix, training_scores):
        training_scores = np.asarray(training_scores, dtype=float)
        if training_scores.ndim == 1:
            training_scores = training_scores[:, None]
        if training_scores.shape[0] != config.m:
            raise ValueError(f"expected {config.m} training scores, got {training_scores.shape[0]}")
        if training_scores.shape[1] != norm.dim:
            raise ValueError("training scores and norm matrix disagree on the dimension")
        self.config = config
        self.norm = norm
        self.sums = PrefixSums(norm.dim, capacity=2 * config.m)
        self.sums.extend(training_scores)
        self._white = np.zeros((2 * config.m + 1, norm.dim))
        self._white[: config.m + 1] = _whiten(self.sums.sums, norm)
        self._buf = np.zeros(3)
        self.k = 0
        self.first_rejection = {kind: None for kind in config.detectors}
        self.history: list[StepReport] = []

    @classmethod
    def from_training(cls, training_scores, config: MonitorConfig, lrv_cfg: LRVConfig) -> "Monitor":
        """Estimate the long-run variance on the training scores and start a session.

        Raises :class:`~openend.core.NotPositiveDefinite` for degenerate training data.
        """
        training_scores = np.asarray(training_scores, dtype=float)
        if training_scores.ndim == 1:
            training_scores = training_scores[:, None]
        if training_scores.shape[0] != config.m:
            raise ValueError(f"expected {config.m} training scores, got {training_scores.shape[0]}")
        norm = invert_to_norm(lrv_estimate(training_scores, lrv_cfg))
        return cls(config, norm, training_scores)

    @property
    def m(self) -> int:
        return self.config.m

    def step(self, score) -> StepReport:
        cfg = self.config
        if cfg.horizon is not None and self.k + 1 > cfg.horizon:
            raise HorizonExceeded(f"monitoring horizon of {cfg.horizon} observations reached")
        self.sums.append(score)
        self.k += 1
        k = self.k
        n = cfg.m + k
        if n >= self._white.shape[0]:
            grown = np.zeros((2 * self._white.shape[0], self.norm.dim))
            grown[: n] = self._white[: n]
            self._white = grown
        self._white[n] = _whiten(self.sums.sums[n : n + 1], self.norm)[0]
        _step_values(self._white, cfg.m, k, cfg.q_overlap, self._buf)
        values = dict(zip(KINDS, (float(v) for v in self._buf)))
        w = cfg.weight(k / cfg.m)
        raw, weighted, rejected = {}, {}, {}
        for kind, c in cfg.critical_values.items():
            raw[kind] = values[kind]
            weighted[kind] = w * values[kind]
            rejected[kind] = weighted[kind] > c
            if rejected[kind] and self.first_rejection[kind] is None:
                self.first_rejection[kind] = k
        report = StepReport(k, raw, weighted, rejected)
        self.history.append(report)
        return report

    def run(self, scores) -> list[StepReport]:
        return [self.step(z) for z in np.atleast_2d(np.asarray(scores, dtype=float))]

    @property
    def all_rejected(self) -> bool:
        return all(v is not None for v in self.first_rejection.values())


def make_config(m, critical_values, gamma=0.0, epsilon=None, t_lower=0.0, t_upper=math.inf,
                horizon=None, q_overlap=False, detectors=None) -> MonitorConfig:
    """Convenience constructor mirroring the command-line options."""
    kw = {"gamma": gamma, "t_lower": t_lower, "t_upper": t_upper}
    if epsilon is not None:
        kw["epsilon"] = epsilon
    crit = {DetectorKind.parse(k): v for k, v in dict(critical_values).items()}
    if detectors is not None:
        crit = {k: crit[k] for k in parse_detectors(detectors)}
    return MonitorConfig(m=m, critical_values=crit, weight=WeightFunction(**kw),
                         horizon=horizon, q_overlap=q_overlap)
