"""Simulation harness: data models, size and power studies.

Mean models (one-dimensional, standard normal innovations)

* ``M1``: white noise
* ``M2``, ``M3``, ``M4``: AR(1) with coefficient 0.1, 0.5 and 0.7, after a
  burn-in of 100 observations

Linear models ``Y = P'beta + e`` with ``beta = (1, 1)`` and ``e ~ N(0, 0.5)``

* ``LM1``: ``P = (1, sqrt(0.5) Z)``
* ``LM2``: ``P = (1, 1 + G)`` with ``G_t = s_t Z_t`` and GARCH(1,1) volatility
  ``s_t^2 = 0.5 + 0.2 G_{t-1}^2 + 0.3 s_{t-1}^2``

A change of size ``delta`` at offset ``k_star`` shifts the mean (or the
second coefficient) from observation ``m + k_star`` onwards.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .core import DetectorKind, NotPositiveDefinite, WeightFunction, invert_to_norm, parse_detectors
from .detectors import KINDS, first_rejections
from .functionals import prefix_sums, scores_lm
from .limits import LimitSpec, MCSettings, QuantileCache, critical_value
from .lrv import LRVConfig, bandwidth_rule, lrv_estimate

log = logging.getLogger(__name__)

AR_COEF = {"M1": 0.0, "M2": 0.1, "M3": 0.5, "M4": 0.7}
LM_MODELS = ("LM1", "LM2")
BURN_IN = 100
CSV_COLUMNS = ("model", "m", "gamma", "detector", "delta", "k_star", "rejections", "replications", "power")


@dataclass(frozen=True)
class DataModel:
    """One of ``M1``-``M4``, ``LM1``, ``LM2``.

    ``literal_volatility=True`` switches ``LM2`` to the recursion
    ``s_t^2 = 0.5 + 0.2 Z_{t-1} + 0.3 s_{t-1}^2`` (floored at zero) instead of
    the GARCH(1,1) form.
    """

    tag: str
    literal_volatility: bool = False

    def __post_init__(self):
        tag = self.tag.upper()
        if tag not in AR_COEF and tag not in LM_MODELS:
            raise ValueError(f"unknown model {self.tag!r}")
        object.__setattr__(self, "tag", tag)

    @property
    def is_lm(self) -> bool:
        return self.tag in LM_MODELS

    @property
    def functional(self) -> str:
        return "lm" if self.is_lm else "mean"

    @property
    def dim(self) -> int:
        return 2 if self.is_lm else 1

    @property
    def default_bandwidth_rule(self) -> str:
        return "strong" if self.tag in ("M3", "M4") else "weak"


@dataclass(frozen=True)
class ChangeSpec:
    k_star: int
    delta: float

    def __post_init__(self):
        if self.k_star < 1:
            raise ValueError(f"k_star must be at least 1, got {self.k_star}")


def true_lrv(model: DataModel) -> float:
    """Long-run variance ``1/(1-phi)^2`` of the unit-innovation AR(1) mean models."""
    if model.is_lm:
        raise ValueError("the true long-run variance is only available for M1-M4")
    return 1.0 / (1.0 - AR_COEF[model.tag]) ** 2


def _ar1(phi: float, n: int, rng: np.random.Generator) -> np.ndarray:
    e = rng.standard_normal(n + BURN_IN)
    if phi == 0.0:
        return e[BURN_IN:]
    return lfilter([1.0], [1.0, -phi], e)[BURN_IN:]


def _lm_parts(model: DataModel, n: int, rng: np.random.Generator):
    """Predictors ``(n, 2)`` and noise ``(n,)`` of a linear model."""
    if model.tag == "LM1":
        z = rng.standard_normal(n)
        x2 = math.sqrt(0.5) * z
    else:
        z = rng.standard_normal(n + BURN_IN)
        g = np.empty_like(z)
        s2 = 1.0  # stationary level of the GARCH(1,1) recursion
        g_prev = 0.0
        z_prev = 0.0
        for t in range(z.shape[0]):
            if model.literal_volatility:
                s2 = max(0.5 + 0.2 * z_prev + 0.3 * s2, 0.0)
            elif t > 0:
                s2 = 0.5 + 0.2 * g_prev**2 + 0.3 * s2
            g[t] = math.sqrt(s2) * z[t]
            g_prev = g[t]
            z_prev = z[t]
        x2 = 1.0 + g[BURN_IN:]
    noise = math.sqrt(0.5) * rng.standard_normal(n)
    predictors = np.column_stack([np.ones(n), x2])
    return predictors, noise


def generate(model: DataModel, n: int, change: ChangeSpec | None = None, m: int = 0,
             rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Simulate ``m + n`` observation rows.

    Returns shape ``(m + n, 1)`` for mean models and ``(m + n, 3)`` with
    columns ``(p1, p2, y)`` for linear models.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(rng)
    total = m + n
    start = None if change is None else m + change.k_star - 1  # 0-based index of X_{m+k*}
    if not model.is_lm:
        x = _ar1(AR_COEF[model.tag], total, rng)
        if start is not None and start < total:
            x[start:] += change.delta
        return x[:, None]
    predictors, noise = _lm_parts(model, total, rng)
    beta2 = np.ones(total)
    if start is not None and start < total:
        beta2[start:] += change.delta
    y = predictors[:, 0] + beta2 * predictors[:, 1] + noise
    return np.column_stack([predictors, y])


def _scores(model: DataModel, rows: np.ndarray) -> np.ndarray:
    if model.is_lm:
        return scores_lm(rows[:, :-1], rows[:, -1])
    return rows


@dataclass(frozen=True)
class ExperimentPlan:
    """One simulation configuration.

    ``horizon`` counts monitored observations after the training segment.
    Setting ``closed_end_T`` switches to closed-end monitoring with
    ``horizon = T * m`` and critical values from the finite-horizon limits.
    ``bandwidth`` is ``"weak"``, ``"strong"``, a positive number, or
    ``None`` for the model's default rule.
    """

    model: DataModel
    m: int = 100
    horizon: int = 3000
    gamma: float = 0.0
    alpha: float = 0.05
    detectors: tuple = KINDS
    replications: int = 1000
    seed: int = 0
    change: ChangeSpec | None = None
    bandwidth: object = None
    use_true_lrv: bool = False
    closed_end_T: float | None = None
    epsilon: float = 1e-10
    mc: MCSettings = field(default_factory=MCSettings)

    def __post_init__(self):
        if isinstance(self.model, str):
            object.__setattr__(self, "model", DataModel(self.model))
        object.__setattr__(self, "detectors", parse_detectors(self.detectors))
        if self.closed_end_T is not None:
            if not self.closed_end_T > 0:
                raise ValueError("closed_end_T must be positive")
            object.__setattr__(self, "horizon", math.ceil(self.closed_end_T * self.m))
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.change is not None and self.horizon <= self.change.k_star:
            raise ValueError("horizon must exceed the change offset k_star")
        if self.use_true_lrv and self.model.is_lm:
            raise ValueError("true long-run variance mode is only available for M1-M4")

    @property
    def weight(self) -> WeightFunction:
        t_upper = math.inf if self.closed_end_T is None else float(self.closed_end_T)
        return WeightFunction(gamma=self.gamma, epsilon=self.epsilon, t_upper=t_upper)

    @property
    def lrv_config(self) -> LRVConfig:
        bw = self.bandwidth
        if bw is None:
            bw = self.model.default_bandwidth_rule
        if isinstance(bw, str):
            bw = bandwidth_rule(self.m, bw)
        return LRVConfig(float(bw))

    def limit_spec(self, kind: DetectorKind) -> LimitSpec:
        T = math.inf if self.closed_end_T is None else float(self.closed_end_T)
        return LimitSpec(kind, self.gamma, self.model.dim, T, self.epsilon)

    def critical_values(self, cache: QuantileCache | None = None) -> dict:
        return {k: critical_value(self.limit_spec(k), self.alpha, self.mc, cache) for k in self.detectors}


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    delta: float
    k_star: int | None
    rejections: dict
    replications: int
    degenerate: int = 0

    def power(self, kind) -> float:
        kind = DetectorKind.parse(kind)
        return self.rejections[kind] / self.replications if self.replications else math.nan

    def rows(self) -> list[dict]:
        out = []
        for kind in self.plan.detectors:
            out.append({
                "model": self.plan.model.tag,
                "m": self.plan.m,
                "gamma": self.plan.gamma,
                "detector": kind.value,
                "delta": self.delta,
                "k_star": "" if self.k_star is None else self.k_star,
                "rejections": self.rejections[kind],
                "replications": self.replications,
                "power": f"{self.power(kind):.4f}",
            })
        return out


def replication_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))


def _run(plan: ExperimentPlan, changes: list, cache: QuantileCache | None) -> list[ExperimentResult]:
    crit = plan.critical_values(cache)
    weight = plan.weight
    lrv_cfg = plan.lrv_config
    counts = [{k: 0 for k in plan.detectors} for _ in changes]
    valid = 0
    degenerate = 0
    n_total = plan.m + plan.horizon
    for r in range(plan.replications):
        rows = generate(plan.model, plan.horizon, None, plan.m, replication_rng(plan.seed, r))
        if plan.use_true_lrv:
            norm = invert_to_norm([[true_lrv(plan.model)]])
        else:
            try:
                norm = invert_to_norm(lrv_estimate(_scores(plan.model, rows[: plan.m]), lrv_cfg))
            except NotPositiveDefinite:
                degenerate += 1
                continue
        valid += 1
        for c, change in enumerate(changes):
            data = rows
            if change is not None and change.delta != 0.0:
                data = rows.copy()
                start = plan.m + change.k_star - 1
                if plan.model.is_lm:
                    data[start:, -1] += change.delta * data[start:, 1]
                else:
                    data[start:] += change.delta
            sums = prefix_sums(_scores(plan.model, data[:n_total]))
            first = first_rejections(sums, plan.m, plan.horizon, norm, weight, crit)
            for kind, k in first.items():
                if k is not None:
                    counts[c][kind] += 1
    if degenerate:
        log.warning("%d of %d replications had a degenerate long-run variance estimate",
                    degenerate, plan.replications)
    return [
        ExperimentResult(plan, 0.0 if ch is None else ch.delta, None if ch is None else ch.k_star,
                         counts[c], valid, degenerate)
        for c, ch in enumerate(changes)
    ]


def size_experiment(plan: ExperimentPlan, cache: QuantileCache | None = None) -> ExperimentResult:
    """Rejection frequency of each detector without a change (type I error).

    The long-run variance is re-estimated from every replication's
    training segment unless ``plan.use_true_lrv`` is set. Replications with a
    singular estimate are excluded and counted in ``degenerate``.
    """
    return _run(replace(plan, change=None), [None], cache)[0]


def power_experiment(plan: ExperimentPlan, deltas, k_stars, cache: QuantileCache | None = None
                     ) -> list[ExperimentResult]:
    """Rejection frequencies over a grid of change sizes and positions.

    Every grid point reuses the same simulated noise (common random numbers),
    so ``delta = 0`` reproduces :func:`size_experiment` exactly.
    """
    deltas = [float(d) for d in deltas]
    k_stars = [int(k) for k in k_stars]
    if not deltas or not k_stars:
        raise ValueError("the delta and k_star grids must be non-empty")
    for k in k_stars:
        if k < 1 or k >= plan.horizon:
            raise ValueError(f"k_star={k} must lie in [1, horizon)")
    changes = [ChangeSpec(k, d) for k in k_stars for d in deltas]
    return _run(replace(plan, change=None), changes, cache)


def results_to_csv(results, fh=None) -> str:
    """Write results in long format (one row per detector); returns the text."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for res in results:
        for row in res.rows():
            writer.writerow(row)
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text
