"""Critical values from the limit distributions of the three detectors.

With ``W`` a ``p``-dimensional Brownian motion and ``d(t) = max{t^gamma, eps}``,

* ``L1 = sup_t max_{s<=t} |W(t) - W(s)| / d(t)``                    (detector E)
* ``L2 = sup_t |W(t)| / d(t)``                                      (detector Q)
* ``L3 = sup_t max_{s<=t} |W(t) - (1-t)/(1-s) W(s)| / d(t)``        (detector P)

where ``t`` ranges over ``[0, 1)`` for open-end monitoring and over
``[0, T/(T+1)]`` for a closed-end horizon of ``T * m`` observations.

Suprema are taken over the nodes ``t_j = j * t_max / grid``, ``j = 0..grid``.
For the open-end ``L3`` the node ``t = 1`` is skipped because the
functional is undefined there.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit
from scipy.optimize import bisect
from scipy.special import ndtr

from .core import DEFAULT_EPSILON, DetectorKind

_KIND_CODE = {DetectorKind.E: 1, DetectorKind.Q: 2, DetectorKind.P: 3}


@dataclass(frozen=True)
class LimitSpec:
    """Identifies one limit law ``L_{i,gamma}(T)``; ``T=inf`` is open-end."""

    kind: DetectorKind
    gamma: float = 0.0
    p: int = 1
    T: float = math.inf
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "kind", DetectorKind.parse(self.kind))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "T", float(self.T))
        if not 0.0 <= self.gamma < 0.5:
            raise ValueError(f"gamma must lie in [0, 0.5), got {self.gamma}")
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"dimension p must be a positive integer, got {self.p}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def open_end(self) -> bool:
        return math.isinf(self.T)

    @property
    def t_max(self) -> float:
        return 1.0 if self.open_end else self.T / (self.T + 1.0)

    @property
    def has_exact_cdf(self) -> bool:
        return self.kind is DetectorKind.E and self.gamma == 0.0 and self.p == 1


@dataclass(frozen=True)
class MCSettings:
    runs: int = 10000
    grid: int = 5000
    seed: int = 20200326

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.grid < 2:
            raise ValueError("grid must be at least 2")


# --------------------------------------------------------------------------
# path functionals


@njit(cache=True)
def _denominators(grid, h, gamma, eps):
    d = np.empty(grid + 1)
    for j in range(grid + 1):
        t = j * h
        v = t**gamma if gamma > 0.0 else 1.0
        d[j] = v if v > eps else eps
    return d


@njit(cache=True)
def _sup_p1(w, h, denom, kind, last):
    # w: (grid+1,) path with w[0] = 0; nodes 0..last are evaluated
    best = 0.0
    if kind == 2:
        for j in range(last + 1):
            v = abs(w[j]) / denom[j]
            if v > best:
                best = v
        return best
    lo = 0.0
    hi = 0.0
    for j in range(last + 1):
        if kind == 1:
            x = w[j]
            scale = 1.0
        else:
            scale = 1.0 - j * h
            x = w[j] / scale
        if x < lo:
            lo = x
        if x > hi:
            hi = x
        v = scale * max(x - lo, hi - x) / denom[j]
        if v > best:
            best = v
    return best


@njit(cache=True)
def _sup_brute(w, h, denom, kind, last):
    # w: (grid+1, p); exhaustive inner maximum
    p = w.shape[1]
    best = 0.0
    for j in range(last + 1):
        if kind == 2:
            acc = 0.0
            for c in range(p):
                acc += w[j, c] * w[j, c]
            v = math.sqrt(acc) / denom[j]
            if v > best:
                best = v
            continue
        t = j * h
        inner = 0.0
        for i in range(j + 1):
            if kind == 1:
                f = 1.0
            else:
                f = (1.0 - t) / (1.0 - i * h)
            acc = 0.0
            for c in range(p):
                d = w[j, c] - f * w[i, c]
                acc += d * d
            if acc > inner:
                inner = acc
        v = math.sqrt(inner) / denom[j]
        if v > best:
            best = v
    return best


@njit(cache=True)
def _hull_insert(hx, hy, nh, x, y, bx, by):
    """Insert (x, y) into the CCW convex polygon hx/hy[:nh]; returns new size."""
    if nh >= 3:
        inside = True
        for i in range(nh):
            i2 = i + 1 if i + 1 < nh else 0
            cross = (hx[i2] - hx[i]) * (y - hy[i]) - (hy[i2] - hy[i]) * (x - hx[i])
            if cross < 0.0:
                inside = False
                break
        if inside:
            return nh
    n = nh + 1
    for i in range(nh):
        bx[i] = hx[i]
        by[i] = hy[i]
    bx[nh] = x
    by[nh] = y
    # insertion sort by (x, y)
    for i in range(1, n):
        cx = bx[i]
        cy = by[i]
        k = i - 1
        while k >= 0 and (bx[k] > cx or (bx[k] == cx and by[k] > cy)):
            bx[k + 1] = bx[k]
            by[k + 1] = by[k]
            k -= 1
        bx[k + 1] = cx
        by[k + 1] = cy
    if n == 1:
        hx[0] = bx[0]
        hy[0] = by[0]
        return 1
    # Andrew's monotone chain, collinear points dropped
    size = 0
    for i in range(n):
        while size >= 2 and (
            (hx[size - 1] - hx[size - 2]) * (by[i] - hy[size - 2])
            - (hy[size - 1] - hy[size - 2]) * (bx[i] - hx[size - 2])
        ) <= 0.0:
            size -= 1
        hx[size] = bx[i]
        hy[size] = by[i]
        size += 1
    lower = size + 1
    for i in range(n - 2, -1, -1):
        while size >= lower and (
            (hx[size - 1] - hx[size - 2]) * (by[i] - hy[size - 2])
            - (hy[size - 1] - hy[size - 2]) * (bx[i] - hx[size - 2])
        ) <= 0.0:
            size -= 1
        hx[size] = bx[i]
        hy[size] = by[i]
        size += 1
    size -= 1
    if size < 1:
        size = 1
    return size


@njit(cache=True)
def _sup_p2_hull(w, h, denom, kind, last):
    # farthest point from the query among the prefix set is a hull vertex
    best = 0.0
    cap = last + 2
    hx = np.empty(cap)
    hy = np.empty(cap)
    bx = np.empty(cap)
    by = np.empty(cap)
    nh = 0
    for j in range(last + 1):
        if kind == 1:
            scale = 1.0
        else:
            scale = 1.0 - j * h
        qx = w[j, 0] / scale
        qy = w[j, 1] / scale
        nh = _hull_insert(hx, hy, nh, qx, qy, bx, by)
        far = 0.0
        for i in range(nh):
            dx = qx - hx[i]
            dy = qy - hy[i]
            d2 = dx * dx + dy * dy
            if d2 > far:
                far = d2
        v = scale * math.sqrt(far) / denom[j]
        if v > best:
            best = v
    return best


def _path(increments: np.ndarray, h: float) -> np.ndarray:
    w = np.zeros((increments.shape[0] + 1, increments.shape[1]))
    np.cumsum(increments * math.sqrt(h), axis=0, out=w[1:])
    return w


def path_increments(mc: MCSettings, index: int, p: int) -> np.ndarray:
    """Standard normal increments of path ``index``; one substream per path."""
    rng = np.random.default_rng(np.random.SeedSequence(mc.seed, spawn_key=(index,)))
    return rng.standard_normal((mc.grid, p))


def _evaluator(spec: LimitSpec, grid: int, p: int, method: str):
    h = spec.t_max / grid
    denom = _denominators(grid, h, spec.gamma, spec.epsilon)
    kind = _KIND_CODE[spec.kind]
    last = grid - 1 if (kind == 3 and spec.open_end) else grid
    if method not in ("auto", "fast", "brute"):
        raise ValueError(f"unknown method {method!r}")
    if method == "brute" or (method == "auto" and p > 2) or kind == 2:
        return lambda w: _sup_brute(w, h, denom, kind, last)
    if p == 1:
        return lambda w: _sup_p1(w[:, 0].copy(), h, denom, kind, last)
    if p == 2:
        return lambda w: _sup_p2_hull(w, h, denom, kind, last)
    raise ValueError("fast evaluation is only available for p <= 2")


def path_functional(spec: LimitSpec, w: np.ndarray, method: str = "auto") -> float:
    """Evaluate the limit functional of ``spec`` on one discretised path.

    ``w`` has shape ``(grid + 1, p)`` with ``w[0] = 0`` and node spacing
    ``spec.t_max / grid``. ``method`` is ``"auto"``, ``"fast"`` (running
    extremes for ``p=1``, convex hull for ``p=2``) or ``"brute"``.
    """
    w = np.ascontiguousarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    return _evaluator(spec, w.shape[0] - 1, w.shape[1], method)(w)


def simulate_limit(spec: LimitSpec, mc: MCSettings = MCSettings(), method: str = "auto") -> np.ndarray:
    """Sorted Monte Carlo sample of size ``mc.runs`` from the limit law ``spec``.

    Each path uses its own random substream derived from ``(mc.seed, index)``,
    so the sample does not depend on how paths are batched.
    """
    return _simulate_cached(spec, mc, method).copy()


@lru_cache(maxsize=64)
def _simulate_cached(spec: LimitSpec, mc: MCSettings, method: str) -> np.ndarray:
    h = spec.t_max / mc.grid
    evaluate = _evaluator(spec, mc.grid, spec.p, method)
    out = np.empty(mc.runs)
    for i in range(mc.runs):
        out[i] = evaluate(_path(path_increments(mc, i, spec.p), h))
    out.sort()
    out.setflags(write=False)
    return out


def empirical_quantile(sample: np.ndarray, alpha: float) -> float:
    """Order statistic ``ceil((1 - alpha) * n)`` (1-indexed) of a sorted sample."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = len(sample)
    # guard against (1 - alpha) * n landing a hair above an integer
    idx = math.ceil((1.0 - alpha) * n - 1e-9)
    idx = min(max(idx, 1), n)
    return float(sample[idx - 1])


# --------------------------------------------------------------------------
# exact law of the range


def borodin_cdf(x: float, T: float = math.inf, terms: int = 1000) -> float:
    """Distribution function of ``L_{1,0}`` for ``p = 1`` (range of Brownian motion).

    ``F(x) = 1 + 8 sum_{k>=1} (-1)^k k (1 - Phi(k x / sqrt(q)))`` with
    ``q = T/(T+1)`` for a closed-end horizon and ``q = 1`` open-end.
    """
    if not x > 0:
        raise ValueError(f"x must be positive, got {x}")
    q = 1.0 if math.isinf(T) else T / (T + 1.0)
    y = x / math.sqrt(q)
    total = 0.0
    for k in range(1, terms + 1):
        term = 8.0 * k * float(ndtr(-k * y))
        total += -term if k % 2 else term
        if term < 1e-14:
            break
    return min(1.0, max(0.0, 1.0 + total))


def borodin_quantile(prob: float, T: float = math.inf) -> float:
    if not 0 < prob < 1:
        raise ValueError("prob must lie in (0, 1)")
    return bisect(lambda x: borodin_cdf(x, T) - prob, 0.2, 20.0, xtol=1e-9)


# --------------------------------------------------------------------------
# critical values and cache


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def cache_key(spec: LimitSpec, alpha: float, mc: MCSettings) -> str:
    """``kind/gamma/p/T/alpha/runs/grid/seed/epsilon``."""
    return "/".join([
        spec.kind.value, _fmt(spec.gamma), str(int(spec.p)), _fmt(spec.T), _fmt(alpha),
        str(mc.runs), str(mc.grid), str(mc.seed), _fmt(spec.epsilon),
    ])


class QuantileCache:
    """Critical values keyed by :func:`cache_key`, optionally persisted as JSON.

    The file holds one flat JSON object ``{key: value}``. Missing or
    unreadable files start an empty cache.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._values: dict[str, float] = {}
        if self.path is not None and self.path.exists():
            try:
                self._values = {str(k): float(v) for k, v in json.loads(self.path.read_text()).items()}
            except (OSError, ValueError):
                self._values = {}

    def __contains__(self, key: str) -> bool:
        return key in self._values

    def __len__(self) -> int:
        return len(self._values)

    def get(self, key: str):
        return self._values.get(key)

    def put(self, key: str, value: float) -> None:
        with self._lock:
            self._values[key] = float(value)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                tmp = self.path.with_suffix(self.path.suffix + ".tmp")
                tmp.write_text(json.dumps(self._values, indent=1, sort_keys=True))
                tmp.replace(self.path)


def critical_value(
    spec: LimitSpec,
    alpha: float,
    mc: MCSettings = MCSettings(),
    cache: QuantileCache | None = None,
) -> float:
    """The ``(1 - alpha)``-quantile of the limit law ``spec``.

    Uses the exact range distribution when available (``E``, ``gamma=0``,
    ``p=1``) and the Monte Carlo order statistic otherwise.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    key = cache_key(spec, alpha, mc)
    if cache is not None and key in cache:
        return cache.get(key)
    if spec.has_exact_cdf:
        value = borodin_quantile(1.0 - alpha, spec.T)
    else:
        value = empirical_quantile(_simulate_cached(spec, mc, "auto"), alpha)
    if cache is not None:
        cache.put(key, value)
    return value


def is_exact(spec: LimitSpec) -> bool:
    return spec.has_exact_cdf
