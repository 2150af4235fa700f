"""Long-run variance estimation with the quadratic spectral kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LRVConfig:
    bandwidth: float
    center: bool = True

    def __post_init__(self):
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth}")


def qs_kernel(x):
    """Quadratic spectral kernel, ``k(0) = 1``.

    ``k(x) = 25 / (12 pi^2 x^2) * (sin(6 pi x / 5) / (6 pi x / 5) - cos(6 pi x / 5))``
    """
    x = np.asarray(x, dtype=float)
    a = 1.2 * np.pi * x
    with np.errstate(divide="ignore", invalid="ignore"):
        k = 25.0 / (12.0 * np.pi**2 * x**2) * (np.sin(a) / a - np.cos(a))
    # series around 0 avoids cancellation for tiny |x|
    small = np.abs(x) < 1e-4
    k = np.where(small, 1.0 - 0.1 * a**2, k)
    if k.ndim == 0:
        return float(k)
    return k


def _as_matrix(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2:
        raise ValueError(f"expected an (m, p) array, got shape {data.shape}")
    return data


def sample_autocov(data, lag: int, center: bool = True) -> np.ndarray:
    """``(1/m) sum_{t=1}^{m-h} (Z_t - Zbar)(Z_{t+h} - Zbar)'``."""
    z = _as_matrix(data)
    m = z.shape[0]
    if not 0 <= lag < m:
        raise ValueError(f"lag must satisfy 0 <= lag < {m}, got {lag}")
    if center:
        z = z - z.mean(axis=0)
    return z[: m - lag].T @ z[lag:] / m


def lrv_estimate(data, cfg: LRVConfig) -> np.ndarray:
    """Quadratic spectral estimate of the long-run variance matrix.

    ``Gamma(0) + sum_{h=1}^{m-1} k(h / bandwidth) (Gamma(h) + Gamma(h)')``
    over all available lags, symmetrised. Only the rows passed in are used;
    pass the training segment.
    """
    z = _as_matrix(data)
    m = z.shape[0]
    if m < 2:
        raise ValueError("need at least two observations to estimate a long-run variance")
    if cfg.center:
        z = z - z.mean(axis=0)
    sigma = z.T @ z / m
    weights = qs_kernel(np.arange(1, m) / cfg.bandwidth)
    for h, wh in enumerate(weights, start=1):
        gamma_h = z[: m - h].T @ z[h:] / m
        sigma += wh * (gamma_h + gamma_h.T)
    return 0.5 * (sigma + sigma.T)


def bandwidth_rule(m: int, strength: str = "weak") -> float:
    """``log10(m)`` for weakly dependent data, ``log10(m^4)`` for strong dependence."""
    if m < 2:
        raise ValueError("m must be at least 2")
    if strength == "weak":
        return math.log10(m)
    if strength == "strong":
        return 4.0 * math.log10(m)
    raise ValueError(f"unknown bandwidth rule {strength!r}; expected 'weak' or 'strong'")
