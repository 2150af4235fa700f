import math

import numpy as np
import pytest
from scipy.signal import lfilter

from openend.lrv import LRVConfig, bandwidth_rule, lrv_estimate, qs_kernel, sample_autocov

# 30-digit evaluation of the closed form (mpmath), frozen
QS_ORACLE = {
    0.5: 0.68693073006405945,
    1.0: 0.13786058167459355,
    2.0: -0.0096508008555533069,
    10.0: -0.0021108579925487036,
}


@pytest.mark.parametrize("x", sorted(QS_ORACLE))
def test_qs_kernel_against_high_precision_oracle(x):
    assert qs_kernel(x) == pytest.approx(QS_ORACLE[x], rel=1e-12)


def test_qs_kernel_origin_and_symmetry():
    assert qs_kernel(0.0) == 1.0
    x = np.array([1e-9, 1e-5, 1e-4 * 0.99, 0.3, 1.7])
    assert np.allclose(qs_kernel(x), qs_kernel(-x))
    # continuity across the series switch
    assert abs(qs_kernel(0.99e-4) - qs_kernel(1.01e-4)) < 1e-8


def test_qs_kernel_matches_mpmath():
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 30

    def k(x):
        a = 6 * mp.pi * x / 5
        return 25 / (12 * mp.pi**2 * x**2) * (mp.sin(a) / a - mp.cos(a))

    for x in (0.01, 0.37, 1.0, 3.3):
        assert qs_kernel(x) == pytest.approx(float(k(mp.mpf(x))), rel=1e-10)


def test_sample_autocov_definition():
    z = np.array([1.0, 3.0, 2.0, 6.0])
    c = z - z.mean()
    assert sample_autocov(z, 1)[0, 0] == pytest.approx((c[:-1] * c[1:]).sum() / 4)
    assert sample_autocov(z, 0, center=False)[0, 0] == pytest.approx((z**2).mean())
    with pytest.raises(ValueError):
        sample_autocov(z, 4)


def test_white_noise_lrv_near_one():
    z = np.random.default_rng(11).standard_normal(10_000)
    est = lrv_estimate(z, LRVConfig(bandwidth_rule(10_000, "weak")))
    assert est.shape == (1, 1)
    assert abs(est[0, 0] - 1.0) < 0.1


def test_ar1_lrv_near_analytic_value():
    m = 100_000
    e = np.random.default_rng(12).standard_normal(m + 100)
    x = lfilter([1.0], [1.0, -0.5], e)[100:]
    est = lrv_estimate(x, LRVConfig(bandwidth_rule(m, "strong")))
    assert abs(est[0, 0] - 4.0) < 0.5


def test_tiny_bandwidth_reduces_to_variance():
    z = np.random.default_rng(2).standard_normal((200, 2))
    est = lrv_estimate(z, LRVConfig(1e-6))
    assert np.allclose(est, sample_autocov(z, 0), atol=1e-10)


def test_estimate_is_symmetric_and_uses_all_lags():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((60, 3))
    cfg = LRVConfig(2.0)
    est = lrv_estimate(z, cfg)
    assert np.array_equal(est, est.T)
    manual = sample_autocov(z, 0)
    for h in range(1, 60):
        g = sample_autocov(z, h)
        manual = manual + qs_kernel(h / 2.0) * (g + g.T)
    assert np.allclose(est, manual, atol=1e-12)


def test_centering_toggle():
    z = np.random.default_rng(8).standard_normal(100) + 5.0
    centred = lrv_estimate(z, LRVConfig(2.0))[0, 0]
    raw = lrv_estimate(z, LRVConfig(2.0, center=False))[0, 0]
    assert raw > 10 * centred


def test_bandwidth_rule():
    assert bandwidth_rule(100, "weak") == pytest.approx(2.0)
    assert bandwidth_rule(100, "strong") == pytest.approx(8.0)
    assert bandwidth_rule(200, "strong") == pytest.approx(math.log10(200**4))
    with pytest.raises(ValueError):
        bandwidth_rule(100, "medium")


@pytest.mark.parametrize("bw", [0.0, -1.0, math.inf, math.nan])
def test_config_rejects_bad_bandwidth(bw):
    with pytest.raises(ValueError):
        LRVConfig(bw)
