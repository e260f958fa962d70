import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sesdi import metrics
from sesdi.errors import ParameterError, ShapeError

PEAK = 2500.0


def reference_ssim(x, y, peak=PEAK):
    """Window-by-window SSIM with an explicit 2D Gaussian; no separable filtering."""
    r = np.arange(11) - 5.0
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * 1.5**2))
    w /= w.sum()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            a, b = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            ma, mb = (w * a).sum(), (w * b).sum()
            va = (w * (a - ma) ** 2).sum()
            vb = (w * (b - mb) ** 2).sum()
            cov = (w * (a - ma) * (b - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def reference_psnr(x, y, peak=PEAK):
    mse = sum((a - b) ** 2 for a, b in zip(x.ravel().tolist(), y.ravel().tolist())) / x.size
    return 10 * math.log10(peak**2 / mse)


def random_pair(rng):
    shape = (int(rng.integers(11, 20)), int(rng.integers(11, 24)))
    x = rng.uniform(2000, 4500, size=shape)
    y = np.clip(x + rng.normal(0, rng.uniform(1, 800), size=shape), 2000, 4500)
    return x, y


def test_ssim_psnr_match_reference_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, y = random_pair(rng)
        assert metrics.ssim(x, y) == pytest.approx(reference_ssim(x, y), abs=1e-9)
        assert metrics.psnr(x, y) == pytest.approx(reference_psnr(x, y), abs=1e-9)


def test_ssim_of_identical_images_is_one():
    x = np.random.default_rng(1).uniform(2000, 4500, size=(20, 30))
    assert metrics.ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_psnr_zero_db_at_peak_mse():
    x = np.full((5, 5), 2000.0)
    assert metrics.psnr(x + PEAK, x) == 0.0


def test_psnr_halving_error_adds_6db():
    rng = np.random.default_rng(2)
    x = rng.uniform(2000, 4500, size=(12, 12))
    e = rng.normal(0, 100, size=x.shape)
    assert metrics.psnr(x + e / 2, x) - metrics.psnr(x + e, x) == pytest.approx(20 * math.log10(2), abs=1e-9)
    assert 20 * math.log10(2) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_identical_is_infinite():
    x = np.ones((3, 3))
    assert metrics.psnr(x, x) == math.inf


@settings(max_examples=40, deadline=None)
@given(a=st.floats(2000, 4500), b=st.floats(2000, 4500))
def test_ssim_constant_fields_closed_form(a, b):
    c1 = (0.01 * PEAK) ** 2
    x, y = np.full((13, 13), a), np.full((13, 13), b)
    assert metrics.ssim(x, y) == pytest.approx((2 * a * b + c1) / (a * a + b * b + c1), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ssim_symmetric_and_bounded(seed):
    x, y = random_pair(np.random.default_rng(seed))
    s = metrics.ssim(x, y)
    assert s == pytest.approx(metrics.ssim(y, x), abs=1e-12)
    assert -1.0 <= s <= 1.0


def test_l1_examples():
    x = np.full((4, 4), 3000.0)
    assert metrics.l1(x, x) == 0.0
    assert metrics.l1(x + 100, x) == 100.0


def test_3d_volumes_scored_per_slice():
    rng = np.random.default_rng(3)
    x = rng.uniform(2000, 4500, size=(3, 12, 14))
    y = x + rng.normal(0, 200, size=x.shape)
    assert metrics.ssim(x, y) == pytest.approx(np.mean([reference_ssim(x[k], y[k]) for k in range(3)]), abs=1e-9)
    rep = metrics.evaluate([x], [y])
    assert rep.psnr == pytest.approx(np.mean([reference_psnr(x[k], y[k]) for k in range(3)]), abs=1e-9)


def test_evaluate_averages_per_sample():
    rng = np.random.default_rng(4)
    pairs = [random_pair(rng) for _ in range(3)]
    pairs = [(x[:11, :11], y[:11, :11]) for x, y in pairs]
    rep = metrics.evaluate([p for p, _ in pairs], [t for _, t in pairs])
    assert rep.l1 == pytest.approx(np.mean([metrics.l1(p, t) for p, t in pairs]))
    assert rep.ssim == pytest.approx(np.mean([metrics.ssim(p, t) for p, t in pairs]))


def test_shape_and_size_errors():
    with pytest.raises(ShapeError):
        metrics.l1(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ParameterError):
        metrics.ssim(np.ones((5, 5)), np.ones((5, 5)))
    with pytest.raises(ShapeError):
        metrics.evaluate([], [])
