"""l1, PSNR and SSIM for velocity images (m/s).

3D volumes are scored one depth slice at a time and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

DEFAULT_PEAK = 2500.0  # 4500 - 2000 m/s
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    l1: float
    psnr: float
    ssim: float


def _pair(pred, label):
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ShapeError(f"prediction {pred.shape} and label {label.shape} differ in shape")
    return pred, label


def l1(pred, label):
    pred, label = _pair(pred, label)
    return float(np.mean(np.abs(pred - label)))


def psnr(pred, label, peak=DEFAULT_PEAK):
    """``10 log10(peak^2 / MSE)``; +inf when the images are identical."""
    if peak <= 0:
        raise ParameterError("peak must be positive")
    pred, label = _pair(pred, label)
    mse = float(np.mean((pred - label) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable 'valid' correlation with the 1D kernel ``g`` on both axes."""
    k = len(g)
    h, w = img.shape
    rows = sum(g[i] * img[i:h - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j:w - k + 1 + j] for j in range(k))


def ssim_map(x, y, peak=DEFAULT_PEAK):
    x, y = _pair(x, y)
    if x.ndim != 2:
        raise ShapeError("ssim_map takes 2D images")
    if min(x.shape) < SSIM_WINDOW:
        raise ParameterError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    g = gaussian_window()
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x * mu_x
    syy = _filter_valid(y * y, g) - mu_y * mu_y
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim(x, y, peak=DEFAULT_PEAK):
    x, y = _pair(x, y)
    if peak <= 0:
        raise ParameterError("peak must be positive")
    if x.ndim == 3:
        return float(np.mean([ssim(x[k], y[k], peak) for k in range(x.shape[0])]))
    return float(np.mean(ssim_map(x, y, peak)))


def _sliced(fn, pred, label, peak):
    if pred.ndim == 3:
        return float(np.mean([fn(pred[k], label[k], peak) for k in range(pred.shape[0])]))
    return fn(pred, label, peak)


def evaluate(pred_set, label_set, peak=DEFAULT_PEAK) -> MetricReport:
    """Mean of per-sample metrics over paired collections.

    SSIM is reported as NaN for blocks smaller than the window, where it is undefined.
    """
    pred_set, label_set = list(pred_set), list(label_set)
    if len(pred_set) != len(label_set) or not pred_set:
        raise ShapeError("prediction and label sets must be non-empty and of equal size")
    rows = []
    for p, t in zip(pred_set, label_set):
        p, t = _pair(p, t)
        s = ssim(p, t, peak) if min(p.shape[-2:]) >= SSIM_WINDOW else math.nan
        rows.append((l1(p, t), _sliced(psnr, p, t, peak), s))
    arr = np.array(rows)
    return MetricReport(float(arr[:, 0].mean()), float(arr[:, 1].mean()), float(arr[:, 2].mean()))
