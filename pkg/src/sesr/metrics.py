"""Border-cropped PSNR and SSIM on 8-bit-range planes."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigError, ShapeError

PSNR_IDENTICAL = math.inf


def _crop_pair(a, b, border_crop: int):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"metric planes must be matching 2-D arrays, got {a.shape} and {b.shape}")
    c = int(border_crop)
    if c < 0:
        raise ConfigError("border_crop must be non-negative")
    if c:
        a, b = a[c:-c, c:-c], b[c:-c, c:-c]
    if a.size == 0:
        raise ConfigError(f"border crop {c} leaves an empty region")
    return a, b


def psnr(a, b, border_crop: int = 0, peak: float = 255.0) -> float:
    a, b = _crop_pair(a, b, border_crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_IDENTICAL
    return 10 * math.log10(peak ** 2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, border_crop: int = 0, peak: float = 255.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM (Gaussian window, statistics over valid positions only)."""
    a, b = _crop_pair(a, b, border_crop)
    if min(a.shape) < window:
        raise ConfigError(f"plane {a.shape} is smaller than the {window}x{window} SSIM window")
    if np.array_equal(a, b):
        return 1.0
    w = gaussian_window(window, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2

    def filt(x):
        return convolve2d(x, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
