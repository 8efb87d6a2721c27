"""BT.601 RGB <-> YCbCr on 8-bit-range float planes.

``full_range=True`` is the JPEG/OpenCV convention (Y spans 0..255).
``full_range=False`` is the studio-swing convention of MATLAB's
``rgb2ycbcr`` (Y spans 16..235), which is what published SR benchmark
numbers are measured on.
"""

from __future__ import annotations

import numpy as np

_FULL = np.array([
    [0.299, 0.587, 0.114],
    [-0.168735892, -0.331264108, 0.5],
    [0.5, -0.418687589, -0.081312411],
])
_STUDIO = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
]) / 255.0
_OFFSET_FULL = np.array([0.0, 128.0, 128.0])
_OFFSET_STUDIO = np.array([16.0, 128.0, 128.0])


def _coeffs(full_range: bool):
    return (_FULL, _OFFSET_FULL) if full_range else (_STUDIO, _OFFSET_STUDIO)


def rgb_to_ycbcr(rgb: np.ndarray, full_range: bool = True):
    """Return (y, cb, cr) float64 planes from an (H, W, 3) RGB image in 0..255."""
    m, off = _coeffs(full_range)
    x = np.asarray(rgb, dtype=np.float64)
    out = x @ m.T + off
    return out[..., 0], out[..., 1], out[..., 2]


def ycbcr_to_rgb(y, cb, cr, full_range: bool = True) -> np.ndarray:
    """Inverse of ``rgb_to_ycbcr``; returns unclamped float64 (H, W, 3)."""
    m, off = _coeffs(full_range)
    ycc = np.stack([y, cb, cr], axis=-1).astype(np.float64) - off
    return ycc @ np.linalg.inv(m).T


def luma(img: np.ndarray, full_range: bool = True) -> np.ndarray:
    """Y plane of an RGB image; single-channel images are returned as float unchanged."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    return rgb_to_ycbcr(img[..., :3], full_range)[0]
