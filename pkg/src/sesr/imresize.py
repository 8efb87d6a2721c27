"""MATLAB-compatible ``imresize`` for 2-D float planes.

Separable resampling with a cubic convolution kernel (a = -0.5) or a
triangle kernel. When shrinking with ``antialias=True`` the kernel is
stretched by 1/scale, which is what MATLAB does and what published
bicubic baselines use. Out-of-range taps are mirrored (symmetric padding).
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .errors import ConfigError

SUPPORTED_SCALES = (Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(2), Fraction(4))


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax ** 2, ax ** 3
    near = ((a + 2) * ax3 - (a + 3) * ax2 + 1) * (ax <= 1)
    far = (a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a) * ((ax > 1) & (ax < 2))
    return near + far


def triangle(x: np.ndarray) -> np.ndarray:
    return np.maximum(1 - np.abs(x), 0.0)


KERNELS = {"bicubic": (cubic, 4.0), "bilinear": (triangle, 2.0)}


def resize_matrix(in_len: int, out_len: int, scale: float, kernel: str = "bicubic",
                  antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) interpolation matrix for one axis."""
    fn, width = KERNELS[kernel]
    if scale < 1 and antialias:
        def h(x):
            return scale * fn(scale * x)
        width = width / scale
    else:
        h = fn
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = h(u[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    idx = mirror[np.mod(idx - 1, 2 * in_len).astype(np.int64)]
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, idx.ravel()), weights.ravel())
    return mat


def _as_fraction(scale) -> Fraction:
    return scale if isinstance(scale, Fraction) else Fraction(scale).limit_denominator(64)


def imresize(plane: np.ndarray, scale, kernel: str = "bicubic", antialias: bool = True,
             output_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Resize a 2-D plane by ``scale`` (one of 1/4, 1/2, 1, 2, 4).

    Output size is ``ceil(scale * size)`` per axis unless ``output_shape`` is
    given. Values are not clamped or rounded.
    """
    frac = _as_fraction(scale)
    if frac not in SUPPORTED_SCALES:
        raise ConfigError(f"unsupported scale {scale}; expected one of 1/4, 1/2, 1, 2, 4")
    if kernel not in KERNELS:
        raise ConfigError(f"unknown kernel {kernel!r}")
    img = np.asarray(plane, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigError(f"imresize expects a 2-D plane, got shape {img.shape}")
    s = float(frac)
    if output_shape is None:
        output_shape = (math.ceil(img.shape[0] * s), math.ceil(img.shape[1] * s))
    if min(output_shape) < 1:
        raise ConfigError(f"resized plane would be empty: {output_shape}")
    if frac == 1 and tuple(output_shape) == img.shape:
        return img.copy()
    rows = resize_matrix(img.shape[0], output_shape[0], s, kernel, antialias)
    cols = resize_matrix(img.shape[1], output_shape[1], s, kernel, antialias)
    return rows @ img @ cols.T


def modcrop(plane: np.ndarray, multiple: int) -> np.ndarray:
    """Center-crop so both spatial dims are divisible by ``multiple``."""
    h, w = plane.shape[:2]
    nh, nw = h - h % multiple, w - w % multiple
    top, left = (h - nh) // 2, (w - nw) // 2
    return plane[top:top + nh, left:left + nw]
