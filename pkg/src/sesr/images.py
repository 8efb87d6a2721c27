"""Image file I/O (PNG, PPM/PGM and whatever else Pillow reads)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff"}


def read_image(path) -> np.ndarray:
    """Return uint8 (H, W) for grayscale files, (H, W, 3) otherwise."""
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8).copy()
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return np.clip(np.round(arr / 257.0), 0, 255).astype(np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x), 0, 255).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write a uint8 (or float in 0..255, rounded and clamped) image."""
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def list_images(directory) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
