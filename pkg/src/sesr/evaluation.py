"""Dataset sweeps: degrade HR images, upscale them, score the Y channel.

Per image: Y extraction, crop to a multiple of the scale, antialiased bicubic
downscale by 1/scale, upscale by the chosen method, clamp to [0, 255], then
PSNR/SSIM with ``border_crop`` pixels (default: the scale) ignored on each side.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .color import luma, rgb_to_ycbcr, ycbcr_to_rgb
from .errors import ConfigError, ShapeError
from .images import list_images, read_image, to_uint8
from .imresize import imresize, modcrop
from .metrics import psnr, ssim
from .model import SESRModel, forward_pyramid

log = logging.getLogger(__name__)

METHODS = ("bicubic", "sesr", "identity")
INF_SENTINEL = "inf"


@dataclass
class ImageResult:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class EvalReport:
    dataset: str
    scale: int
    method: str
    border_crop: int
    images: list[ImageResult] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    wall_seconds: float = 0.0

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.images])) if self.images else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.images])) if self.images else math.nan

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aggregates"] = {"mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim,
                           "n_images": len(self.images), "n_skipped": len(self.skipped)}
        return _encode_inf(d)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = _decode_inf(d)
        images = [ImageResult(**r) for r in d["images"]]
        return cls(d["dataset"], d["scale"], d["method"], d["border_crop"], images, list(d["skipped"]),
                   dict(d["settings"]), d.get("wall_seconds", 0.0))

    def table(self, per_image: bool = True) -> str:
        """Aligned text in the row format ``Dataset  Scale  Method  PSNR/SSIM``."""
        rows = [("Dataset", "Scale", "Method", "PSNR/SSIM")]
        if per_image:
            rows += [(r.name, f"x{self.scale}", self.method, _fmt(r.psnr_db, r.ssim)) for r in self.images]
        rows.append((self.dataset, f"x{self.scale}", self.method, _fmt(self.mean_psnr, self.mean_ssim)))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        if per_image and self.images:
            lines.insert(len(lines) - 1, "-" * len(lines[0]))
        if self.skipped:
            lines.append(f"skipped {len(self.skipped)} unreadable: {', '.join(self.skipped)}")
        return "\n".join(lines)


def _fmt(p, s):
    ps = "inf" if math.isinf(p) else f"{p:.2f}"
    return f"{ps}/{s:.3f}"


def _encode_inf(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return INF_SENTINEL if obj > 0 else "-" + INF_SENTINEL
    if isinstance(obj, dict):
        return {k: _encode_inf(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode_inf(v) for v in obj]
    return obj


def _decode_inf(obj):
    if obj == INF_SENTINEL:
        return math.inf
    if obj == "-" + INF_SENTINEL:
        return -math.inf
    if isinstance(obj, dict):
        return {k: _decode_inf(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_inf(v) for v in obj]
    return obj


# ------------------------------------------------------------- upscaling

def model_upscale(model: SESRModel, y: np.ndarray, scale: int) -> np.ndarray:
    """Run a Y plane in 0..255 through the pyramid; returns the unclamped 0..255 plane."""
    if scale not in (2, 4):
        raise ConfigError(f"the model upsamples by 2 or 4, not {scale}")
    x = (np.asarray(y, dtype=np.float64) / 255.0)[None, None]
    out = forward_pyramid(model, x, max_scale=scale)[f"sr{scale}"]
    return out[0, 0].astype(np.float64) * 255.0


def upscale(method: str, lr_y: np.ndarray, scale: int, model: SESRModel | None = None) -> np.ndarray:
    if method == "bicubic":
        return imresize(lr_y, scale)
    if method == "identity":
        return np.asarray(lr_y, dtype=np.float64).copy()
    if method == "sesr":
        if model is None:
            raise ConfigError("method 'sesr' needs a model")
        return model_upscale(model, lr_y, scale)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def degrade(hr_y: np.ndarray, scale: int, antialias: bool = True, quantize: bool = False) -> np.ndarray:
    lr = imresize(hr_y, 1 / scale if scale != 1 else 1, antialias=antialias)
    return np.clip(np.round(lr), 0, 255) if quantize else lr


def _check_scale(method, scale):
    if method == "identity" and scale != 1:
        raise ConfigError("method 'identity' is only defined at scale 1")
    if method != "identity" and scale not in (2, 4):
        raise ConfigError(f"scale must be 2 or 4, got {scale}")


def evaluate_image(hr, name: str, method: str, scale: int, model: SESRModel | None = None,
                   border_crop: int | None = None, full_range: bool = False, antialias: bool = True,
                   quantize: bool = False) -> ImageResult:
    _check_scale(method, scale)
    crop = scale if border_crop is None else border_crop
    y = modcrop(luma(hr, full_range), scale)
    lr = degrade(y, scale, antialias, quantize)
    sr = np.clip(upscale(method, lr, scale, model), 0, 255)
    if quantize:
        sr = np.round(sr)
    if sr.shape != y.shape:
        raise ShapeError(f"{name}: upscaled plane {sr.shape} does not match reference {y.shape}")
    return ImageResult(name, psnr(sr, y, crop), ssim(sr, y, crop))


def evaluate_dataset(method: str, dataset_dir, scale: int, model: SESRModel | None = None,
                     border_crop: int | None = None, full_range: bool = False, antialias: bool = True,
                     quantize: bool = False, threads: int | None = None, limit: int | None = None,
                     name: str | None = None) -> EvalReport:
    """Score every image in ``dataset_dir``; unreadable files are skipped and listed.

    ``full_range=False`` extracts Y with the studio-swing BT.601 transform used
    by the standard SR benchmark scripts; pass True for the full-range variant.
    """
    _check_scale(method, scale)
    d = Path(dataset_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {d}")
    paths = list_images(d)[:limit]
    crop = scale if border_crop is None else border_crop
    t0 = time.perf_counter()

    def one(path):
        try:
            img = read_image(path)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            return path.name, None
        return path.name, evaluate_image(img, path.stem, method, scale, model, crop, full_range,
                                         antialias, quantize)

    workers = threads or os.cpu_count() or 1
    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, paths))
    else:
        results = [one(p) for p in paths]
    results.sort(key=lambda r: r[0])
    report = EvalReport(
        dataset=name or d.name, scale=scale, method=method, border_crop=crop,
        images=[r for _, r in results if r is not None],
        skipped=[n for n, r in results if r is None],
        settings={"full_range": full_range, "antialias": antialias, "quantize": quantize,
                  "border_crop": crop},
    )
    report.wall_seconds = round(time.perf_counter() - t0, 4)
    return report


# ---------------------------------------------------------- single image

def super_resolve(model: SESRModel, img: np.ndarray, scale: int, quantize: bool = True) -> np.ndarray:
    """Upscale an image by 2 or 4: Y through the model, chroma by bicubic.

    Color uses the full-range transform so the round trip is lossless apart
    from the super-resolved luma. Returns uint8 when ``quantize``, else the
    clamped float result.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        out = np.clip(model_upscale(model, img, scale), 0, 255)
    else:
        y, cb, cr = rgb_to_ycbcr(img[..., :3], full_range=True)
        y_sr = model_upscale(model, y, scale)
        out = np.clip(ycbcr_to_rgb(y_sr, imresize(cb, scale), imresize(cr, scale), full_range=True), 0, 255)
    return to_uint8(out) if quantize else out
