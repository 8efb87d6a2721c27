"""Composite layers: SE module, SE residual block, recursive unit, branch head.

Parameters are passed as flat dicts with local dotted names
(``conv1.weight``, ``se.down.bias`` ...). Every forward returns
``(output, cache)``; the matching backward takes the upstream gradient and
the cache and returns ``(d_input, grads)`` where ``grads`` uses the same
local names as the parameter dict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import ConvSpec

BLOCK_KINDS = ("se", "plain")


@dataclass(frozen=True)
class BlockOpts:
    slope: float = 0.2
    se_inner_activation: bool = True


def block_layout(channels: int = 64, expansion: int = 4, bottleneck: int = 16,
                 kind: str = "se") -> dict[str, ConvSpec]:
    if kind not in BLOCK_KINDS:
        raise ConfigError(f"block kind must be one of {BLOCK_KINDS}, got {kind!r}")
    wide = channels * expansion
    layout = {
        "conv1": ConvSpec.square(channels, channels, 3),
        "conv2": ConvSpec.square(channels, channels, 3),
        "conv3": ConvSpec.square(channels, wide, 3),
    }
    if kind == "se":
        layout["se.down"] = ConvSpec.square(wide, bottleneck, 1)
        layout["se.up"] = ConvSpec.square(bottleneck, wide, 1)
    layout["transition"] = ConvSpec.square(wide, channels, 1)
    return layout


def branch_layout(channels: int = 64, expansion: int = 4, bottleneck: int = 16,
                  kind: str = "se") -> dict[str, ConvSpec]:
    layout = {f"block.{k}": v for k, v in block_layout(channels, expansion, bottleneck, kind).items()}
    layout["feat_deconv"] = ConvSpec.square(channels, channels, 4, stride=2, padding=1, transposed=True)
    layout["residual_conv"] = ConvSpec.square(channels, 1, 3)
    layout["image_deconv"] = ConvSpec.square(1, 1, 4, stride=2, padding=1, transposed=True)
    return layout


def bilinear_upsample_kernel(k: int = 4) -> np.ndarray:
    """k x k bilinear interpolation kernel for a stride-k/2 transposed conv."""
    factor = (k + 1) // 2
    center = factor - 1 if k % 2 else factor - 0.5
    og = 1 - np.abs(np.arange(k) - center) / factor
    return np.outer(og, og)


def _conv(x, p, name, spec):
    return T.conv2d(x, p[name + ".weight"], p[name + ".bias"], spec)


def _conv_back(d, x, p, name, spec, grads):
    dx, dw, db = T.conv2d_backward(d, x, p[name + ".weight"], spec)
    grads[name + ".weight"] = dw
    grads[name + ".bias"] = db
    return dx


# ---------------------------------------------------------------- SE module

def se_forward(u, p, opts: BlockOpts = BlockOpts(), layout=None):
    """Channel gains in (0, 1): pool -> 1x1 down -> [lrelu] -> 1x1 up -> sigmoid."""
    layout = layout or infer_block_layout(p)
    down, up = layout["se.down"], layout["se.up"]
    if u.shape[1] != down.in_channels:
        raise ShapeError(f"SE expects {down.in_channels} channels, got {u.shape[1]}")
    s = T.global_avg_pool(u)
    d = _conv(s, p, "se.down", down)
    a = T.leaky_relu(d, opts.slope) if opts.se_inner_activation else d
    e = _conv(a, p, "se.up", up)
    g = T.sigmoid(e)
    return g, (u.shape, s, d, a, g, layout, opts)


def se_backward(dg, cache, p):
    u_shape, s, d, a, g, layout, opts = cache
    grads = {}
    de = T.sigmoid_backward(dg, g)
    da = _conv_back(de, a, p, "se.up", layout["se.up"], grads)
    dd = T.leaky_relu_backward(da, d, opts.slope) if opts.se_inner_activation else da
    ds = _conv_back(dd, s, p, "se.down", layout["se.down"], grads)
    return T.global_avg_pool_backward(ds, u_shape), grads


def infer_block_layout(p) -> dict[str, ConvSpec]:
    """Recover conv geometry from parameter shapes; works for bare SE dicts too."""
    layout = {}
    if "se.down.weight" in p:
        bottleneck, wide = p["se.down.weight"].shape[:2]
        layout["se.down"] = ConvSpec.square(wide, bottleneck, 1)
        layout["se.up"] = ConvSpec.square(bottleneck, wide, 1)
    if "conv1.weight" in p:
        channels, wide = p["conv1.weight"].shape[0], p["conv3.weight"].shape[0]
        bottleneck = layout["se.down"].out_channels if layout else 1
        layout = block_layout(channels, wide // channels, bottleneck, "se" if layout else "plain")
    return layout


def _sub(d, prefix):
    pre = prefix + "."
    return {k[len(pre):]: v for k, v in d.items() if k.startswith(pre)}


# ------------------------------------------------------------ residual block

def se_resblock_forward(x, p, opts: BlockOpts = BlockOpts(), layout=None):
    """x + transition(SE-scaled residual). Without SE parameters this is the plain block."""
    layout = layout or infer_block_layout(p)
    if x.shape[1] != layout["conv1"].in_channels:
        raise ShapeError(f"block expects {layout['conv1'].in_channels} channels, got {x.shape[1]}")
    if x.shape[2] < 3 or x.shape[3] < 3:
        raise ShapeError(f"block needs spatial size >= 3x3, got {x.shape[2]}x{x.shape[3]}")
    h1 = _conv(x, p, "conv1", layout["conv1"])
    a1 = T.leaky_relu(h1, opts.slope)
    h2 = _conv(a1, p, "conv2", layout["conv2"])
    a2 = T.leaky_relu(h2, opts.slope)
    r = _conv(a2, p, "conv3", layout["conv3"])
    se_cache = None
    if "se.down" in layout:
        g, se_cache = se_forward(r, p, opts, layout)
        m = T.channel_scale(r, g)
    else:
        g, m = None, r
    t = _conv(m, p, "transition", layout["transition"])
    out = T.add(x, t)
    return out, (x, h1, a1, h2, a2, r, g, m, se_cache, layout, opts)


def se_resblock_backward(dout, cache, p):
    x, h1, a1, h2, a2, r, g, m, se_cache, layout, opts = cache
    grads = {}
    dx_skip, dt = T.add_backward(dout)
    dm = _conv_back(dt, m, p, "transition", layout["transition"], grads)
    if se_cache is not None:
        dr, dg = T.channel_scale_backward(dm, r, g)
        dr_pool, se_grads = se_backward(dg, se_cache, p)
        dr = dr + dr_pool
        grads.update(se_grads)
    else:
        dr = dm
    da2 = _conv_back(dr, a2, p, "conv3", layout["conv3"], grads)
    dh2 = T.leaky_relu_backward(da2, h2, opts.slope)
    da1 = _conv_back(dh2, a1, p, "conv2", layout["conv2"], grads)
    dh1 = T.leaky_relu_backward(da1, h1, opts.slope)
    dx = _conv_back(dh1, x, p, "conv1", layout["conv1"], grads)
    return dx + dx_skip, grads


# ------------------------------------------------------------ recursive unit

def recursive_unit_forward(x, p, depth: int, opts: BlockOpts = BlockOpts(), layout=None,
                           keep_cache: bool = True):
    """Apply one shared block ``depth`` times."""
    if depth < 1:
        raise ConfigError(f"recursion depth must be >= 1, got {depth}")
    layout = layout or infer_block_layout(p)
    caches = []
    for _ in range(depth):
        x, c = se_resblock_forward(x, p, opts, layout)
        if keep_cache:
            caches.append(c)
    return x, caches


def recursive_unit_backward(dout, caches, p):
    total: dict[str, np.ndarray] = {}
    for c in reversed(caches):
        dout, grads = se_resblock_backward(dout, c, p)
        for k, g in grads.items():
            if k in total:
                total[k] += g
            else:
                total[k] = g
    return dout, total


# -------------------------------------------------------------- branch head

def branch_reconstruct(features, lr_image, p, depth: int, opts: BlockOpts = BlockOpts(), layout=None,
                       keep_cache: bool = True):
    """One pyramid level: recursive unit, 2x feature deconv, residual + upsampled image.

    Returns ``({"hr_image", "hr_features"}, cache)``.
    """
    if features.shape[0] != lr_image.shape[0] or features.shape[2:] != lr_image.shape[2:]:
        raise ShapeError(f"features {features.shape} and image {lr_image.shape} disagree spatially")
    block_p = _sub(p, "block")
    if layout is None:
        block = infer_block_layout(block_p)
        c = block["conv1"].in_channels
        layout = {f"block.{k}": v for k, v in block.items()}
        layout.update({k: v for k, v in branch_layout(c).items() if not k.startswith("block.")})
    f, unit_caches = recursive_unit_forward(features, block_p, depth, opts, _sub(layout, "block"), keep_cache)
    hr_features = T.conv_transpose2d(f, p["feat_deconv.weight"], p["feat_deconv.bias"], layout["feat_deconv"])
    residual = _conv(hr_features, p, "residual_conv", layout["residual_conv"])
    upsampled = T.conv_transpose2d(lr_image, p["image_deconv.weight"], p["image_deconv.bias"],
                                   layout["image_deconv"])
    hr_image = T.add(upsampled, residual)
    cache = (f, unit_caches, hr_features, lr_image, block_p, layout) if keep_cache else None
    return {"hr_image": hr_image, "hr_features": hr_features}, cache


def branch_backward(d_image, d_features, cache, p):
    """Backward of ``branch_reconstruct``.

    ``d_features`` is the gradient flowing into ``hr_features`` from a
    downstream consumer (the next pyramid level) or None.
    Returns ``(d_features_in, d_lr_image, grads)``.
    """
    f, unit_caches, hr_features, lr_image, block_p, layout = cache
    grads = {}
    d_up, d_res = T.add_backward(d_image)
    d_lr, dw, db = T.conv_transpose2d_backward(d_up, lr_image, p["image_deconv.weight"], layout["image_deconv"])
    grads["image_deconv.weight"], grads["image_deconv.bias"] = dw, db
    d_hf = _conv_back(d_res, hr_features, p, "residual_conv", layout["residual_conv"], grads)
    if d_features is not None:
        d_hf = d_hf + d_features
    df, dw, db = T.conv_transpose2d_backward(d_hf, f, p["feat_deconv.weight"], layout["feat_deconv"])
    grads["feat_deconv.weight"], grads["feat_deconv.bias"] = dw, db
    d_in, block_grads = recursive_unit_backward(df, unit_caches, block_p)
    grads.update({f"block.{k}": v for k, v in block_grads.items()})
    return d_in, d_lr, grads
