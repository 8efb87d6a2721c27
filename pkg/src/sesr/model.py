"""The two-branch progressive SESR network.

Layout at the default configuration::

    lr_y ─ entry_conv ─┬─ branch2: recursive unit ─ feat_deconv ─┬─ residual_conv ─┐
                       │                                          │                 + ─ sr2
    lr_y ──────────────┴────────────────────── image_deconv ──────┼─────────────────┘
                                                                  │
                          branch4 (same structure) consumes the ×2 features and sr2 ─ sr4

Parameter accounting (weights / biases) at the defaults::

    entry_conv            576 /    64
    block (per branch)  245,760 / 720       conv1 36,864  conv2 36,864  conv3 147,456
                                            se.down 4,096  se.up 4,096  transition 16,384
    feat_deconv          65,536 /    64
    residual_conv           576 /     1
    image_deconv             16 /     1

Each branch carries 311,888 weights, so the model has 576 + 2 * 311,888 =
624,352 weights (~624.4k) and 625,988 learnable scalars once biases are
included. Weighted layers along one branch: entry conv + 4 recursions x 6
convs + feat_deconv + residual_conv = 27.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ConfigError, ShapeError
from .params import ParamStore, prefixed
from .tensor import ConvSpec

BRANCHES = ("branch2", "branch4")
MIN_INPUT = 8


@dataclass(frozen=True)
class ModelConfig:
    recursion_depth: int = 4
    base_channels: int = 64
    expansion: int = 4
    se_bottleneck: int = 16
    scales: tuple[int, ...] = (2, 4)
    leaky_slope: float = 0.2
    se_inner_activation: bool = True
    block_kind: str = "se"

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(self.scales))
        if self.recursion_depth < 1:
            raise ConfigError(f"recursion_depth must be >= 1, got {self.recursion_depth}")
        if self.base_channels < 1 or self.expansion < 1 or self.se_bottleneck < 1:
            raise ConfigError("channel counts must be positive")
        if self.se_bottleneck >= self.base_channels * self.expansion:
            raise ConfigError("se_bottleneck must be smaller than base_channels * expansion")
        if self.scales != (2, 4):
            raise ConfigError(f"only the two-branch pyramid (2, 4) is supported, got {self.scales}")
        if not 0 <= self.leaky_slope < 1:
            raise ConfigError(f"leaky_slope must lie in [0, 1), got {self.leaky_slope}")
        if self.block_kind not in L.BLOCK_KINDS:
            raise ConfigError(f"block_kind must be one of {L.BLOCK_KINDS}, got {self.block_kind!r}")

    @property
    def block_opts(self) -> L.BlockOpts:
        return L.BlockOpts(self.leaky_slope, self.se_inner_activation)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SESRModel:
    config: ModelConfig
    params: ParamStore
    seed: int = 0
    layout: dict[str, ConvSpec] = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


def model_layout(cfg: ModelConfig) -> dict[str, ConvSpec]:
    layout = {"entry_conv": ConvSpec.square(1, cfg.base_channels, 3)}
    branch = L.branch_layout(cfg.base_channels, cfg.expansion, cfg.se_bottleneck, cfg.block_kind)
    for b in BRANCHES:
        layout.update({f"{b}.{k}": v for k, v in branch.items()})
    return layout


def _group_rng(seed: int, name: str) -> np.random.Generator:
    # Per-group streams: adding or removing a group (SE on/off) leaves the others untouched.
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _fan_in(spec: ConvSpec) -> float:
    k = spec.kernel_h * spec.kernel_w
    if spec.transposed:
        return spec.in_channels * k / spec.stride ** 2
    return spec.in_channels * k


TRANSITION_INIT_SCALE = 0.1


def build_model(config: ModelConfig | None = None, seed: int = 0, dtype=T.DEFAULT_DTYPE) -> SESRModel:
    """He-normal conv weights, zero biases, bilinear image deconvs.

    The transition conv closing each residual branch is drawn He-normal and
    then multiplied by ``TRANSITION_INIT_SCALE``; without it the activation
    scale roughly doubles per block application and the untrained x4 output
    sits two orders of magnitude above the [0, 1] image range.
    """
    cfg = config or ModelConfig()
    layout = model_layout(cfg)
    gain = math.sqrt(2.0 / (1 + cfg.leaky_slope ** 2))
    store = ParamStore()
    for name, spec in layout.items():
        if name.endswith("image_deconv"):
            w = L.bilinear_upsample_kernel(spec.kernel_h).reshape(spec.weight_shape)
        else:
            std = gain / math.sqrt(_fan_in(spec))
            w = _group_rng(seed, name).normal(0.0, std, spec.weight_shape)
            if name.endswith("block.transition"):
                w *= TRANSITION_INIT_SCALE
        store.add(f"{name}.weight", w.astype(dtype))
        store.add(f"{name}.bias", np.zeros(spec.out_channels, dtype=dtype))
    return SESRModel(cfg, store, seed, layout)


def _branch_layout(model, b):
    return {k[len(b) + 1:]: v for k, v in model.layout.items() if k.startswith(b + ".")}


def forward_pyramid(model: SESRModel, lr_y, keep_cache: bool = False, max_scale: int = 4):
    """Return ``{"sr2", "sr4"}`` (and the backward cache when ``keep_cache``). Outputs are not clamped.

    ``max_scale=2`` stops after the first branch and returns only ``sr2``.
    """
    if max_scale not in (2, 4):
        raise ConfigError(f"max_scale must be 2 or 4, got {max_scale}")
    if keep_cache and max_scale != 4:
        raise ConfigError("the backward cache needs both branches")
    x = T.as_tensor4(lr_y).astype(model.dtype, copy=False)
    if x.shape[1] != 1:
        raise ShapeError(f"forward_pyramid expects a single Y channel, got {x.shape[1]}")
    if x.shape[2] < MIN_INPUT or x.shape[3] < MIN_INPUT:
        raise ShapeError(f"input must be at least {MIN_INPUT}x{MIN_INPUT}, got {x.shape[2]}x{x.shape[3]}")
    p, cfg = model.params, model.config
    entry = model.layout["entry_conv"]
    f0 = T.conv2d(x, p["entry_conv.weight"], p["entry_conv.bias"], entry)
    out2, c2 = L.branch_reconstruct(f0, x, p.view("branch2"), cfg.recursion_depth, cfg.block_opts,
                                    _branch_layout(model, "branch2"), keep_cache)
    if max_scale == 2:
        return {"sr2": out2["hr_image"]}
    out4, c4 = L.branch_reconstruct(out2["hr_features"], out2["hr_image"], p.view("branch4"),
                                    cfg.recursion_depth, cfg.block_opts, _branch_layout(model, "branch4"),
                                    keep_cache)
    outs = {"sr2": out2["hr_image"], "sr4": out4["hr_image"]}
    if keep_cache:
        return outs, (x, c2, c4)
    return outs


def pyramid_backward(model: SESRModel, cache, d_sr2, d_sr4):
    """Return ``(d_lr_y, grads)`` with grads keyed by full parameter names."""
    x, c2, c4 = cache
    p = model.params
    grads = {}
    d_feat2, d_img2_from4, g4 = L.branch_backward(d_sr4, None, c4, p.view("branch4"))
    grads.update(prefixed("branch4", g4))
    d_img2 = d_img2_from4 if d_sr2 is None else d_sr2 + d_img2_from4
    d_f0, d_x_img, g2 = L.branch_backward(d_img2, d_feat2, c2, p.view("branch2"))
    grads.update(prefixed("branch2", g2))
    d_x, dw, db = T.conv2d_backward(d_f0, x, p["entry_conv.weight"], model.layout["entry_conv"])
    grads["entry_conv.weight"], grads["entry_conv.bias"] = dw, db
    return d_x + d_x_img, grads


def count_params(model: SESRModel) -> dict:
    """Learnable scalar totals, broken down by layer group (weights and biases separately)."""
    by_group: dict[str, dict[str, int]] = {}
    for name, value in model.params.items():
        group, kind = name.rsplit(".", 1)
        by_group.setdefault(group, {"weight": 0, "bias": 0})[kind] += int(value.size)
    weights = sum(g["weight"] for g in by_group.values())
    biases = sum(g["bias"] for g in by_group.values())
    return {"total": weights + biases, "weights": weights, "biases": biases, "by_group": by_group}


def pin_se_gains(model: SESRModel, logit: float = 20.0) -> None:
    """Force every SE gain to sigmoid(logit) ~ 1 by zeroing Conv Up and setting its bias."""
    for b in BRANCHES:
        name = f"{b}.block.se.up"
        if f"{name}.weight" not in model.params:
            continue
        model.params[f"{name}.weight"] = np.zeros_like(model.params[f"{name}.weight"])
        model.params[f"{name}.bias"] = np.full_like(model.params[f"{name}.bias"], logit)


def zero_residual_paths(model: SESRModel) -> None:
    """Zero every parameter except the image deconvs (debug / oracle configurations)."""
    for name in model.params:
        if ".image_deconv." not in name:
            model.params[name] = np.zeros_like(model.params[name])
