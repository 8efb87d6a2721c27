"""NCHW numeric kernels with explicit forward/backward pairs.

Every tensor here is a plain 4-D ``numpy.ndarray`` laid out as
(batch, channels, rows, cols). Kernels are pure functions: they never keep
state between calls and never modify their inputs. Backward functions take
the upstream gradient plus whatever the forward needs (usually its inputs)
and return gradients for each differentiable argument.

Convolutions are cross-correlations (no kernel flip). Ordinary conv weights
are laid out [out, in, kh, kw]; transposed conv weights are [in, out, kh, kw].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

Tensor4 = np.ndarray

DEFAULT_DTYPE = np.float32


def as_tensor4(x, dtype=None) -> Tensor4:
    """Validate ``x`` as a 4-D array with all dimensions >= 1."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError(f"expected a 4-D NCHW tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ConvSpec.{name} must be >= 1")
        if self.stride not in (1, 2):
            raise ConfigError(f"only stride 1 or 2 is supported, got {self.stride}")
        if self.padding < 0:
            raise ConfigError("ConvSpec.padding must be non-negative")

    @classmethod
    def square(cls, cin, cout, k, stride=1, padding=None, transposed=False):
        if padding is None:
            padding = k // 2
        return cls(cin, cout, k, k, stride, padding, transposed)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        if self.transposed:
            return (self.in_channels, self.out_channels, self.kernel_h, self.kernel_w)
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        s, p = self.stride, self.padding
        if self.transposed:
            oh = (h - 1) * s - 2 * p + self.kernel_h
            ow = (w - 1) * s - 2 * p + self.kernel_w
        else:
            nh, nw = h + 2 * p - self.kernel_h, w + 2 * p - self.kernel_w
            if nh < 0 or nw < 0 or nh % s or nw % s:
                raise ConfigError(
                    f"input {h}x{w} with kernel {self.kernel_h}x{self.kernel_w}, "
                    f"stride {s}, padding {p} gives a non-integer output size"
                )
            oh, ow = nh // s + 1, nw // s + 1
        if oh < 1 or ow < 1:
            raise ConfigError(f"input {h}x{w} gives empty output {oh}x{ow}")
        return oh, ow


def _check_conv_args(x, weight, bias, spec: ConvSpec, transposed: bool):
    if spec.transposed != transposed:
        kind = "conv_transpose2d" if transposed else "conv2d"
        raise ConfigError(f"{kind} called with spec.transposed={spec.transposed}")
    as_tensor4(x)
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} does not match spec {spec.weight_shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.shape}, expected ({spec.out_channels},)")


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # view[n, c, h, w, i, j] = xp[n, c, h*stride + i, w*stride + j]
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _scatter_windows(cols: np.ndarray, out_h: int, out_w: int, stride: int) -> np.ndarray:
    """Adjoint of ``_windows``: accumulate cols[n,c,h,w,i,j] into an (out_h, out_w) canvas."""
    n, c, h, w, kh, kw = cols.shape
    out = np.zeros((n, c, out_h, out_w), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (h - 1) + 1:stride, j:j + stride * (w - 1) + 1:stride] += cols[..., i, j]
    return out


def conv2d(x: Tensor4, weight: np.ndarray, bias: np.ndarray | None, spec: ConvSpec) -> Tensor4:
    _check_conv_args(x, weight, bias, spec, transposed=False)
    spec.output_size(x.shape[2], x.shape[3])
    v = _windows(_pad(x, spec.padding), spec.kernel_h, spec.kernel_w, spec.stride)
    out = np.tensordot(v, weight, axes=((1, 4, 5), (1, 2, 3)))  # (n, oh, ow, oc)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def conv2d_backward(dout: Tensor4, x: Tensor4, weight: np.ndarray, spec: ConvSpec):
    """Return (dx, dweight, dbias) for ``conv2d``."""
    p, s = spec.padding, spec.stride
    xp = _pad(x, p)
    v = _windows(xp, spec.kernel_h, spec.kernel_w, s)
    dweight = np.tensordot(dout, v, axes=((0, 2, 3), (0, 2, 3)))
    dbias = dout.sum(axis=(0, 2, 3))
    dcols = np.tensordot(dout, weight, axes=((1,), (0,)))  # (n, oh, ow, c, kh, kw)
    dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
    dxp = _scatter_windows(dcols, xp.shape[2], xp.shape[3], s)
    dx = dxp[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else dxp
    return np.ascontiguousarray(dx), dweight, dbias


def conv_transpose2d(x: Tensor4, weight: np.ndarray, bias: np.ndarray | None, spec: ConvSpec) -> Tensor4:
    """Fractionally strided convolution; the adjoint of ``conv2d`` with the same geometry."""
    _check_conv_args(x, weight, bias, spec, transposed=True)
    n, _, h, w = x.shape
    oh, ow = spec.output_size(h, w)
    s, p = spec.stride, spec.padding
    cols = np.tensordot(x, weight, axes=((1,), (0,)))  # (n, h, w, oc, kh, kw)
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    full = _scatter_windows(cols, (h - 1) * s + spec.kernel_h, (w - 1) * s + spec.kernel_w, s)
    out = np.ascontiguousarray(full[:, :, p:p + oh, p:p + ow])
    if bias is not None:
        out += bias.reshape(1, -1, 1, 1)
    return out


def conv_transpose2d_backward(dout: Tensor4, x: Tensor4, weight: np.ndarray, spec: ConvSpec):
    """Return (dx, dweight, dbias) for ``conv_transpose2d``."""
    s, p = spec.stride, spec.padding
    h, w = x.shape[2:]
    full_h, full_w = (h - 1) * s + spec.kernel_h, (w - 1) * s + spec.kernel_w
    dfull = np.zeros(dout.shape[:2] + (full_h, full_w), dtype=dout.dtype)
    dfull[:, :, p:p + dout.shape[2], p:p + dout.shape[3]] = dout
    v = _windows(dfull, spec.kernel_h, spec.kernel_w, s)  # (n, oc, h, w, kh, kw)
    dx = np.tensordot(v, weight, axes=((1, 4, 5), (1, 2, 3)))  # (n, h, w, ic)
    dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
    dweight = np.tensordot(x, v, axes=((0, 2, 3), (0, 2, 3)))  # (ic, oc, kh, kw)
    dbias = dout.sum(axis=(0, 2, 3))
    return dx, dweight, dbias


def leaky_relu(x: Tensor4, slope: float = 0.2) -> Tensor4:
    if not 0 <= slope < 1:
        raise ConfigError(f"leaky slope must lie in [0, 1), got {slope}")
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(dout: Tensor4, x: Tensor4, slope: float = 0.2) -> Tensor4:
    return np.where(x >= 0, dout, dout * dout.dtype.type(slope))


def sigmoid(x: Tensor4) -> Tensor4:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


def sigmoid_backward(dout: Tensor4, y: Tensor4) -> Tensor4:
    """Gradient through the sigmoid given its *output* ``y``."""
    return dout * y * (1 - y)


def global_avg_pool(x: Tensor4) -> Tensor4:
    """Per-channel spatial mean, shape [n, c, 1, 1]."""
    as_tensor4(x)
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(dout: Tensor4, input_shape) -> Tensor4:
    h, w = input_shape[2], input_shape[3]
    return np.broadcast_to(dout / (h * w), input_shape).copy()


def channel_scale(x: Tensor4, gains: Tensor4) -> Tensor4:
    if gains.shape != (x.shape[0], x.shape[1], 1, 1):
        raise ShapeError(f"gains shape {gains.shape} does not match input {x.shape[:2]}")
    return x * gains


def channel_scale_backward(dout: Tensor4, x: Tensor4, gains: Tensor4):
    """Return (dx, dgains)."""
    return dout * gains, (dout * x).sum(axis=(2, 3), keepdims=True)


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add tensors of shape {a.shape} and {b.shape}")
    return a + b


def add_backward(dout: Tensor4):
    return dout, dout


# --------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    message: str = ""

    def __bool__(self):
        return self.passed


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, idx=None, h: float = 1e-5):
    """Central differences of scalar ``f`` at ``x`` (perturbed in place, then restored).

    ``idx`` optionally restricts the evaluation to a list of flat indices.
    """
    flat = x.reshape(-1)
    indices = range(flat.size) if idx is None else idx
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[k] = (fp - fm) / (2 * h)
    return out


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def grad_check(fn, input: np.ndarray, tol: float, backward=None, seed: int = 0,
               n_samples: int | None = None, h: float = 1e-5) -> GradCheckReport:
    """Compare an analytic input gradient against central finite differences.

    ``fn`` maps a float64 tensor to a tensor. The scalar reduction is
    ``sum(fn(x) * R)`` with a fixed random ``R``, so backward receives ``R``
    as its upstream gradient. ``backward(x, dout)`` must return d/dx; when it
    is omitted, ``fn.backward`` is used.

    Non-finite outputs are reported as a failure rather than raised.
    """
    x = np.array(input, dtype=np.float64)
    rng = np.random.default_rng(seed)
    try:
        y = np.asarray(fn(x))
    except FloatingPointError as exc:
        return GradCheckReport(np.inf, False, 0, f"forward raised: {exc}")
    if not np.all(np.isfinite(y)):
        return GradCheckReport(np.inf, False, 0, "forward produced non-finite values")
    weights = rng.standard_normal(y.shape)

    def scalar(z):
        return float(np.sum(np.asarray(fn(z)) * weights))

    if backward is None:
        backward = getattr(fn, "backward", None)
        if backward is None:
            raise ConfigError("grad_check needs a backward function")
    analytic = np.asarray(backward(x.copy(), weights)).reshape(-1)
    if not np.all(np.isfinite(analytic)):
        return GradCheckReport(np.inf, False, 0, "backward produced non-finite values")
    idx = None
    if n_samples is not None and n_samples < x.size:
        idx = list(rng.choice(x.size, size=n_samples, replace=False))
    numeric = numerical_gradient(scalar, x, idx, h)
    if not np.all(np.isfinite(numeric)):
        return GradCheckReport(np.inf, False, 0, "finite differences are non-finite")
    a = analytic if idx is None else analytic[idx]
    err = max_relative_error(a, numeric)
    return GradCheckReport(err, err < tol, len(numeric))
