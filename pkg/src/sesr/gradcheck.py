"""Finite-difference gradient suites for every kernel and composite.

Each case builds float64 inputs/parameters from a seed, runs the analytic
backward on the scalar ``sum_k <out_k, R_k>`` with fixed random ``R_k``, and
compares against central differences on (a sample of) every named array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from . import tensor as T
from .model import ModelConfig, build_model, forward_pyramid, pyramid_backward
from .tensor import ConvSpec
from .training import charbonnier_loss

SMOOTH_TOL = 1e-6
KINK_TOL = 1e-4


@dataclass
class CaseResult:
    name: str
    tol: float
    max_rel_err: float
    worst_array: str
    n_checked: int
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28} max_rel_err={self.max_rel_err:.2e} "
                f"(tol {self.tol:.0e}, worst {self.worst_array}, {self.n_checked} entries)"
                + (f" [{self.message}]" if self.message else ""))


def check_arrays(name: str, arrays: dict[str, np.ndarray], forward: Callable, backward: Callable,
                 tol: float, seed: int = 0, max_per_array: int | None = None, h: float = 1e-5,
                 full: tuple[str, ...] = (), scale_floor: float = 1e-3) -> CaseResult:
    """Generic checker: ``forward(arrays) -> list of outputs``; ``backward(arrays, douts) -> {name: grad}``.

    Arrays larger than ``max_per_array`` are sampled, except those named in ``full``.
    Entries whose gradient is far below the array's largest one are compared
    against ``scale_floor * max|grad|`` rather than their own magnitude, since
    central differences cannot resolve them past roundoff.

    An entry off by more than ``tol/10`` at ``h`` is re-estimated at ``h/10``
    and ``h/100``; the finer value replaces it only when those two agree, i.e. the difference
    quotient has converged and the miss came from a leaky-relu kink lying
    inside ``[x - h, x + h]``. A wrong backward fails at every step size.
    """
    rng = np.random.default_rng([seed, 7])
    outs = forward(arrays)
    if not all(np.all(np.isfinite(o)) for o in outs):
        return CaseResult(name, tol, np.inf, "-", 0, "forward produced non-finite values")
    weights = [rng.standard_normal(o.shape) for o in outs]

    def scalar(_=None):
        return float(sum(np.sum(o * w) for o, w in zip(forward(arrays), weights)))

    analytic = backward(arrays, weights)
    worst, worst_name, checked, refined = 0.0, "-", 0, 0
    for key, arr in arrays.items():
        if key not in analytic:
            continue
        idx = None
        if max_per_array is not None and arr.size > max_per_array and key not in full:
            idx = list(rng.choice(arr.size, size=max_per_array, replace=False))
        numeric = T.numerical_gradient(scalar, arr, idx, h)
        full_grad = np.asarray(analytic[key]).reshape(-1)
        a = full_grad if idx is None else full_grad[idx]
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(numeric))):
            return CaseResult(name, tol, np.inf, key, checked, "non-finite gradient")
        floor = max(1e-8, scale_floor * float(np.max(np.abs(full_grad))))
        flat_idx = range(arr.size) if idx is None else idx
        for k in np.flatnonzero(_rel(a, numeric, floor) >= tol / 10):
            fine = T.numerical_gradient(scalar, arr, [flat_idx[k]], h / 10)[0]
            finer = T.numerical_gradient(scalar, arr, [flat_idx[k]], h / 100)[0]
            if _rel(np.array([fine]), np.array([finer]), floor)[0] < tol / 10:
                numeric[k] = finer
                refined += 1
        err = T.max_relative_error(a, numeric, floor=floor)
        checked += len(numeric)
        if err > worst:
            worst, worst_name = err, key
    msg = f"{refined} entries re-estimated at a finer step" if refined else ""
    return CaseResult(name, tol, worst, worst_name, checked, msg)


def _rel(a, n, floor):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _away_from_zero(x, margin=1e-3):
    # keep leaky-relu inputs off the kink so finite differences are well defined
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 5, x)


# ---------------------------------------------------------------- kernels

def case_conv2d(seed):
    rng = np.random.default_rng(seed)
    spec = ConvSpec.square(3, 4, 3)
    arr = {"x": rng.standard_normal((2, 3, 5, 5)), "w": rng.standard_normal(spec.weight_shape),
           "b": rng.standard_normal(4)}

    def fwd(a):
        return [T.conv2d(a["x"], a["w"], a["b"], spec)]

    def bwd(a, d):
        dx, dw, db = T.conv2d_backward(d[0], a["x"], a["w"], spec)
        return {"x": dx, "w": dw, "b": db}
    return check_arrays("conv2d", arr, fwd, bwd, SMOOTH_TOL, seed)


def case_conv_transpose2d(seed):
    rng = np.random.default_rng(seed)
    spec = ConvSpec.square(3, 2, 4, stride=2, padding=1, transposed=True)
    arr = {"x": rng.standard_normal((2, 3, 4, 4)), "w": rng.standard_normal(spec.weight_shape),
           "b": rng.standard_normal(2)}

    def fwd(a):
        return [T.conv_transpose2d(a["x"], a["w"], a["b"], spec)]

    def bwd(a, d):
        dx, dw, db = T.conv_transpose2d_backward(d[0], a["x"], a["w"], spec)
        return {"x": dx, "w": dw, "b": db}
    return check_arrays("conv_transpose2d", arr, fwd, bwd, SMOOTH_TOL, seed)


def case_leaky_relu(seed):
    x = _away_from_zero(np.random.default_rng(seed).standard_normal((2, 3, 4, 4)))
    return check_arrays("leaky_relu", {"x": x}, lambda a: [T.leaky_relu(a["x"])],
                        lambda a, d: {"x": T.leaky_relu_backward(d[0], a["x"])}, KINK_TOL, seed)


def case_sigmoid(seed):
    x = 3 * np.random.default_rng(seed).standard_normal((2, 3, 4, 4))
    return check_arrays("sigmoid", {"x": x}, lambda a: [T.sigmoid(a["x"])],
                        lambda a, d: {"x": T.sigmoid_backward(d[0], T.sigmoid(a["x"]))}, SMOOTH_TOL, seed)


def case_global_avg_pool(seed):
    x = np.random.default_rng(seed).standard_normal((2, 3, 4, 5))
    return check_arrays("global_avg_pool", {"x": x}, lambda a: [T.global_avg_pool(a["x"])],
                        lambda a, d: {"x": T.global_avg_pool_backward(d[0], a["x"].shape)}, SMOOTH_TOL, seed)


def case_channel_scale(seed):
    rng = np.random.default_rng(seed)
    arr = {"x": rng.standard_normal((2, 3, 4, 4)), "g": rng.uniform(0.05, 0.95, (2, 3, 1, 1))}

    def bwd(a, d):
        dx, dg = T.channel_scale_backward(d[0], a["x"], a["g"])
        return {"x": dx, "g": dg}
    return check_arrays("channel_scale", arr, lambda a: [T.channel_scale(a["x"], a["g"])], bwd,
                        SMOOTH_TOL, seed)


def case_add(seed):
    rng = np.random.default_rng(seed)
    arr = {"a": rng.standard_normal((1, 2, 3, 3)), "b": rng.standard_normal((1, 2, 3, 3))}

    def bwd(a, d):
        da, db = T.add_backward(d[0])
        return {"a": da, "b": db}
    return check_arrays("add", arr, lambda a: [T.add(a["a"], a["b"])], bwd, SMOOTH_TOL, seed)


def case_charbonnier(seed):
    rng = np.random.default_rng(seed)
    arr = {"p2": rng.uniform(0, 1, (2, 1, 4, 4)), "p4": rng.uniform(0, 1, (2, 1, 8, 8))}
    t2, t4 = rng.uniform(0, 1, (2, 1, 4, 4)), rng.uniform(0, 1, (2, 1, 8, 8))

    def fwd(a):
        loss, _ = charbonnier_loss([a["p2"], a["p4"]], [t2, t4], 1e-3)
        return [np.array(loss).reshape(1, 1, 1, 1)]

    def bwd(a, d):
        _, (g2, g4) = charbonnier_loss([a["p2"], a["p4"]], [t2, t4], 1e-3)
        s = float(d[0].ravel()[0])
        return {"p2": g2 * s, "p4": g4 * s}
    # curvature scale is eps, so the step must sit well below it
    return check_arrays("charbonnier_loss", arr, fwd, bwd, SMOOTH_TOL, seed, h=1e-6)


# -------------------------------------------------------------- composites

def _block_params(seed, channels=64, expansion=4, bottleneck=16, bias_scale=0.1):
    rng = np.random.default_rng([seed, 1])
    out = {}
    for name, spec in L.block_layout(channels, expansion, bottleneck).items():
        fan = spec.in_channels * spec.kernel_h * spec.kernel_w
        out[f"{name}.weight"] = rng.normal(0, np.sqrt(2 / fan), spec.weight_shape)
        out[f"{name}.bias"] = bias_scale * rng.standard_normal(spec.out_channels)
    return out


def case_se_module(seed, inner_activation=True):
    rng = np.random.default_rng(seed)
    p = {k: v for k, v in _block_params(seed).items() if k.startswith("se.")}
    arr = {"u": rng.standard_normal((1, 256, 4, 4)), **p}
    opts = L.BlockOpts(0.2, inner_activation)

    def fwd(a):
        return [L.se_forward(a["u"], a, opts)[0]]

    def bwd(a, d):
        _, cache = L.se_forward(a["u"], a, opts)
        du, grads = L.se_backward(d[0], cache, a)
        return {"u": du, **grads}
    name = "se_module" if inner_activation else "se_module(literal)"
    return check_arrays(name, arr, fwd, bwd, KINK_TOL, seed,
                        h=1e-6, max_per_array=40)


def case_se_resblock(seed, kind="se"):
    rng = np.random.default_rng(seed)
    p = _block_params(seed)
    if kind == "plain":
        p = {k: v for k, v in p.items() if not k.startswith("se.")}
    arr = {"x": rng.standard_normal((1, 64, 6, 6)), **p}

    def fwd(a):
        return [L.se_resblock_forward(a["x"], a)[0]]

    def bwd(a, d):
        _, cache = L.se_resblock_forward(a["x"], a)
        dx, grads = L.se_resblock_backward(d[0], cache, a)
        return {"x": dx, **grads}
    return check_arrays(f"{kind}_resblock", arr, fwd, bwd, KINK_TOL, seed,
                        h=1e-6, max_per_array=40, full=("x",))


def case_recursive_unit(seed, depth=2):
    rng = np.random.default_rng(seed)
    arr = {"x": rng.standard_normal((1, 64, 5, 5)), **_block_params(seed)}

    def fwd(a):
        return [L.recursive_unit_forward(a["x"], a, depth)[0]]

    def bwd(a, d):
        _, caches = L.recursive_unit_forward(a["x"], a, depth)
        dx, grads = L.recursive_unit_backward(d[0], caches, a)
        return {"x": dx, **grads}
    return check_arrays(f"recursive_unit(depth={depth})", arr, fwd, bwd, KINK_TOL, seed,
                        h=1e-6, max_per_array=30)


def case_branch(seed):
    rng = np.random.default_rng(seed)
    layout = L.branch_layout()
    p = {f"block.{k}": v for k, v in _block_params(seed).items()}
    for name in ("feat_deconv", "residual_conv", "image_deconv"):
        spec = layout[name]
        p[f"{name}.weight"] = rng.normal(0, 0.1, spec.weight_shape)
        p[f"{name}.bias"] = 0.1 * rng.standard_normal(spec.out_channels)
    arr = {"features": rng.standard_normal((1, 64, 5, 5)), "lr_image": rng.uniform(0, 1, (1, 1, 5, 5)), **p}

    def run(a):
        return L.branch_reconstruct(a["features"], a["lr_image"], a, 2, layout=layout)

    def fwd(a):
        out, _ = run(a)
        return [out["hr_image"], out["hr_features"]]

    def bwd(a, d):
        _, cache = run(a)
        df, dl, grads = L.branch_backward(d[0], d[1], cache, a)
        return {"features": df, "lr_image": dl, **grads}
    return check_arrays("branch_reconstruct", arr, fwd, bwd, KINK_TOL, seed,
                        h=1e-6, max_per_array=30)


def case_pyramid(seed, depth=2):
    """Full two-branch model on a 1x1x8x8 input; checks the input and every parameter group."""
    model = build_model(ModelConfig(recursion_depth=depth), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for k in model.params:
        if k.endswith(".bias"):
            model.params[k] = 0.05 * rng.standard_normal(model.params[k].shape)
    arr = {"lr_y": rng.uniform(0, 1, (1, 1, 8, 8))}
    arr.update(model.params._params)  # shared arrays: perturbations reach the model

    def fwd(a):
        out = forward_pyramid(model, a["lr_y"])
        return [out["sr2"], out["sr4"]]

    def bwd(a, d):
        _, cache = forward_pyramid(model, a["lr_y"], keep_cache=True)
        dx, grads = pyramid_backward(model, cache, d[0], d[1])
        return {"lr_y": dx, **grads}
    return check_arrays(f"pyramid(depth={depth})", arr, fwd, bwd, KINK_TOL, seed,
                        h=1e-6, max_per_array=6)


KERNEL_CASES = [case_conv2d, case_conv_transpose2d, case_leaky_relu, case_sigmoid, case_global_avg_pool,
                case_channel_scale, case_add, case_charbonnier]
COMPOSITE_CASES = [case_se_module, case_se_resblock, case_recursive_unit, case_branch, case_pyramid]


def run_suite(seeds=(0, 1, 2, 3, 4), include_composites: bool = True) -> list[CaseResult]:
    cases = KERNEL_CASES + (COMPOSITE_CASES if include_composites else [])
    results = []
    for case in cases:
        for s in seeds:
            r = case(s)
            r.name = f"{r.name}[seed={s}]"
            results.append(r)
    return results
