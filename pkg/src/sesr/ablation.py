"""Desk-scale learning checks and the plain-vs-SE block ablation.

``overfit_suite`` trains on a handful of fixed patches and compares the
result against bicubic on those same patches. ``ablation_run`` trains the
plain and SE variants from seed-matched weights under one budget and
reports them side by side; it makes no claim about the size of the gap.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from .config import config_digest
from .evaluation import evaluate_dataset
from .imresize import imresize
from .metrics import psnr
from .model import ModelConfig, SESRModel, build_model, forward_pyramid, pin_se_gains
from .training import (FixedPatches, OptimizerState, PatchSource, TrainConfig, charbonnier_loss,
                       extract_fixed_patches, fit)


def dataset_loss(model: SESRModel, dataset: PatchSource, eps: float = 1e-3, batch_size: int = 16) -> float:
    """Sample-weighted mean loss over ``dataset.batches(0, ...)`` without updating anything."""
    total, count = 0.0, 0
    for x, y2, y4 in dataset.batches(0, batch_size):
        out = forward_pyramid(model, x)
        loss, _ = charbonnier_loss([out["sr2"], out["sr4"]], [y2, y4], eps)
        total += loss * x.shape[0]
        count += x.shape[0]
    return total / max(count, 1)


def patch_psnr(model: SESRModel, triples) -> dict:
    """Mean per-patch PSNR of the model and of bicubic at x2 and x4 (border = scale)."""
    res = {"x2": {"sesr": [], "bicubic": []}, "x4": {"sesr": [], "bicubic": []}}
    for lr, mid, hr in triples:
        out = forward_pyramid(model, lr[None, None])
        for key, target, scale in (("x2", mid, 2), ("x4", hr, 4)):
            sr = np.clip(out[f"sr{scale}"][0, 0].astype(np.float64), 0, 1) * 255
            bic = np.clip(imresize(lr, scale), 0, 1) * 255
            res[key]["sesr"].append(psnr(sr, target * 255, scale))
            res[key]["bicubic"].append(psnr(bic, target * 255, scale))
    return {k: {m: float(np.mean(v)) for m, v in d.items()} for k, d in res.items()}


@dataclass
class OverfitResult:
    initial_loss: float
    final_loss: float
    history: list[dict]
    psnr: dict
    config: dict = field(default_factory=dict)

    @property
    def loss_ratio(self) -> float:
        return self.final_loss / self.initial_loss

    def gain_db(self, scale: int) -> float:
        d = self.psnr[f"x{scale}"]
        return d["sesr"] - d["bicubic"]


OVERFIT_BUDGET = TrainConfig(epochs=200, batch_size=4, patch_size_lr=12, learning_rate=1e-3,
                             lr_decay={"factor": 1.0, "every_n_epochs": 1000}, augment=False)


def overfit_suite(hr_planes, model_config: ModelConfig | None = None, seed: int = 0, n_patches: int = 8,
                  train: TrainConfig = OVERFIT_BUDGET, model: SESRModel | None = None,
                  on_epoch=None) -> OverfitResult:
    """Train on ``n_patches`` fixed LR patches cut from ``hr_planes`` (Y in [0, 1])."""
    train = replace(train, seed=seed)
    triples = extract_fixed_patches(hr_planes, n=n_patches, patch_size_lr=train.patch_size_lr, seed=seed)
    data = FixedPatches(triples, seed=seed)
    model = model or build_model(model_config, seed=seed)
    initial = dataset_loss(model, data, train.eps_charbonnier, train.batch_size)
    hist = fit(model, data, train, on_epoch=on_epoch)
    final = dataset_loss(model, data, train.eps_charbonnier, train.batch_size)
    return OverfitResult(initial, final, hist, patch_psnr(model, triples),
                         {"model": model.config.to_dict(), "train": train.to_dict(), "n_patches": n_patches})


def smoothed_non_increasing(losses, window: int = 10, slack: float = 0.0) -> bool:
    """True when consecutive non-overlapping ``window``-epoch means never rise."""
    means = [float(np.mean(losses[i:i + window])) for i in range(0, len(losses) - window + 1, window)]
    return all(b <= a * (1 + slack) for a, b in zip(means, means[1:]))


# ---------------------------------------------------------------- ablation

def _eval_sets(model, eval_sets, scale, threads):
    return {name: evaluate_dataset("sesr", d, scale, model=model, threads=threads, name=name).to_dict()
            for name, d in (eval_sets or {}).items()}


def ablation_run(dataset: PatchSource, train: TrainConfig, model_config: ModelConfig | None = None,
                 seed: int = 0, eval_sets: dict | None = None, scale: int = 4, kinds=("plain", "se"),
                 threads: int | None = None, patches=None) -> dict:
    """Train each block kind from the same seed and budget; return paired reports.

    ``epoch0`` evaluates each arm before training with SE gains pinned to 1,
    where both arms compute the same function. ``patches`` (fixed triples)
    adds per-patch PSNR for both arms.
    """
    base = model_config or ModelConfig()
    arms = {}
    for kind in kinds:
        cfg = replace(base, block_kind=kind)
        model = build_model(cfg, seed=seed)
        pinned = copy.deepcopy(model)
        pin_se_gains(pinned)
        arm = {
            "model_config": cfg.to_dict(),
            "config_digest": config_digest({"model": cfg.to_dict(), "train": train.to_dict(), "seed": seed}),
            "epoch0": _eval_sets(pinned, eval_sets, scale, threads),
            "initial_loss": dataset_loss(model, dataset, train.eps_charbonnier, train.batch_size),
        }
        if patches is not None:
            arm["epoch0_patches"] = patch_psnr(pinned, patches)
        state = OptimizerState.create(train.optimizer, model.params)
        arm["history"] = fit(model, dataset, train, state=state)
        arm["final_loss"] = dataset_loss(model, dataset, train.eps_charbonnier, train.batch_size)
        arm["final"] = _eval_sets(model, eval_sets, scale, threads)
        if patches is not None:
            arm["final_patches"] = patch_psnr(model, patches)
        arms[kind] = arm
    return {"scale": scale, "seed": seed, "train": train.to_dict(), "arms": arms}
