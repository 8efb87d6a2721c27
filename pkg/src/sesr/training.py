"""Multi-branch Charbonnier training for the SESR pyramid."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Protocol

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError
from .imresize import imresize, modcrop
from .model import SESRModel, forward_pyramid, pyramid_backward
from .params import ParamStore

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd_momentum")


@dataclass(frozen=True)
class LRDecay:
    factor: float = 0.5
    every_n_epochs: int = 100


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 16
    patch_size_lr: int = 32
    learning_rate: float = 1e-4
    lr_decay: LRDecay = field(default_factory=LRDecay)
    eps_charbonnier: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    patches_per_epoch: int = 512
    augment: bool = True

    def __post_init__(self):
        if isinstance(self.lr_decay, dict):
            object.__setattr__(self, "lr_decay", LRDecay(**self.lr_decay))
        if self.eps_charbonnier <= 0:
            raise ConfigError("eps_charbonnier must be positive")
        if self.patch_size_lr < 8:
            raise ConfigError("patch_size_lr must be >= 8")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr_decay.every_n_epochs < 1:
            raise ConfigError("lr_decay.every_n_epochs must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_decay.factor ** (epoch // self.lr_decay.every_n_epochs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "lr_decay" in d and isinstance(d["lr_decay"], dict):
            extra = set(d["lr_decay"]) - set(LRDecay.__dataclass_fields__)
            if extra:
                raise ConfigError(f"unknown lr_decay keys: {sorted(extra)}")
        return cls(**d)


# --------------------------------------------------------------------- loss

def charbonnier_loss(preds, targets, eps: float = 1e-3):
    """Sum over branches of the per-pixel mean of sqrt(d^2 + eps^2), averaged over the batch.

    Returns ``(loss, grads)`` with one gradient tensor per branch.
    """
    if eps <= 0:
        raise ConfigError("Charbonnier eps must be positive")
    if len(preds) != len(targets):
        raise ShapeError(f"{len(preds)} predictions for {len(targets)} targets")
    loss = 0.0
    grads = []
    for yhat, y in zip(preds, targets):
        if yhat.shape != y.shape:
            raise ShapeError(f"prediction {yhat.shape} does not match target {y.shape}")
        d = yhat - y.astype(yhat.dtype, copy=False)
        rho = np.sqrt(d * d + yhat.dtype.type(eps * eps))
        norm = d.size  # N * P_s
        loss += float(rho.sum(dtype=np.float64)) / norm
        grads.append(d / rho / yhat.dtype.type(norm))
    return loss, grads


# ---------------------------------------------------------------- optimizers

@dataclass
class OptimizerState:
    kind: str
    step: int = 0
    buffers: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    momentum: float = 0.9

    @classmethod
    def create(cls, kind: str, params: ParamStore) -> "OptimizerState":
        if kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {kind!r}")
        names = ("m", "v") if kind == "adam" else ("velocity",)
        return cls(kind, 0, {b: {k: np.zeros_like(p) for k, p in params.items()} for b in names})


def optimizer_step(params: ParamStore, grads, state: OptimizerState, lr: float) -> None:
    """Update ``params`` in place. Non-finite gradients abort before anything is touched."""
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k}; step {state.step + 1} skipped")
    state.step += 1
    t = state.step
    if state.kind == "adam":
        b1, b2 = state.beta1, state.beta2
        c1, c2 = 1 - b1 ** t, 1 - b2 ** t
        for k, g in grads.items():
            m, v = state.buffers["m"][k], state.buffers["v"][k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            step = lr * (m / c1) / (np.sqrt(v / c2) + state.adam_eps)
            params[k] = params[k] - step.astype(params[k].dtype)
    else:
        for k, g in grads.items():
            vel = state.buffers["velocity"][k]
            vel *= state.momentum
            vel += g
            params[k] = params[k] - (lr * vel).astype(params[k].dtype)


# ------------------------------------------------------------------ patches

Triple = tuple[np.ndarray, np.ndarray, np.ndarray]


class PatchSource(Protocol):
    def batches(self, epoch: int, batch_size: int) -> Iterator[Triple]: ...


def build_pyramid(hr: np.ndarray, antialias: bool = True) -> Triple:
    """Return (lr, x2, x4) planes for an HR plane, cropped so it divides by 4."""
    hr = modcrop(np.asarray(hr, dtype=np.float64), 4)
    mid = imresize(hr, 0.5, antialias=antialias)
    lr = imresize(hr, 0.25, antialias=antialias)
    return lr, mid, hr


def dihedral(x: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 flips/rotations of the last two axes."""
    if k >= 4:
        x = x[..., ::-1]
    return np.rot90(x, k % 4, axes=(-2, -1))


def _stack(triples, dtype) -> Triple:
    return tuple(np.stack([t[i] for t in triples])[:, None].astype(dtype) for i in range(3))


class PatchSampler:
    """Random aligned (lr, x2, x4) crops from a list of HR Y planes in [0, 1].

    Each epoch draws from its own generator seeded by (seed, epoch), so an
    interrupted run resumes with exactly the patches it would have seen.
    """

    def __init__(self, hr_planes, patch_size_lr: int = 32, patches_per_epoch: int = 512,
                 augment: bool = True, seed: int = 0, dtype=np.float32):
        self.pyramids = [build_pyramid(p) for p in hr_planes]
        self.pyramids = [t for t in self.pyramids if min(t[0].shape) >= patch_size_lr]
        if not self.pyramids:
            raise ShapeError(f"no training image is large enough for {patch_size_lr}px LR patches")
        self.patch = patch_size_lr
        self.patches_per_epoch = patches_per_epoch
        self.augment = augment
        self.seed = seed
        self.dtype = dtype

    def sample(self, rng: np.random.Generator) -> Triple:
        lr, mid, hr = self.pyramids[rng.integers(len(self.pyramids))]
        p = self.patch
        i = int(rng.integers(lr.shape[0] - p + 1))
        j = int(rng.integers(lr.shape[1] - p + 1))
        crops = (lr[i:i + p, j:j + p], mid[2 * i:2 * (i + p), 2 * j:2 * (j + p)],
                 hr[4 * i:4 * (i + p), 4 * j:4 * (j + p)])
        if self.augment:
            k = int(rng.integers(8))
            crops = tuple(dihedral(c, k) for c in crops)
        return crops

    def batches(self, epoch: int, batch_size: int) -> Iterator[Triple]:
        rng = np.random.default_rng([self.seed, epoch])
        remaining = self.patches_per_epoch
        while remaining > 0:
            n = min(batch_size, remaining)
            yield _stack([self.sample(rng) for _ in range(n)], self.dtype)
            remaining -= n


class FixedPatches:
    """A fixed list of triples, reshuffled per epoch (used by the overfit suite)."""

    def __init__(self, triples, seed: int = 0, shuffle: bool = True, dtype=np.float32):
        self.triples = list(triples)
        self.seed = seed
        self.shuffle = shuffle
        self.dtype = dtype

    def __len__(self):
        return len(self.triples)

    def batches(self, epoch: int, batch_size: int) -> Iterator[Triple]:
        order = np.arange(len(self.triples))
        if self.shuffle:
            np.random.default_rng([self.seed, epoch]).shuffle(order)
        for s in range(0, len(order), batch_size):
            yield _stack([self.triples[i] for i in order[s:s + batch_size]], self.dtype)


def extract_fixed_patches(hr_planes, n: int = 8, patch_size_lr: int = 12, seed: int = 0) -> list[Triple]:
    """Deterministic set of ``n`` aligned triples, drawn round-robin over the images."""
    pyramids = [build_pyramid(p) for p in hr_planes]
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        lr, mid, hr = pyramids[k % len(pyramids)]
        p = patch_size_lr
        i = int(rng.integers(lr.shape[0] - p + 1))
        j = int(rng.integers(lr.shape[1] - p + 1))
        out.append((lr[i:i + p, j:j + p].copy(), mid[2 * i:2 * (i + p), 2 * j:2 * (j + p)].copy(),
                    hr[4 * i:4 * (i + p), 4 * j:4 * (j + p)].copy()))
    return out


# -------------------------------------------------------------------- loops

def train_step(model: SESRModel, batch: Triple, state: OptimizerState, lr: float, eps: float) -> float:
    x, y2, y4 = batch
    outs, cache = forward_pyramid(model, x, keep_cache=True)
    loss, (g2, g4) = charbonnier_loss([outs["sr2"], outs["sr4"]], [y2, y4], eps)
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    _, grads = pyramid_backward(model, cache, g2, g4)
    optimizer_step(model.params, grads, state, lr)
    return loss


def train_epoch(model: SESRModel, dataset: PatchSource, cfg: TrainConfig, state: OptimizerState,
                epoch: int = 0) -> dict:
    """One pass over ``dataset.batches(epoch, ...)``; returns the sample-weighted mean loss."""
    lr = cfg.lr_at(epoch)
    total, count = 0.0, 0
    for b, batch in enumerate(dataset.batches(epoch, cfg.batch_size)):
        try:
            loss = train_step(model, batch, state, lr, cfg.eps_charbonnier)
        except NonFiniteError as exc:
            raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from exc
        n = batch[0].shape[0]
        total += loss * n
        count += n
    return {"epoch": epoch, "mean_loss": total / max(count, 1), "lr": lr}


def fit(model: SESRModel, dataset: PatchSource, cfg: TrainConfig, state: OptimizerState | None = None,
        start_epoch: int = 0, log_path=None, checkpoint_dir=None, checkpoint_every: int = 1,
        on_epoch=None) -> list[dict]:
    """Run epochs ``start_epoch .. cfg.epochs - 1``, logging JSON lines and saving checkpoints."""
    from .checkpoint import save_checkpoint

    state = state or OptimizerState.create(cfg.optimizer, model.params)
    history = []
    log_file = open(log_path, "a") if log_path else None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            t0 = time.perf_counter()
            rec = train_epoch(model, dataset, cfg, state, epoch)
            rec["wall_seconds"] = round(time.perf_counter() - t0, 4)
            history.append(rec)
            log.info("epoch %d loss %.6f lr %.2e", epoch, rec["mean_loss"], rec["lr"])
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            last = epoch == cfg.epochs - 1
            if checkpoint_dir and ((epoch + 1) % checkpoint_every == 0 or last):
                path = Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}.ckpt"
                save_checkpoint(model, state, path, meta={"epoch": epoch + 1, "train": cfg.to_dict()})
            if on_epoch:
                on_epoch(rec)
    finally:
        if log_file:
            log_file.close()
    return history
