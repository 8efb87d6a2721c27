"""Checkpoint container.

Layout::

    b"SESRCKPT"                 8-byte magic
    uint32 little-endian        header length in bytes
    header                      UTF-8 JSON: format version, model config, seed,
                                optimizer kind/step, metadata, and the ordered
                                list of groups {name, shape}
    payload                     each group as little-endian float32, in header order

Model parameters come first, then optimizer buffers named
``optimizer.<buffer>.<param>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, SESRModel, model_layout
from .params import ParamStore
from .training import OptimizerState

MAGIC = b"SESRCKPT"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


def save_checkpoint(model: SESRModel, state: OptimizerState | None, path, meta: dict | None = None) -> None:
    groups = [(name, value) for name, value in model.params.items()]
    optimizer = None
    if state is not None:
        optimizer = {"kind": state.kind, "step": state.step}
        for buf, arrays in state.buffers.items():
            groups.extend((f"optimizer.{buf}.{k}", v) for k, v in arrays.items())
    header = {
        "format": "sesr-checkpoint",
        "version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "seed": model.seed,
        "dtype": str(model.dtype),
        "optimizer": optimizer,
        "meta": meta or {},
        "groups": [{"name": n, "shape": list(v.shape)} for n, v in groups],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, v in groups:
            f.write(np.ascontiguousarray(v, dtype=_LE_F32).tobytes())
    tmp.replace(path)


def read_header(path) -> dict:
    with open(path, "rb") as f:
        return _read_header(f, path)[0]


def _read_header(f, path):
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a SESR checkpoint (bad magic)")
    raw = f.read(4)
    if len(raw) < 4:
        raise CheckpointError(f"{path}: truncated before header length")
    (n,) = struct.unpack("<I", raw)
    blob = f.read(n)
    if len(blob) < n:
        raise CheckpointError(f"{path}: truncated inside header")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('version')!r}, this build reads {FORMAT_VERSION}")
    return header, len(MAGIC) + 4 + n


def load_checkpoint(path, dtype=None):
    """Return ``(model, optimizer_state_or_None, meta)``."""
    path = Path(path)
    with open(path, "rb") as f:
        header, _ = _read_header(f, path)
        arrays = {}
        for g in header["groups"]:
            shape = tuple(g["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            raw = f.read(count * 4)
            if len(raw) < count * 4:
                raise CheckpointError(
                    f"{path}: truncated in group {g['name']!r} ({len(raw)} of {count * 4} bytes)")
            arrays[g["name"]] = np.frombuffer(raw, dtype=_LE_F32).reshape(shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last group")

    cfg = ModelConfig.from_dict(header["model_config"])
    layout = model_layout(cfg)
    dtype = np.dtype(dtype or header.get("dtype", "float32"))
    expected = [f"{n}.{kind}" for n in layout for kind in ("weight", "bias")]
    params = ParamStore()
    for name in expected:
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter group {name!r}")
        spec = layout[name.rsplit(".", 1)[0]]
        want = spec.weight_shape if name.endswith("weight") else (spec.out_channels,)
        if arrays[name].shape != want:
            raise CheckpointError(f"{path}: group {name!r} has shape {arrays[name].shape}, config needs {want}")
        params.add(name, arrays[name].astype(dtype))
    model = SESRModel(cfg, params, header.get("seed", 0), layout)

    state = None
    opt = header.get("optimizer")
    if opt:
        state = OptimizerState.create(opt["kind"], params)
        state.step = int(opt["step"])
        for buf, bufs in state.buffers.items():
            for k in bufs:
                key = f"optimizer.{buf}.{k}"
                if key not in arrays:
                    raise CheckpointError(f"{path}: missing optimizer group {key!r}")
                bufs[k] = arrays[key].astype(dtype)
    return model, state, header.get("meta", {})
