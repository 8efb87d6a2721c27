"""Named parameter arrays with paired gradient buffers."""

from __future__ import annotations

import hashlib
from collections.abc import Iterator, Mapping

import numpy as np


class ParamStore(Mapping):
    """Ordered ``name -> array`` mapping plus a gradient buffer per entry.

    Names are dotted paths (``branch2.block.conv1.weight``). ``view(prefix)``
    returns a plain dict of the arrays below ``prefix`` with the prefix
    stripped; the arrays are shared, not copied.
    """

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self._params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        self._params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        old = self._params[name]
        if value.shape != old.shape:
            raise ValueError(f"{name}: shape {value.shape} != {old.shape}")
        self._params[name] = np.asarray(value, dtype=old.dtype)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def view(self, prefix: str) -> dict[str, np.ndarray]:
        pre = prefix + "."
        return {k[len(pre):]: v for k, v in self._params.items() if k.startswith(pre)}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)

    def accumulate(self, prefix: str, grads: Mapping[str, np.ndarray]) -> None:
        pre = prefix + "." if prefix else ""
        for k, g in grads.items():
            self.grads[pre + k] += g

    def count(self) -> int:
        return sum(int(v.size) for v in self._params.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, value in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(value).tobytes())
        return h.hexdigest()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._params.items()})

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({k: v.astype(dtype) for k, v in self._params.items()})


def prefixed(prefix: str, grads: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v for k, v in grads.items()}
