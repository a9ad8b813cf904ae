"""Named parameter storage and the JSON checkpoint format."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_VERSION = "1"


class ParamStore:
    """Named trainable tensors plus non-trainable buffers (running statistics).

    Iteration is lexicographic by name so optimizer updates happen in a fixed
    order. Adam moments live in ``adam_m`` / ``adam_v`` keyed by name.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params or name in self.buffers:
            raise KeyError(f"duplicate parameter name '{name}'")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self._params or name in self.buffers:
            raise KeyError(f"duplicate parameter name '{name}'")
        self.buffers[name] = np.array(value, dtype=np.float64)
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def num_params(self) -> int:
        return int(sum(t.value.size for t in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def snapshot(self) -> dict:
        """Deep copy of parameter values and buffers."""
        return {
            "params": {n: t.value.copy() for n, t in self._params.items()},
            "buffers": {n: b.copy() for n, b in self.buffers.items()},
        }

    def restore(self, snap: dict):
        for n, v in snap["params"].items():
            if self._params[n].value.shape != v.shape:
                raise ValueError(f"shape mismatch restoring '{n}'")
            self._params[n].value[...] = v
        for n, v in snap["buffers"].items():
            self.buffers[n][...] = v

    # -- checkpoint -------------------------------------------------------

    def to_dict(self) -> dict:
        def pack(arr):
            return {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}

        return {
            "version": CHECKPOINT_VERSION,
            "params": {n: pack(self._params[n].value) for n in self.names()},
            "buffers": {n: pack(self.buffers[n]) for n in sorted(self.buffers)},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ParamStore":
        if str(doc.get("version")) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        store = cls()
        for n, rec in doc["params"].items():
            store.add(n, np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"]))
        for n, rec in doc.get("buffers", {}).items():
            store.add_buffer(n, np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"]))
        return store

    def save(self, path, extra: dict | None = None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_dict(json.loads(Path(path).read_text()))
