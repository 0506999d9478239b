"""Named parameter storage with seed-derived initialisation."""

from __future__ import annotations

import hashlib
from typing import Iterator

import numpy as np

from .autodiff import Tensor, default_dtype


def name_seed(seed: int, name: str) -> int:
    """Stable 64-bit seed for parameter ``name`` under a store seed."""
    return int.from_bytes(hashlib.sha256(f"{seed}:{name}".encode()).digest()[:8], "little")


class ParamStore:
    """Ordered ``name -> Tensor`` map. Insertion order is iteration order."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    def create(self, name: str, shape, init: str = "uniform", fan_in: int | None = None,
               value: float = 0.0, scale: float = 1.0) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        shape = tuple(int(s) for s in shape)
        if init == "uniform":
            bound = scale / np.sqrt(fan_in if fan_in else shape[0])
            data = np.random.default_rng(name_seed(self.seed, name)).uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "const":
            data = np.full(shape, value)
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data.astype(default_dtype()), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items() if n.startswith(prefix)}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "", strict: bool = True) -> list[str]:
        """Copy matching arrays in place; returns the loaded names.

        With ``strict`` every selected name must exist on both sides with
        the same shape.
        """
        wanted = {n: a for n, a in state.items() if n.startswith(prefix)}
        mine = set(self.names(prefix))
        if strict:
            missing = sorted(mine - set(wanted))
            unexpected = sorted(set(wanted) - mine)
            if missing or unexpected:
                raise KeyError(f"parameter mismatch: missing {missing}, unexpected {unexpected}")
        loaded = []
        for n, a in wanted.items():
            if n not in self._params:
                continue
            t = self._params[n]
            a = np.asarray(a)
            if a.shape != t.shape:
                raise ValueError(f"shape mismatch for {n!r}: checkpoint {a.shape}, model {t.shape}")
            t.data = a.astype(t.data.dtype, copy=True)
            loaded.append(n)
        return loaded

    def shapes(self, prefix: str = "") -> dict[str, tuple[int, ...]]:
        return {n: t.shape for n, t in self._params.items() if n.startswith(prefix)}

    def digest(self, prefix: str = "") -> str:
        h = hashlib.sha256()
        for n, t in self._params.items():
            if n.startswith(prefix):
                h.update(n.encode())
                h.update(str(t.shape).encode())
                h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()
