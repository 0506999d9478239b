"""Adam and gradient clipping."""

from __future__ import annotations

import numpy as np

from .params import ParamStore


class Adam:
    """Adam with bias correction. ``step`` zeroes gradients afterwards."""

    def __init__(self, store: ParamStore, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 names: list[str] | None = None):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.store = store
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.names = list(store) if names is None else list(names)
        self.m = {n: np.zeros(store[n].shape, dtype=np.float64) for n in self.names}
        self.v = {n: np.zeros(store[n].shape, dtype=np.float64) for n in self.names}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for n in self.names:
            p = self.store[n]
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            m = self.m[n] = self.beta1 * self.m[n] + (1 - self.beta1) * g
            v = self.v[n] = self.beta2 * self.v[n] + (1 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)
        self.store.zero_grad()

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}, "lr": self.lr}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}


def grad_norm(store: ParamStore) -> float:
    total = 0.0
    for _, t in store.items():
        if t.grad is not None:
            g = t.grad.astype(np.float64)
            total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = grad_norm(store)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for _, t in store.items():
            if t.grad is not None:
                t.grad = (t.grad * scale).astype(t.grad.dtype)
    return norm
