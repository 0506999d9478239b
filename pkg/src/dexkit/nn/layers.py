"""Dense layers, MLPs and the PointNet encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import ShapeError, Tensor, as_tensor, batch_norm, gelu, matmul, max_pool_points
from .params import ParamStore

POINTNET_HIDDEN_LAYERS = {"small": 1, "medium": 3, "large": 5}


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, init_scale: float = 1.0):
        self.weight = store.create(f"{name}.weight", (n_in, n_out), fan_in=n_in, scale=init_scale)
        self.bias = store.create(f"{name}.bias", (n_out,), init="zeros")

    def __call__(self, x) -> Tensor:
        return matmul(x, self.weight) + self.bias


class BatchNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.gamma = store.create(f"{name}.gamma", (dim,), init="ones")
        self.beta = store.create(f"{name}.beta", (dim,), init="zeros")

    def __call__(self, x) -> Tensor:
        return batch_norm(x, self.gamma, self.beta)


class MLP:
    """Linear layers with ``act`` between them (and after the last if ``final_act``)."""

    def __init__(self, store: ParamStore, name: str, sizes: list[int], act: Callable = gelu,
                 final_act: bool = False, norm: bool = False, out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        n = len(sizes) - 1
        self.layers = [Linear(store, f"{name}.{i}", a, b, out_scale if i == n - 1 else 1.0)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        n_norm = len(self.layers) - (0 if final_act else 1)
        self.norms = [BatchNorm(store, f"{name}.bn{i}", sizes[i + 1]) for i in range(n_norm)] if norm else []
        self.act = act
        self.final_act = final_act

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < last or self.final_act:
                if self.norms:
                    h = self.norms[i](h)
                h = self.act(h)
        return h


@dataclass(frozen=True)
class PointNetSpec:
    size: str = "small"
    hidden: int = 64
    out_dim: int = 256
    in_dim: int = 4

    def __post_init__(self):
        if self.size not in POINTNET_HIDDEN_LAYERS:
            raise ValueError(f"size must be one of {sorted(POINTNET_HIDDEN_LAYERS)}, got {self.size!r}")
        if min(self.hidden, self.out_dim, self.in_dim) < 1:
            raise ValueError("PointNet widths must be positive")

    @property
    def n_hidden(self) -> int:
        return POINTNET_HIDDEN_LAYERS[self.size]

    def layer_sizes(self) -> list[int]:
        return [self.in_dim] + [self.hidden] * self.n_hidden + [self.out_dim]


class PointNet:
    """Shared per-point MLP followed by a max over points.

    Input ``(..., N, in_dim)``; returns per-point features ``(..., N, D)``
    and the pooled global feature ``(..., D)``.
    """

    def __init__(self, store: ParamStore, spec: PointNetSpec = PointNetSpec(), prefix: str = "encoder"):
        self.spec = spec
        self.prefix = prefix
        self.mlp = MLP(store, f"{prefix}.mlp", spec.layer_sizes())

    def __call__(self, x) -> tuple[Tensor, Tensor]:
        x = as_tensor(x)
        if x.ndim < 2 or x.shape[-1] != self.spec.in_dim:
            raise ShapeError(f"PointNet expects (..., N, {self.spec.in_dim}), got {x.shape}")
        if x.shape[-2] == 0:
            raise ShapeError("PointNet needs at least one point")
        per_point = self.mlp(x)
        return per_point, max_pool_points(per_point)


def count_parameters(store: ParamStore, prefix: str = "") -> int:
    return int(sum(np.prod(store[n].shape) for n in store.names(prefix)))
