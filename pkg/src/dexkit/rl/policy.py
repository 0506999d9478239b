"""Actor-critic over fused point-cloud and proprioceptive features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import autodiff as ad
from ..nn.layers import MLP, PointNet, PointNetSpec
from ..nn.params import ParamStore
from ..robot import N_DOF
from ..sensing import PROPRIO_DIM, Observation

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0


@dataclass(frozen=True)
class PolicySpec:
    encoder: PointNetSpec = PointNetSpec()
    proprio_hidden: int = 128
    proprio_out: int = 128
    head_hidden: int = 256
    act_dim: int = N_DOF
    proprio_dim: int = PROPRIO_DIM
    log_std_init: float = -0.5
    camera_blind: bool = False

    @property
    def feature_dim(self) -> int:
        return self.encoder.out_dim + self.proprio_out


@dataclass
class PolicyOutput:
    mean: ad.Tensor
    log_std: ad.Tensor
    value: ad.Tensor


def stack_observations(obs: list[Observation]) -> tuple[np.ndarray, np.ndarray]:
    points = np.stack([o.cloud.features() for o in obs]).astype(np.float32)
    proprio = np.stack([o.proprio for o in obs]).astype(np.float32)
    return points, proprio


class ActorCritic:
    """Shared extractor ``F1 (PointNet) ⊕ F2 (proprio MLP)`` feeding policy and value heads.

    With ``camera_blind`` the point-cloud branch is replaced by zeros, so
    the policy depends on proprioception only.
    """

    def __init__(self, spec: PolicySpec = PolicySpec(), seed: int = 0, store: ParamStore | None = None):
        self.spec = spec
        self.store = store if store is not None else ParamStore(seed)
        st = self.store
        self.encoder = PointNet(st, spec.encoder, prefix="encoder")
        self.proprio = MLP(st, "proprio", [spec.proprio_dim, spec.proprio_hidden, spec.proprio_out], final_act=True)
        self.actor = MLP(st, "actor", [spec.feature_dim, spec.head_hidden, spec.act_dim], out_scale=0.01)
        self.critic = MLP(st, "critic", [spec.feature_dim, spec.head_hidden, 1])
        self.log_std = st.create("log_std", (spec.act_dim,), init="const", value=spec.log_std_init)

    def features(self, points, proprio) -> ad.Tensor:
        proprio = np.asarray(proprio, dtype=ad.default_dtype())
        f2 = self.proprio(proprio)
        if self.spec.camera_blind:
            f1 = ad.Tensor(np.zeros((len(proprio), self.spec.encoder.out_dim), dtype=f2.data.dtype))
        else:
            f1 = self.encoder(np.asarray(points, dtype=ad.default_dtype()))[1]
        return ad.concat([f1, f2], axis=-1)

    def __call__(self, points, proprio) -> PolicyOutput:
        h = self.features(points, proprio)
        value = ad.reshape(self.critic(h), (-1,))
        return PolicyOutput(self.actor(h), ad.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX), value)

    def act(self, points, proprio, rng: np.random.Generator | None = None,
            deterministic: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Sample actions; returns ``(action, log_prob, value, mean)`` as arrays.

        The returned action is the raw Gaussian sample; environments clamp
        it to ``[-1, 1]``.
        """
        out = self(points, proprio)
        mean = out.mean.data.astype(np.float64)
        std = np.exp(out.log_std.data.astype(np.float64))
        if deterministic:
            action = mean.copy()
        else:
            action = mean + std * rng.standard_normal(mean.shape)
        logp = gaussian_log_prob_np(action, mean, out.log_std.data.astype(np.float64))
        return action, logp, out.value.data.astype(np.float64), mean

    def value(self, points, proprio) -> np.ndarray:
        return self(points, proprio).value.data.astype(np.float64)


def gaussian_log_prob_np(x, mean, log_std) -> np.ndarray:
    z = (x - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * np.log(2 * np.pi), axis=-1)
