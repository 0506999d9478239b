"""PPO with GAE: rollout storage, collection, advantage estimation, updates."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from ..env import DexEnv, EpisodeStats
from ..nn import autodiff as ad
from ..nn.optim import Adam, clip_grad_norm
from .policy import ActorCritic, stack_observations


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 10
    minibatch_size: int = 256
    horizon: int = 200
    n_envs: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    lr: float = 3e-4
    total_steps: int = 1_000_000
    log_std_init: float = -0.5
    max_grad_norm: float | None = 0.5

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if min(self.epochs, self.minibatch_size, self.horizon, self.n_envs) < 1:
            raise ValueError("epochs, minibatch_size, horizon and n_envs must be positive")
        if self.lr <= 0 or self.total_steps < 0:
            raise ValueError("lr must be positive and total_steps non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class RolloutBuffer:
    """Fixed-capacity ``horizon x n_envs`` on-policy storage."""

    def __init__(self, horizon: int, n_envs: int, n_points: int, proprio_dim: int, act_dim: int):
        self.horizon, self.n_envs = horizon, n_envs
        t, e = horizon, n_envs
        self.points = np.zeros((t, e, n_points, 4), dtype=np.float32)
        self.proprio = np.zeros((t, e, proprio_dim), dtype=np.float32)
        self.actions = np.zeros((t, e, act_dim))
        self.means = np.zeros((t, e, act_dim))
        self.log_std = np.zeros((t, act_dim))
        self.log_probs = np.zeros((t, e))
        self.rewards = np.zeros((t, e))
        self.values = np.zeros((t, e))
        self.dones = np.zeros((t, e), dtype=bool)
        self.stages = np.zeros((t, e), dtype=np.int8)
        self.last_values = np.zeros(e)
        self.advantages = np.zeros((t, e))
        self.returns = np.zeros((t, e))
        self.ptr = 0

    def __len__(self):
        return self.ptr * self.n_envs

    @property
    def capacity(self) -> int:
        return self.horizon * self.n_envs

    @property
    def full(self) -> bool:
        return self.ptr == self.horizon

    def add(self, points, proprio, actions, means, log_std, log_probs, rewards, values, dones, stages):
        if self.full:
            raise IndexError("rollout buffer is full")
        i = self.ptr
        self.points[i], self.proprio[i] = points, proprio
        self.actions[i], self.means[i], self.log_std[i] = actions, means, log_std
        self.log_probs[i], self.rewards[i], self.values[i] = log_probs, rewards, values
        self.dones[i], self.stages[i] = dones, stages
        self.ptr += 1

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape((self.capacity,) + a.shape[2:])

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in ("points", "proprio", "actions", "log_probs", "rewards", "values", "dones"):
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return h.hexdigest()


def compute_gae(rewards, values, dones, last_values, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and returns for ``(T, E)`` arrays.

    ``dones[t]`` marks an episode ending after step ``t``; nothing past it
    leaks into ``A_t``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if rewards.ndim == 1:
        adv, ret = compute_gae(rewards[:, None], values[:, None], dones[:, None],
                               np.atleast_1d(last_values), gamma, lam)
        return adv[:, 0], ret[:, 0]
    t_max = len(rewards)
    adv = np.zeros_like(rewards)
    next_adv = np.zeros(rewards.shape[1])
    next_value = np.asarray(last_values, dtype=np.float64)
    for t in range(t_max - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        next_adv = delta + gamma * lam * live * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 1e-12 else 1.0)


class VectorEnv:
    """Independent environments stepped in lock-step with auto-reset."""

    def __init__(self, envs: list[DexEnv]):
        if not envs:
            raise ValueError("need at least one environment")
        self.envs = envs
        self.obs = [e.reset() for e in envs]
        self.completed: list[EpisodeStats] = []

    def __len__(self):
        return len(self.envs)

    def batch(self):
        return stack_observations(self.obs)

    def step(self, actions: np.ndarray):
        rewards = np.zeros(len(self.envs))
        dones = np.zeros(len(self.envs), dtype=bool)
        stages = np.zeros(len(self.envs), dtype=np.int8)
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            obs, r, d, info = env.step(np.clip(a, -1.0, 1.0))
            rewards[i], dones[i], stages[i] = r, d, info["stage"]
            if d:
                self.completed.append(info["episode"])
                obs = env.reset()
            self.obs[i] = obs
        return rewards, dones, stages

    def pop_completed(self) -> list[EpisodeStats]:
        out, self.completed = self.completed, []
        return out


def collect_rollouts(venv: VectorEnv, policy: ActorCritic, horizon: int, rng: np.random.Generator,
                     buffer: RolloutBuffer | None = None) -> RolloutBuffer:
    """Fill a buffer with ``horizon`` steps from every environment."""
    pts, pro = venv.batch()
    if buffer is None:
        buffer = RolloutBuffer(horizon, len(venv), pts.shape[1], pro.shape[1], policy.spec.act_dim)
    buffer.ptr = 0
    for _ in range(horizon):
        action, logp, value, mean = policy.act(pts, pro, rng)
        rewards, dones, stages = venv.step(action)
        log_std = np.clip(policy.log_std.data.astype(np.float64), -5.0, 1.0)
        buffer.add(pts, pro, action, mean, log_std, logp, rewards, value, dones, stages)
        pts, pro = venv.batch()
    buffer.last_values = policy.value(pts, pro)
    return buffer


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_frac: float = 0.0
    approx_kl: float = 0.0
    aborted: bool = False
    n_minibatches: int = 0


def ppo_loss(policy: ActorCritic, points, proprio, actions, old_logp, adv, returns, cfg: PPOConfig):
    """Clipped surrogate plus value and entropy terms; returns ``(loss, parts)``."""
    out = policy(points, proprio)
    logp = ad.gaussian_log_prob(ad.Tensor(actions.astype(out.mean.data.dtype)), out.mean, out.log_std)
    ratio = ad.exp(logp - ad.Tensor(old_logp.astype(out.mean.data.dtype)))
    a = ad.Tensor(adv.astype(out.mean.data.dtype))
    surr = ad.minimum(ratio * a, ad.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * a)
    policy_loss = -ad.mean(surr)
    value_loss = ad.mse(out.value, ad.Tensor(returns.astype(out.value.data.dtype)))
    entropy = ad.gaussian_entropy(out.log_std)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    r = ratio.data.astype(np.float64)
    parts = dict(policy_loss=policy_loss.item(), value_loss=value_loss.item(), entropy=entropy.item(),
                 clip_frac=float(np.mean(np.abs(r - 1) > cfg.clip_eps)),
                 approx_kl=float(np.mean((r - 1) - np.log(r))))
    return loss, parts


def ppo_update(buffer: RolloutBuffer, policy: ActorCritic, opt: Adam, cfg: PPOConfig,
               rng: np.random.Generator) -> UpdateStats:
    """Epochs of shuffled minibatch updates on a full buffer."""
    if not buffer.full:
        raise ValueError("rollout buffer must be full before an update")
    adv, ret = compute_gae(buffer.rewards, buffer.values, buffer.dones, buffer.last_values,
                           cfg.gamma, cfg.gae_lambda)
    buffer.advantages, buffer.returns = adv, ret
    flat_adv = normalize_advantages(adv.reshape(-1))
    pts, pro = buffer.flat("points"), buffer.flat("proprio")
    acts, old_lp, flat_ret = buffer.flat("actions"), buffer.flat("log_probs"), ret.reshape(-1)
    n = buffer.capacity
    mb = min(cfg.minibatch_size, n)
    stats = UpdateStats()
    sums = dict(policy_loss=0.0, value_loss=0.0, entropy=0.0, clip_frac=0.0, approx_kl=0.0)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n - mb + 1, mb):
            idx = perm[start:start + mb]
            loss, parts = ppo_loss(policy, pts[idx], pro[idx], acts[idx], old_lp[idx], flat_adv[idx],
                                   flat_ret[idx], cfg)
            if not np.isfinite(loss.item()):
                policy.store.zero_grad()
                stats.aborted = True
                break
            loss.backward()
            if cfg.max_grad_norm:
                clip_grad_norm(policy.store, cfg.max_grad_norm)
            opt.step()
            for k in sums:
                sums[k] += parts[k]
            stats.n_minibatches += 1
        if stats.aborted:
            break
    if stats.n_minibatches:
        for k, v in sums.items():
            setattr(stats, k, v / stats.n_minibatches)
    return stats


@dataclass
class EvalResult:
    success_rate: float
    mean_return: float
    mean_first_success_step: float | None
    episodes: list[EpisodeStats] = field(default_factory=list)

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)


def evaluate_policy(envs: list[DexEnv], policy: ActorCritic, n_episodes: int, deterministic: bool = True,
                    seed: int = 0, object_indices: list[int] | None = None) -> EvalResult:
    """Run ``n_episodes`` full-horizon episodes spread round-robin over ``envs``.

    ``object_indices[k]`` (optional) fixes the object of episode ``k``;
    otherwise each env cycles through its own object pool.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be positive")
    rng = np.random.default_rng(seed)
    queues: list[list[int]] = [[] for _ in envs]
    for k in range(n_episodes):
        queues[k % len(envs)].append(k)
    results: list[EpisodeStats | None] = [None] * n_episodes
    active = {}
    for i, env in enumerate(envs):
        if queues[i]:
            k = queues[i].pop(0)
            obj = None if object_indices is None else object_indices[k]
            active[i] = (k, env.reset(obj))
    while active:
        order = sorted(active)
        pts, pro = stack_observations([active[i][1] for i in order])
        action, _, _, _ = policy.act(pts, pro, rng, deterministic=deterministic)
        for row, i in enumerate(order):
            k, _ = active[i]
            obs, _, done, info = envs[i].step(np.clip(action[row], -1, 1))
            if done:
                results[k] = info["episode"]
                if queues[i]:
                    k2 = queues[i].pop(0)
                    obj = None if object_indices is None else object_indices[k2]
                    active[i] = (k2, envs[i].reset(obj))
                else:
                    del active[i]
            else:
                active[i] = (k, obs)
    eps = [r for r in results if r is not None]
    firsts = [e.first_success_step for e in eps if e.first_success_step is not None]
    return EvalResult(float(np.mean([e.success for e in eps])), float(np.mean([e.ret for e in eps])),
                      float(np.mean(firsts)) if firsts else None, eps)
