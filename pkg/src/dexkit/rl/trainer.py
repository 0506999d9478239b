"""PPO training loop with CSV logging, checkpoints and exact resume."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import pickle
from dataclasses import asdict
from pathlib import Path
from typing import Callable

import numpy as np

from ..env import DexEnv
from ..nn.checkpoint import load_into, save_checkpoint
from ..nn.layers import PointNetSpec
from ..nn.optim import Adam
from ..sensing import SensingConfig
from ..tasks import RewardWeights, TaskSpec
from ..world import ArticulatedObjectInstance, SimConfig
from .policy import ActorCritic, PolicySpec
from .ppo import PPOConfig, RolloutBuffer, VectorEnv, collect_rollouts, ppo_update

LOG_FIELDS = ("env_steps", "mean_return", "success_seen", "policy_loss", "value_loss", "entropy", "clip_frac")
STATE_FILE = "trainer_state.pkl"
POLICY_FILE = "policy.dxck"
META_SUFFIX = ".json"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


class PPOTrainer:
    """Owns the policy, optimiser, environments and RNG of one training run.

    The whole object pickles, so a saved state resumes bit-identically.
    """

    def __init__(self, spec: TaskSpec, objects: list[ArticulatedObjectInstance], *,
                 policy_spec: PolicySpec = PolicySpec(), ppo: PPOConfig = PPOConfig(),
                 sensing: SensingConfig = SensingConfig(), sim_cfg: SimConfig = SimConfig(),
                 weights: RewardWeights = RewardWeights(), episode_horizon: int = 200, seed: int = 0,
                 encoder_state: dict[str, np.ndarray] | None = None):
        self.spec, self.ppo, self.seed = spec, ppo, int(seed)
        ps = policy_spec if policy_spec.log_std_init == ppo.log_std_init else \
            PolicySpec(**{**policy_spec.__dict__, "log_std_init": ppo.log_std_init})
        self.policy = ActorCritic(ps, seed=self.seed)
        if encoder_state is not None:
            self.policy.store.load_state_dict(encoder_state, prefix="encoder.", strict=True)
        self.opt = Adam(self.policy.store, lr=ppo.lr)
        seeds = np.random.SeedSequence([self.seed, 3]).generate_state(ppo.n_envs)
        envs = [DexEnv(spec, objects, sim_cfg=sim_cfg, sensing=sensing, weights=weights,
                       horizon=episode_horizon, seed=int(s), shuffle=True, render=not ps.camera_blind)
                for s in seeds]
        self.venv = VectorEnv(envs)
        self.rng = np.random.default_rng([self.seed, 11])
        self.buffer: RolloutBuffer | None = None
        self.env_steps = 0
        self.updates = 0
        self.log: list[dict] = []

    # ------------------------------------------------------------ stepping
    def run_update(self) -> dict:
        self.buffer = collect_rollouts(self.venv, self.policy, self.ppo.horizon, self.rng, self.buffer)
        stats = ppo_update(self.buffer, self.policy, self.opt, self.ppo, self.rng)
        self.env_steps += self.buffer.capacity
        self.updates += 1
        eps = self.venv.pop_completed()
        row = dict(
            env_steps=self.env_steps,
            mean_return=float(np.mean([e.ret for e in eps])) if eps else None,
            success_seen=float(np.mean([e.success for e in eps])) if eps else None,
            policy_loss=stats.policy_loss, value_loss=stats.value_loss, entropy=stats.entropy,
            clip_frac=stats.clip_frac,
        )
        if stats.aborted:
            row["aborted"] = True
        self.log.append(row)
        return row

    def train(self, total_steps: int | None = None, out_dir=None, checkpoint_every: int = 1,
              stop: Callable[["PPOTrainer"], bool] | None = None, max_updates: int | None = None) -> list[dict]:
        """Run updates until ``total_steps`` env steps (or ``stop`` returns True).

        With ``out_dir`` the log CSV, a policy checkpoint and the resumable
        trainer state are written every ``checkpoint_every`` updates.
        """
        total = self.ppo.total_steps if total_steps is None else total_steps
        out = Path(out_dir) if out_dir is not None else None
        done_updates = 0
        while self.env_steps < total:
            self.run_update()
            done_updates += 1
            if out is not None and (self.updates % checkpoint_every == 0 or self.env_steps >= total):
                self.save(out)
            if stop is not None and stop(self):
                break
            if max_updates is not None and done_updates >= max_updates:
                break
        if out is not None:
            self.save(out)
        return self.log

    # ------------------------------------------------------------ persistence
    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in self.log:
            w.writerow([_fmt(r.get(k)) for k in LOG_FIELDS])
        return buf.getvalue()

    def log_hash(self) -> str:
        return hashlib.sha256(self.log_csv().encode()).hexdigest()

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.csv").write_text(self.log_csv())
        save_policy(self.policy, out / POLICY_FILE, sensing=self.venv.envs[0].sensing, task=self.spec.name,
                    episode_horizon=self.venv.envs[0].horizon)
        tmp = out / (STATE_FILE + ".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(out / STATE_FILE)
        return out

    @classmethod
    def load(cls, out_dir) -> "PPOTrainer":
        path = Path(out_dir) / STATE_FILE
        if not path.exists():
            raise FileNotFoundError(f"no trainer state at {path}")
        with open(path, "rb") as fh:
            obj = pickle.load(fh)
        if not isinstance(obj, cls):
            raise TypeError(f"{path} does not hold a {cls.__name__}")
        return obj


# ------------------------------------------------------------ policy bundles

def policy_spec_from_dict(d: dict) -> PolicySpec:
    d = dict(d)
    d["encoder"] = PointNetSpec(**d["encoder"])
    return PolicySpec(**d)


def save_policy(policy: ActorCritic, path, **meta) -> Path:
    """Checkpoint plus a JSON sidecar holding the spec needed to rebuild it."""
    path = save_checkpoint(policy.store, path)
    body = {"policy_spec": asdict(policy.spec)}
    for k, v in meta.items():
        body[k] = asdict(v) if hasattr(v, "__dataclass_fields__") else v
    Path(str(path) + META_SUFFIX).write_text(json.dumps(body, indent=1, sort_keys=True))
    return path


def read_policy_meta(path) -> dict:
    side = Path(str(path) + META_SUFFIX)
    if not side.exists():
        raise FileNotFoundError(f"policy sidecar not found: {side}")
    return json.loads(side.read_text())


def load_policy(path, camera_blind: bool | None = None) -> tuple[ActorCritic, dict]:
    """Rebuild an :class:`ActorCritic` from ``save_policy`` output; returns ``(policy, meta)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    meta = read_policy_meta(path)
    spec = policy_spec_from_dict(meta["policy_spec"])
    if camera_blind is not None and camera_blind != spec.camera_blind:
        spec = PolicySpec(**{**spec.__dict__, "camera_blind": camera_blind})
    policy = ActorCritic(spec)
    load_into(policy.store, path, strict=True)
    return policy, meta
