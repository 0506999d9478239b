"""Run configuration (JSON with full defaults), profiles and run manifests."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .nn.layers import POINTNET_HIDDEN_LAYERS, PointNetSpec
from .pretrain import METHODS
from .rl.policy import PolicySpec
from .rl.ppo import PPOConfig
from .sensing import SensingConfig
from .tasks import TASKS, RewardWeights, get_task
from .world import SimConfig

SEED_ENV = "DEXKIT_SEED"
MANIFEST_FILE = "run_manifest.json"


class ConfigError(ValueError):
    """Validation failure; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass
class EncoderConfig:
    size: str = "small"
    hidden: int = 64
    out_dim: int = 256

    def spec(self) -> PointNetSpec:
        return PointNetSpec(self.size, self.hidden, self.out_dim)


@dataclass
class PolicyConfig:
    proprio_hidden: int = 128
    proprio_out: int = 128
    head_hidden: int = 256
    camera_blind: bool = False


@dataclass
class PretrainRef:
    method: str | None = None
    checkpoint: str | None = None


@dataclass
class EvalConfig:
    n_episodes: int = 100
    viewpoint_episodes: int = 20
    n_envs: int = 10
    deterministic: bool = True


@dataclass
class RunConfig:
    task: str = "laptop"
    manifest: str | None = None
    seed: int = 0
    output_dir: str = "runs/default"
    episode_horizon: int = 200
    checkpoint_every: int = 5
    camera_eye: list[float] | None = None
    camera_target: list[float] | None = None
    sim: dict = field(default_factory=lambda: asdict(SimConfig()))
    sensing: dict = field(default_factory=lambda: _sensing_dict(SensingConfig()))
    encoder: dict = field(default_factory=lambda: asdict(EncoderConfig()))
    policy: dict = field(default_factory=lambda: asdict(PolicyConfig()))
    pretrain: dict = field(default_factory=lambda: asdict(PretrainRef()))
    ppo: dict = field(default_factory=lambda: asdict(PPOConfig()))
    reward: dict = field(default_factory=lambda: asdict(RewardWeights()))
    eval: dict = field(default_factory=lambda: asdict(EvalConfig()))

    # ------------------------------------------------------------ io
    @classmethod
    def from_dict(cls, d: dict | None = None, env: dict | None = None) -> "RunConfig":
        """Merge ``d`` over the defaults; unknown keys are validation errors."""
        d = copy.deepcopy(d or {})
        default = cls()
        errors = []
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                errors.append(f"unknown field {k!r}")
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            base = getattr(default, f.name)
            if isinstance(base, dict):
                if not isinstance(d[f.name], dict):
                    errors.append(f"{f.name}: expected an object")
                    continue
                extra = set(d[f.name]) - set(base)
                errors.extend(f"{f.name}.{k}: unknown field" for k in sorted(extra))
                kw[f.name] = {**base, **d[f.name]}
            else:
                kw[f.name] = d[f.name]
        if errors:
            raise ConfigError(errors)
        cfg = cls(**kw)
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                cfg.seed = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError([f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}"]) from None
        return cfg

    @classmethod
    def load(cls, path, env: dict | None = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"config file not found: {path}"])
        try:
            body = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None
        return cls.from_dict(body, env)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    def config_hash(self) -> str:
        """Hash of the inputs that define the run (not of where it writes)."""
        body = self.to_dict()
        body.pop("output_dir")
        return config_digest(body)

    # ------------------------------------------------------------ typed views
    def task_spec(self):
        spec = get_task(self.task)
        if self.camera_eye is not None or self.camera_target is not None:
            d = spec.to_dict()
            if self.camera_eye is not None:
                d["camera_eye"] = tuple(self.camera_eye)
            if self.camera_target is not None:
                d["camera_target"] = tuple(self.camera_target)
            spec = type(spec).from_dict(d)
        return spec

    def sim_config(self) -> SimConfig:
        return SimConfig(**self.sim)

    def sensing_config(self) -> SensingConfig:
        s = dict(self.sensing)
        for k in ("crop_lo", "crop_hi"):
            s[k] = tuple(s[k])
        return SensingConfig(**s)

    def policy_spec(self) -> PolicySpec:
        p = self.policy
        return PolicySpec(encoder=EncoderConfig(**self.encoder).spec(), proprio_hidden=p["proprio_hidden"],
                          proprio_out=p["proprio_out"], head_hidden=p["head_hidden"],
                          log_std_init=self.ppo["log_std_init"], camera_blind=p["camera_blind"])

    def ppo_config(self) -> PPOConfig:
        return PPOConfig(**self.ppo)

    def reward_weights(self) -> RewardWeights:
        return RewardWeights(**self.reward)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(**self.eval)

    # ------------------------------------------------------------ validation
    def validate(self, check_paths: bool = True) -> "RunConfig":
        """Collect every problem and raise them together."""
        errors = []
        base_task = self.task[:-len("-reach")] if self.task.endswith("-reach") else self.task
        if base_task not in TASKS:
            errors.append(f"task: unknown task {self.task!r} (choose from {sorted(TASKS)})")
        if self.episode_horizon < 1:
            errors.append("episode_horizon: must be positive")
        if self.checkpoint_every < 1:
            errors.append("checkpoint_every: must be positive")
        if self.encoder.get("size") not in POINTNET_HIDDEN_LAYERS:
            errors.append(f"encoder.size: must be one of {sorted(POINTNET_HIDDEN_LAYERS)}")
        method = self.pretrain.get("method")
        if method is not None and method not in METHODS:
            errors.append(f"pretrain.method: must be one of {sorted(METHODS)}")
        for name, build in (("sim", self.sim_config), ("sensing", self.sensing_config), ("ppo", self.ppo_config),
                            ("reward", self.reward_weights), ("eval", self.eval_config),
                            ("encoder", lambda: EncoderConfig(**self.encoder).spec())):
            try:
                build()
            except (TypeError, ValueError) as exc:
                errors.append(f"{name}: {exc}")
        for name, v in (("camera_eye", self.camera_eye), ("camera_target", self.camera_target)):
            if v is not None and len(v) != 3:
                errors.append(f"{name}: expected 3 numbers")
        if check_paths:
            if self.manifest is not None and not Path(self.manifest).exists():
                errors.append(f"manifest: file not found: {self.manifest}")
            ckpt = self.pretrain.get("checkpoint")
            if ckpt is not None and not Path(ckpt).exists():
                errors.append(f"pretrain.checkpoint: file not found: {ckpt}")
        if errors:
            raise ConfigError(errors)
        return self


def _sensing_dict(s: SensingConfig) -> dict:
    d = asdict(s)
    d["crop_lo"], d["crop_hi"] = list(d["crop_lo"]), list(d["crop_hi"])
    return d


# ---------------------------------------------------------------- profiles

DESK_PROFILE = {
    "episode_horizon": 100,
    "sensing": {"n_observed": 64, "n_imagined": 32, "width": 48, "height": 48},
    "encoder": {"size": "small", "hidden": 32, "out_dim": 64},
    "policy": {"proprio_hidden": 64, "proprio_out": 64, "head_hidden": 128},
    "ppo": {"horizon": 100, "n_envs": 8, "epochs": 4, "minibatch_size": 200, "lr": 1e-3, "total_steps": 40_000},
    "eval": {"n_episodes": 20, "viewpoint_episodes": 20, "n_envs": 10},
}

FULL_PROFILE = {
    "episode_horizon": 200,
    "ppo": {"total_steps": 2_000_000},
}

PROFILES = {"default": {}, "desk": DESK_PROFILE, "full": FULL_PROFILE}


def profile_config(name: str, **overrides) -> RunConfig:
    if name not in PROFILES:
        raise ConfigError([f"unknown profile {name!r} (choose from {sorted(PROFILES)})"])
    body = copy.deepcopy(PROFILES[name])
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(body.get(k), dict):
            body[k].update(v)
        else:
            body[k] = v
    return RunConfig.from_dict(body)


# ---------------------------------------------------------------- manifests

@dataclass
class RunManifest:
    """Config snapshot, its hash, and the artifacts a run produced."""

    command: str
    config: dict
    config_hash: str
    started: float = field(default_factory=time.time)
    finished: float | None = None
    status: str = "running"
    files: dict[str, str] = field(default_factory=dict)

    @classmethod
    def begin(cls, command: str, config: dict, out_dir) -> "RunManifest":
        m = cls(command, config, config_digest(config))
        m.write(out_dir)
        return m

    def finish(self, out_dir, status: str = "complete") -> Path:
        out = Path(out_dir)
        self.files = {str(p.relative_to(out)): file_sha256(p) for p in sorted(out.rglob("*"))
                      if p.is_file() and p.name != MANIFEST_FILE and not p.name.endswith(".tmp")}
        self.finished, self.status = time.time(), status
        return self.write(out)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / MANIFEST_FILE
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True))
        return path

    @classmethod
    def read(cls, out_dir) -> "RunManifest | None":
        path = Path(out_dir) / MANIFEST_FILE
        if not path.exists():
            return None
        return cls(**json.loads(path.read_text()))


def config_digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
