"""Seen/unseen evaluation, viewpoint sweeps and ablation drivers."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .assets import SplitManifest
from .env import DexEnv
from .geometry import look_at
from .nn.checkpoint import read_checkpoint
from .nn.layers import PointNetSpec
from .rl.policy import ActorCritic, PolicySpec
from .rl.ppo import PPOConfig, evaluate_policy
from .rl.trainer import PPOTrainer, load_policy, save_policy
from .sensing import CameraModel, SensingConfig
from .tasks import RewardWeights, TaskSpec, get_task
from .world import SimConfig

SPLITS = ("seen", "unseen")
THETA_DEG = tuple(range(-60, 61, 20))
PHI_DEG = tuple(range(-20, 21, 10))
VIEWPOINT_FIELDS = ("theta_deg", "phi_deg", "success_rate", "n_episodes")
REPORT_FIELDS = ("task", "split", "seed", "success_rate", "mean_return", "n_episodes")
SUMMARY_FIELDS = ("task", "split", "n_seeds", "mean", "std")


# ---------------------------------------------------------------- reports

@dataclass
class EvalRow:
    task: str
    split: str
    seed: int
    success_rate: float
    mean_return: float
    n_episodes: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.rows.extend(other.rows)
        return self

    def keys(self) -> list[tuple[str, str]]:
        seen = []
        for r in self.rows:
            if (r.task, r.split) not in seen:
                seen.append((r.task, r.split))
        return seen

    def rates(self, task: str, split: str) -> np.ndarray:
        return np.array([r.success_rate for r in self.rows if r.task == task and r.split == split])

    def summary(self) -> list[dict]:
        """Mean over seeds per ``(task, split)``; std only with two or more seeds."""
        out = []
        for task, split in self.keys():
            rates = self.rates(task, split)
            std = float(rates.std(ddof=1)) if len(rates) >= 2 else None
            out.append(dict(task=task, split=split, n_seeds=len(rates), mean=float(rates.mean()), std=std))
        return out

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows], "summary": self.summary()}, indent=1)

    def write(self, out_dir, stem: str = "eval") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        _write_rows(csv_path, REPORT_FIELDS, [asdict(r) for r in self.rows])
        json_path.write_text(self.to_json())
        return csv_path, json_path


def _write_rows(path: Path, fields, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in fields})
    return path


def binomial_sigma(p: float, n: int) -> float:
    return float(np.sqrt(max(p * (1 - p), 0.25 / n) / n)) if n else float("inf")


# ---------------------------------------------------------------- environments

@dataclass(frozen=True)
class EvalSetup:
    """Everything besides the policy that defines an evaluation episode stream."""

    task: TaskSpec
    sensing: SensingConfig = SensingConfig()
    sim_cfg: SimConfig = SimConfig()
    weights: RewardWeights = RewardWeights()
    episode_horizon: int = 200
    n_envs: int = 10

    @classmethod
    def from_meta(cls, meta: dict, **overrides) -> "EvalSetup":
        kw = dict(task=get_task(meta["task"]) if "task" in meta else None,
                  sensing=SensingConfig(**{k: tuple(v) if isinstance(v, list) else v
                                           for k, v in meta["sensing"].items()}) if "sensing" in meta else None,
                  episode_horizon=meta.get("episode_horizon"))
        kw = {k: v for k, v in kw.items() if v is not None}
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


def make_eval_envs(setup: EvalSetup, objects, seed: int, camera: CameraModel | None = None,
                   render: bool = True) -> list[DexEnv]:
    seeds = np.random.SeedSequence([int(seed), 17]).generate_state(setup.n_envs)
    return [DexEnv(setup.task, objects, sim_cfg=setup.sim_cfg, sensing=setup.sensing, weights=setup.weights,
                   horizon=setup.episode_horizon, seed=int(s), camera=camera, render=render) for s in seeds]


def split_objects(manifest: SplitManifest, split: str, task: TaskSpec):
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    if manifest.category != task.category:
        raise ValueError(f"manifest category {manifest.category!r} does not match task {task.name!r}")
    objects = manifest.instances(split)
    if not objects:
        raise ValueError(f"manifest has no {split} objects")
    wrong = [o.object_id for o in objects if o.split != split]
    if wrong:
        raise ValueError(f"manifest cross-check failed: {wrong} are not {split} objects")
    return objects


def evaluate_split(policy: ActorCritic, setup: EvalSetup, manifest: SplitManifest, split: str, n_episodes: int,
                   seed: int, deterministic: bool = True, camera: CameraModel | None = None):
    objects = split_objects(manifest, split, setup.task)
    envs = make_eval_envs(setup, objects, seed, camera, render=not policy.spec.camera_blind)
    order = [k % len(objects) for k in range(n_episodes)]
    return evaluate_policy(envs, policy, n_episodes, deterministic=deterministic, seed=seed, object_indices=order)


def param_digest(policy: ActorCritic) -> str:
    return policy.store.digest()


def run_eval(checkpoints, manifest: SplitManifest, splits: Sequence[str] = SPLITS, n_episodes: int = 100,
             seeds: Sequence[int] | None = None, setup: EvalSetup | None = None,
             deterministic: bool = True) -> EvalReport:
    """Evaluate checkpoints on the manifest's split objects.

    ``checkpoints`` is one path, or one path per seed (e.g. one per
    training seed). With a single path every seed re-evaluates it.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be positive")
    paths = [checkpoints] if isinstance(checkpoints, (str, Path)) else list(checkpoints)
    seeds = list(range(len(paths))) if seeds is None else list(seeds)
    if len(paths) == 1:
        paths = paths * len(seeds)
    if len(paths) != len(seeds):
        raise ValueError("need one checkpoint per seed or a single checkpoint")
    report = EvalReport()
    for path, seed in zip(paths, seeds):
        policy, meta = load_policy(path)
        s = setup or EvalSetup.from_meta(meta)
        before = param_digest(policy)
        for split in splits:
            res = evaluate_split(policy, s, manifest, split, n_episodes, seed, deterministic)
            report.rows.append(EvalRow(s.task.name, split, int(seed), res.success_rate, res.mean_return,
                                       res.n_episodes))
        if param_digest(policy) != before:
            raise RuntimeError("evaluation mutated policy parameters")
    return report


# ---------------------------------------------------------------- viewpoints

@dataclass(frozen=True)
class ViewpointCell:
    theta_deg: float
    phi_deg: float
    camera: CameraModel


def _spherical(v: np.ndarray) -> tuple[float, float, float]:
    r = float(np.linalg.norm(v))
    return r, float(np.arctan2(v[1], v[0])), float(np.arccos(np.clip(v[2] / r, -1.0, 1.0)))


def sample_viewpoint_grid(camera: CameraModel, object_center, thetas=THETA_DEG, phis=PHI_DEG) -> list[ViewpointCell]:
    """Cameras on the sphere through the training camera.

    The radius is the camera-object distance and the centre lies that far
    along the optical axis. ``theta`` rotates about world z through the
    centre; positive ``phi`` raises the camera. Every camera aims at the
    centre. Cell ``(0, 0)`` returns the training pose itself.
    """
    eye = camera.pose.translation
    r = float(np.linalg.norm(np.asarray(object_center, dtype=np.float64) - eye))
    if r <= 0:
        raise ValueError("camera coincides with the object")
    center = eye + r * camera.optical_axis
    _, az0, pol0 = _spherical(eye - center)
    cells = []
    for th in thetas:
        for ph in phis:
            if th == 0 and ph == 0:
                pose = camera.pose
            else:
                az, pol = az0 + np.deg2rad(th), pol0 - np.deg2rad(ph)
                new_eye = center + r * np.array([np.sin(pol) * np.cos(az), np.sin(pol) * np.sin(az), np.cos(pol)])
                pose = look_at(new_eye, center)
            cam = CameraModel(pose, camera.fov_y, camera.width, camera.height, camera.near, camera.far)
            cells.append(ViewpointCell(float(th), float(ph), cam))
    return cells


def viewpoint_center(camera: CameraModel, object_center) -> np.ndarray:
    eye = camera.pose.translation
    r = float(np.linalg.norm(np.asarray(object_center, dtype=np.float64) - eye))
    return eye + r * camera.optical_axis


def object_center(manifest: SplitManifest, split: str = "seen") -> np.ndarray:
    """Mean annotated base position of the split objects."""
    return np.mean([o.chain.root.translation for o in manifest.instances(split)], axis=0)


def run_viewpoint_sweep(policy: ActorCritic, setup: EvalSetup, manifest: SplitManifest, n_episodes: int = 20,
                        seed: int = 0, split: str = "seen", out_csv=None) -> list[dict]:
    """Success rate per grid cell; only the camera differs between cells."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be positive")
    base = setup.sensing.camera(setup.task.camera_eye, setup.task.camera_target)
    cells = sample_viewpoint_grid(base, object_center(manifest, split))
    before = param_digest(policy)
    rows = []
    for cell in cells:
        res = evaluate_split(policy, setup, manifest, split, n_episodes, seed, camera=cell.camera)
        rows.append(dict(theta_deg=cell.theta_deg, phi_deg=cell.phi_deg, success_rate=res.success_rate,
                         n_episodes=res.n_episodes))
    if param_digest(policy) != before:
        raise RuntimeError("evaluation mutated policy parameters")
    if out_csv is not None:
        _write_rows(Path(out_csv), VIEWPOINT_FIELDS, rows)
    return rows


# ---------------------------------------------------------------- ablations

ABLATION_AXES = ("fraction", "size", "regime")
FRACTIONS = (0.5, 1.0)
SIZES = ("small", "medium", "large")
REGIMES = ("scratch", "seg-dam", "seg-pmm", "cls-pmm", "recon-dam", "simsiam-dam")


@dataclass
class AblationPlan:
    """One axis of variants, each trained with identical budgets and seeds.

    ``encoders`` maps a pre-training regime to its encoder checkpoint; the
    regime axis needs one for every non-scratch regime.
    """

    axis: str
    task: str = "laptop"
    seeds: tuple[int, ...] = (0, 1, 2)
    total_steps: int = 20_000
    values: tuple | None = None
    n_eval_episodes: int = 20
    encoders: dict[str, str] = field(default_factory=dict)
    base_size: str = "small"
    base_regime: str = "scratch"

    def __post_init__(self):
        if self.axis not in ABLATION_AXES:
            raise ValueError(f"axis must be one of {ABLATION_AXES}, got {self.axis!r}")
        if not self.seeds:
            raise ValueError("plan needs at least one seed")
        defaults = {"fraction": FRACTIONS, "size": SIZES, "regime": REGIMES}[self.axis]
        self.values = tuple(defaults if self.values is None else self.values)
        allowed = {"fraction": None, "size": SIZES, "regime": REGIMES}[self.axis]
        bad = [v for v in self.values if allowed is not None and v not in allowed]
        if self.axis == "fraction":
            bad = [v for v in self.values if not 0 < float(v) <= 1]
        if bad:
            raise ValueError(f"invalid {self.axis} values: {bad}")

    @classmethod
    def from_dict(cls, d: dict) -> "AblationPlan":
        d = dict(d)
        for k in ("seeds", "values"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def missing_encoders(self) -> list[str]:
        regimes = self.values if self.axis == "regime" else (self.base_regime,)
        return [r for r in regimes if r != "scratch" and r not in self.encoders]


@dataclass
class Variant:
    name: str
    manifest: SplitManifest
    policy_spec: PolicySpec
    encoder: str | None


def plan_variants(plan: AblationPlan, manifest: SplitManifest, policy_spec: PolicySpec) -> list[Variant]:
    def spec_for(size):
        enc = policy_spec.encoder
        return PolicySpec(**{**policy_spec.__dict__, "encoder": PointNetSpec(size, enc.hidden, enc.out_dim, enc.in_dim)})

    out = []
    for v in plan.values:
        if plan.axis == "fraction":
            out.append(Variant(f"fraction-{float(v):g}", manifest.subset(float(v)), spec_for(plan.base_size),
                               plan.encoders.get(plan.base_regime)))
        elif plan.axis == "size":
            out.append(Variant(f"size-{v}", manifest, spec_for(v), plan.encoders.get(plan.base_regime)))
        else:
            out.append(Variant(f"regime-{v}", manifest, spec_for(plan.base_size), plan.encoders.get(v)))
    return out


def run_ablation(plan: AblationPlan, manifest: SplitManifest, out_dir, *, policy_spec: PolicySpec = PolicySpec(),
                 ppo: PPOConfig = PPOConfig(), setup: EvalSetup | None = None,
                 stop: Callable[[PPOTrainer], bool] | None = None) -> dict[str, EvalReport]:
    """Train every variant for every seed, then evaluate all on the same objects.

    Writes ``<variant>/seed<k>/train_log.csv`` plus the policy checkpoint,
    and ``comparison.csv`` / ``comparison.json`` at the top.
    """
    missing = plan.missing_encoders()
    if missing:
        raise ValueError(f"plan lacks encoder checkpoints for {missing}")
    task = get_task(plan.task)
    setup = setup or EvalSetup(task)
    out = Path(out_dir)
    reports: dict[str, EvalReport] = {}
    for var in plan_variants(plan, manifest, policy_spec):
        enc_state = None
        if var.encoder is not None:
            enc_state = {k: v for k, v in read_checkpoint(var.encoder).items() if k.startswith("encoder.")}
        report = EvalReport()
        for seed in plan.seeds:
            run_dir = out / var.name / f"seed{seed}"
            trainer = PPOTrainer(task, var.manifest.instances("seen"), policy_spec=var.policy_spec, ppo=ppo,
                                 sensing=setup.sensing, sim_cfg=setup.sim_cfg, weights=setup.weights,
                                 episode_horizon=setup.episode_horizon, seed=seed, encoder_state=enc_state)
            trainer.train(plan.total_steps, out_dir=run_dir, stop=stop)
            for split in SPLITS:
                res = evaluate_split(trainer.policy, setup, manifest, split, plan.n_eval_episodes, seed)
                report.rows.append(EvalRow(task.name, split, int(seed), res.success_rate, res.mean_return,
                                           res.n_episodes))
        reports[var.name] = report
    rows = []
    for name, rep in reports.items():
        for s in rep.summary():
            rows.append(dict(variant=name, **s))
    _write_rows(out / "comparison.csv", ("variant",) + SUMMARY_FIELDS, rows)
    (out / "comparison.json").write_text(json.dumps(
        {"plan": {**asdict(plan)}, "variants": {k: json.loads(r.to_json()) for k, r in reports.items()}}, indent=1))
    return reports


__all__ = [
    "ABLATION_AXES", "AblationPlan", "EvalReport", "EvalRow", "EvalSetup", "FRACTIONS", "PHI_DEG", "REGIMES",
    "SIZES", "SPLITS", "THETA_DEG", "Variant", "ViewpointCell", "binomial_sigma", "evaluate_split",
    "make_eval_envs", "object_center", "param_digest", "plan_variants", "run_ablation", "run_eval",
    "run_viewpoint_sweep", "sample_viewpoint_grid", "save_policy", "split_objects", "viewpoint_center",
]
