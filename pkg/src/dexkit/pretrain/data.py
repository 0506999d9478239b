"""Scene (robot + object) and isolated-object point-cloud datasets.

A dataset is a directory of DXPC files plus ``index.json``:
``{"kind", "records": [{"file", "object_id", "category", "task"}, ...]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..assets import ALL_CATEGORIES, SplitManifest, generate_object, get_template
from ..geometry import quat_from_axis_angle, quat_mul, Pose
from ..robot import N_ARM, ROBOT
from ..sensing import (
    LabeledPointCloud,
    SensingConfig,
    assemble_observation,
    observe_shapes,
    posed_object_shapes,
    read_dxpc,
    write_dxpc,
)
from ..shapes import LABEL_ARM, LABEL_HAND
from ..tasks import TASKS, TaskSpec
from ..world import ArticulatedObjectInstance, RobotState, SimState

INDEX_FILE = "index.json"


@dataclass
class PointDataset:
    """In-memory dataset: ``features (R, N, 4)``, ``labels (R, N)``, ``category (R,)``."""

    features: np.ndarray
    labels: np.ndarray
    category: np.ndarray
    object_ids: list[str]
    kind: str = "dam"

    def __len__(self):
        return len(self.features)

    def subset(self, idx) -> "PointDataset":
        idx = np.asarray(idx)
        return PointDataset(self.features[idx], self.labels[idx], self.category[idx],
                            [self.object_ids[i] for i in idx], self.kind)

    def split(self, held_out: float, seed: int) -> tuple["PointDataset", "PointDataset"]:
        """Random train / held-out partition by record."""
        if not 0 < held_out < 1:
            raise ValueError("held_out must lie in (0, 1)")
        perm = np.random.default_rng(seed).permutation(len(self))
        n_test = max(1, int(round(held_out * len(self))))
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))

    @property
    def observed_mask(self) -> np.ndarray:
        return self.features[..., 3] == 0


def _record_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _random_object_q(obj: ArticulatedObjectInstance, rng) -> np.ndarray:
    lo, hi = obj.chain.lower(), obj.chain.upper()
    return lo + rng.uniform(size=len(lo)) * (hi - lo)


def dam_record(obj: ArticulatedObjectInstance, spec: TaskSpec, sensing: SensingConfig, rng) -> LabeledPointCloud:
    """Scene cloud with robot and object joints drawn uniformly within limits."""
    lo, hi = ROBOT.chain.lower(), ROBOT.chain.upper()
    q = lo + rng.uniform(size=len(lo)) * (hi - lo)
    yaw = rng.uniform(-spec.yaw_range, spec.yaw_range)
    dxy = rng.uniform(-spec.xy_range, spec.xy_range, size=2)
    base = obj.chain.root
    root = Pose(quat_mul(quat_from_axis_angle((0, 0, 1), yaw), base.rotation),
                base.translation + np.array([dxy[0], dxy[1], 0.0]))
    robot = RobotState(q[:N_ARM].copy(), q[N_ARM:].copy(), q[N_ARM:].copy())
    state = SimState(robot, obj, root, _random_object_q(obj, rng), 0, 0.0)
    cam = sensing.camera(spec.camera_eye, spec.camera_target)
    obs = assemble_observation(state, cam, sensing, seed=int(rng.integers(2**31)),
                               imagination_seed=int(rng.integers(2**31)))
    return obs.cloud


@dataclass(frozen=True)
class ViewCap:
    """Viewpoints on a sphere around the object, polar angle in ``[min_polar, max_polar]``."""

    radius: float = 0.7
    min_polar: float = np.deg2rad(15.0)
    max_polar: float = np.deg2rad(70.0)

    def sample(self, centre, rng) -> np.ndarray:
        # uniform in area: cos(polar) uniform on the band
        cz = rng.uniform(np.cos(self.max_polar), np.cos(self.min_polar))
        az = rng.uniform(-np.pi, np.pi)
        sz = np.sqrt(1 - cz * cz)
        return np.asarray(centre) + self.radius * np.array([sz * np.cos(az), sz * np.sin(az), cz])


def pmm_record(category: str, object_seed: int, sensing: SensingConfig, cap: ViewCap, rng) -> LabeledPointCloud:
    """Isolated object, random joint state, random viewpoint; labels functional/rest only."""
    obj = generate_object(get_template(category), object_seed, "seen", f"{category}-{object_seed}")
    q = _random_object_q(obj, rng)
    poses = obj.link_poses(obj.chain.root, q)
    shapes = posed_object_shapes(obj, poses)
    centre = np.mean([s.pose.translation for s in shapes], axis=0)
    cam = sensing.camera(cap.sample(centre, rng), centre)
    lo = tuple(centre - 0.6)
    hi = tuple(centre + 0.6)
    cfg = SensingConfig(sensing.n_observed, sensing.n_imagined, (lo[0], lo[1], 0.0), hi, sensing.width,
                        sensing.height, sensing.fov_deg, sensing.near, sensing.far)
    cloud, _ = observe_shapes(shapes, cam, cfg, int(rng.integers(2**31)))
    return cloud


def _write(out: Path, records: list[tuple[LabeledPointCloud, dict]], kind: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / "clouds").mkdir(exist_ok=True)
    index = []
    for i, (cloud, meta) in enumerate(records):
        rel = f"clouds/{i:06d}.dxpc"
        write_dxpc(out / rel, cloud)
        index.append({"file": rel, **meta})
    path = out / INDEX_FILE
    path.write_text(json.dumps({"kind": kind, "records": index}, indent=1))
    return path


def generate_dam(manifest: SplitManifest, per_object: int, seed: int, out=None, split: str = "seen",
                 task: TaskSpec | None = None, sensing: SensingConfig = SensingConfig()) -> list:
    """``per_object`` scene clouds for each ``split`` object of the manifest.

    Writes the dataset when ``out`` is given; returns ``(cloud, meta)`` pairs.
    """
    if per_object < 1:
        raise ValueError("per_object must be positive")
    task = task or TASKS[manifest.category]
    records = []
    for i, obj in enumerate(manifest.instances(split)):
        for r in range(per_object):
            rng = _record_rng(seed, i, r)
            records.append((dam_record(obj, task, sensing, rng),
                            {"object_id": obj.object_id, "category": obj.category, "task": task.name}))
    if out is not None:
        _write(Path(out), records, "dam")
    return records


def generate_pmm(categories=ALL_CATEGORIES, per_category: int = 1000, seed: int = 0, out=None,
                 sensing: SensingConfig = SensingConfig(n_imagined=0), cap: ViewCap = ViewCap()) -> list:
    """``per_category`` isolated-object clouds per category, a fresh instance each."""
    if per_category < 1:
        raise ValueError("per_category must be positive")
    records = []
    for c, cat in enumerate(categories):
        for r in range(per_category):
            rng = _record_rng(seed, 1000 + c, r)
            obj_seed = int(rng.integers(2**31))
            records.append((pmm_record(cat, obj_seed, sensing, cap, rng),
                            {"object_id": f"{cat}-{obj_seed}", "category": cat, "task": None}))
    if out is not None:
        _write(Path(out), records, "pmm")
    return records


def read_index(path) -> dict:
    path = Path(path)
    index_path = path / INDEX_FILE if path.is_dir() else path
    if not index_path.exists():
        raise FileNotFoundError(f"dataset index not found: {index_path}")
    return json.loads(index_path.read_text())


def to_dataset(records: list, kind: str = "dam", categories=ALL_CATEGORIES) -> PointDataset:
    if not records:
        raise ValueError("empty dataset")
    cat_index = {c: i for i, c in enumerate(categories)}
    feats = np.stack([c.features() for c, _ in records])
    labels = np.stack([c.labels for c, _ in records])
    cats = np.array([cat_index.get(m["category"], -1) for _, m in records])
    return PointDataset(feats, labels, cats, [m["object_id"] for _, m in records], kind)


def load_dataset(path, categories=ALL_CATEGORIES) -> PointDataset:
    path = Path(path)
    index = read_index(path)
    root = path if path.is_dir() else path.parent
    records = [(read_dxpc(root / r["file"]), r) for r in index["records"]]
    return to_dataset(records, index.get("kind", "dam"), categories)


def label_coverage(cloud: LabeledPointCloud, n_groups: int = 4) -> np.ndarray:
    return np.bincount(cloud.labels, minlength=n_groups)[:n_groups] > 0


def robot_points(cloud: LabeledPointCloud) -> int:
    return int(np.isin(cloud.labels, (LABEL_HAND, LABEL_ARM)).sum())
