"""Procedural articulated objects built from primitive shapes.

Each category template samples a parameter dict from its ranges and turns
it into an :class:`~dexkit.world.ArticulatedObjectInstance`. Unseen
objects come from the same templates with geometric ranges widened by
15% and disjoint generation seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import PRISMATIC, REVOLUTE, JointSpec, KinematicChain, Pose, quat_from_axis_angle
from .robot import WORKSPACE_HI, WORKSPACE_LO
from .shapes import BOX, CYLINDER, ShapePrimitive, capsule_between
from .world import ArticulatedObjectInstance

TASK_CATEGORIES = ("faucet", "bucket", "laptop", "toilet")
DISTRACTOR_CATEGORIES = ("drawer", "door", "storage_box", "knob")
ALL_CATEGORIES = TASK_CATEGORIES + DISTRACTOR_CATEGORIES

# (all, seen, unseen) object counts per task.
TABLE1_COUNTS = {
    "faucet": (18, 11, 7),
    "bucket": (19, 11, 8),
    "laptop": (17, 11, 6),
    "toilet": (28, 17, 11),
}

UNSEEN_WIDENING = 0.15


def _box(center, half, link):
    return ShapePrimitive(BOX, tuple(half), Pose.from_translation(center), link)


def _cyl(center, radius, half_height, link):
    return ShapePrimitive(CYLINDER, (radius, half_height), Pose.from_translation(center), link)


def _build_laptop(p):
    s = p["scale"]
    d, w, t = p["base_depth"] * s, p["base_width"] * s, p["base_thickness"] * s
    lt = p["lid_thickness"] * s
    ld, lw = d * p["lid_depth_ratio"], w * p["lid_width_ratio"]
    shapes = [
        _box((0, 0, t / 2), (d / 2, w / 2, t / 2), -1),
        _box((-ld / 2, 0, lt / 2), (ld / 2, lw / 2, lt / 2), 0),
    ]
    hinge = JointSpec(REVOLUTE, (0, 1, 0), Pose.from_translation((d / 2, 0, t)), (0.0, 2.0))
    return dict(joints=[hinge], parents=[-1], shapes=shapes, functional_joint=0, functional_links=(0,),
                grasp_link=0, grasp_local=(-ld, 0.0, lt), q_init=[p["init_angle"]])


def _build_faucet(p):
    s = p["scale"]
    r, hb = p["body_radius"] * s, p["body_half_height"] * s
    spout = p["spout_length"] * s
    hub_h = p["hub_height"] * s
    lever, rl = p["lever_length"] * s, p["lever_radius"] * s
    zl = 0.5 * hub_h
    shapes = [
        _cyl((0, 0, hb), r, hb, -1),
        capsule_between((0, 0, 1.6 * hb), (0, spout, 1.6 * hb), 0.45 * r, -1, 1),
        _cyl((0, 0, hub_h / 2), 0.8 * r, hub_h / 2, 0),
        capsule_between((0, 0, zl), (-lever, 0, zl), rl, 0, 0),
    ]
    joint = JointSpec(REVOLUTE, (0, 0, 1), Pose.from_translation((0, 0, 2 * hb)), (0.0, 1.8))
    return dict(joints=[joint], parents=[-1], shapes=shapes, functional_joint=0, functional_links=(0,),
                grasp_link=0, grasp_local=(-0.7 * lever, 0.0, zl + rl), q_init=[p["init_angle"]])


def _build_bucket(p):
    s = p["scale"]
    r, hb = p["radius"] * s, p["half_height"] * s
    hh, rh = p["handle_height"] * s, p["handle_radius"] * s
    y = 0.85 * r
    shapes = [
        _cyl((0, 0, hb), r, hb, 0),
        capsule_between((0, -y, hh), (0, y, hh), rh, 1, 0),
        capsule_between((0, -y, 0), (0, -y, hh), rh, 1, 0),
        capsule_between((0, y, 0), (0, y, hh), rh, 1, 0),
    ]
    lift = JointSpec(PRISMATIC, (0, 0, 1), Pose(), (0.0, 0.4))
    mount = JointSpec(REVOLUTE, (1, 0, 0), Pose.from_translation((0, 0, 2 * hb)), (0.0, 0.0))
    return dict(joints=[lift, mount], parents=[-1, 0], shapes=shapes, functional_joint=0,
                functional_links=(1,), grasp_link=1, grasp_local=(0.0, 0.0, hh - rh), q_init=[0.0, 0.0],
                lift=True)


def _build_toilet(p):
    s = p["scale"]
    d, w, h = p["bowl_depth"] * s, p["bowl_width"] * s, p["bowl_height"] * s
    td, th = p["tank_depth"] * s, p["tank_height"] * s
    lt = p["lid_thickness"] * s
    ld, lw = (d - td) * 0.98, w * 0.9
    shapes = [
        _box((0, 0, h / 2), (d / 2, w / 2, h / 2), -1),
        _box((d / 2 - td / 2, 0, h + th / 2), (td / 2, 0.95 * w / 2, th / 2), -1),
        _box((-ld / 2, 0, lt / 2), (ld / 2, lw / 2, lt / 2), 0),
    ]
    hinge = JointSpec(REVOLUTE, (0, 1, 0), Pose.from_translation((d / 2 - td, 0, h)), (0.0, 1.6))
    return dict(joints=[hinge], parents=[-1], shapes=shapes, functional_joint=0, functional_links=(0,),
                grasp_link=0, grasp_local=(-ld, 0.0, lt), q_init=[p["init_angle"]])


def _build_drawer(p):
    s = p["scale"]
    d, w, h = p["depth"] * s, p["width"] * s, p["height"] * s
    ft = 0.02 * s
    shapes = [
        _box((0, 0, h / 2), (d / 2, w / 2, h / 2), -1),
        _box((-ft / 2, 0, 0), (ft / 2, 0.4 * w, 0.3 * h), 0),
        capsule_between((-ft - 0.015, -0.15 * w, 0), (-ft - 0.015, 0.15 * w, 0), 0.01, 0, 0),
    ]
    slide = JointSpec(PRISMATIC, (-1, 0, 0), Pose.from_translation((-d / 2, 0, 0.6 * h)), (0.0, 0.25))
    return dict(joints=[slide], parents=[-1], shapes=shapes, functional_joint=0, functional_links=(0,),
                grasp_link=0, grasp_local=(-ft - 0.025, 0.0, 0.0), q_init=[p["init_angle"] * 0.1])


def _build_door(p):
    s = p["scale"]
    d, w, h = p["depth"] * s, p["width"] * s, p["height"] * s
    ft = 0.02 * s
    shapes = [
        _box((0, 0, h / 2), (d / 2, w / 2, h / 2), -1),
        _box((-ft / 2, w / 2, 0), (ft / 2, w / 2, 0.45 * h), 0),
        capsule_between((-ft - 0.015, 0.85 * w, -0.1 * h), (-ft - 0.015, 0.85 * w, 0.1 * h), 0.01, 0, 0),
    ]
    hinge = JointSpec(REVOLUTE, (0, 0, -1), Pose.from_translation((-d / 2, -w / 2, h / 2)), (0.0, 1.6))
    return dict(joints=[hinge], parents=[-1], shapes=shapes, functional_joint=0, functional_links=(0,),
                grasp_link=0, grasp_local=(-ft - 0.025, 0.85 * w, 0.0), q_init=[p["init_angle"]])


def _build_storage_box(p):
    s = p["scale"]
    d, w, h = p["depth"] * s, p["width"] * s, p["height"] * 0.6 * s
    lt = 0.015 * s
    shapes = [
        _box((0, 0, h / 2), (d / 2, w / 2, h / 2), -1),
        _box((-d / 2, 0, lt / 2), (d / 2, w / 2, lt / 2), 0),
    ]
    hinge = JointSpec(REVOLUTE, (0, 1, 0), Pose.from_translation((d / 2, 0, h)), (0.0, 1.9))
    return dict(joints=[hinge], parents=[-1], shapes=shapes, functional_joint=0, functional_links=(0,),
                grasp_link=0, grasp_local=(-d, 0.0, lt), q_init=[p["init_angle"]])


def _build_knob(p):
    s = p["scale"]
    r = p["width"] * 0.5 * s
    hb = 0.03 * s
    kr = 0.35 * r
    shapes = [
        _cyl((0, 0, hb), r, hb, -1),
        _cyl((0, 0, 0.03 * s), kr, 0.03 * s, 0),
        _box((0, 0, 0.07 * s), (0.95 * kr, 0.012 * s, 0.01 * s), 0),
    ]
    joint = JointSpec(REVOLUTE, (0, 0, 1), Pose.from_translation((0, 0, 2 * hb)), (0.0, 3.0))
    return dict(joints=[joint], parents=[-1], shapes=shapes, functional_joint=0, functional_links=(0,),
                grasp_link=0, grasp_local=(0.0, 0.0, 0.08 * s), q_init=[p["init_angle"]])


@dataclass(frozen=True)
class CategoryTemplate:
    category: str
    ranges: dict[str, tuple[float, float]]
    builder: Callable[[dict], dict]
    base_xy_yaw: tuple[float, float, float] = (0.0, 0.0, 0.0)
    fixed_ranges: tuple[str, ...] = ("init_angle",)
    task: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, (lo, hi) in self.ranges.items():
            if not lo <= hi:
                raise ValueError(f"{self.category}: empty range for {name}")

    def split_ranges(self, split: str) -> dict[str, tuple[float, float]]:
        if split == "seen":
            return dict(self.ranges)
        out = {}
        for name, (lo, hi) in self.ranges.items():
            if name in self.fixed_ranges:
                out[name] = (lo, hi)
            else:
                pad = 0.5 * UNSEEN_WIDENING * (hi - lo)
                out[name] = (lo - pad, hi + pad)
        return out

    def sample_params(self, seed: int, split: str = "seen") -> dict[str, float]:
        rng = np.random.default_rng(seed)
        return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in sorted(self.split_ranges(split).items())}


TEMPLATES: dict[str, CategoryTemplate] = {
    "laptop": CategoryTemplate("laptop", {
        "scale": (0.9, 1.1), "base_depth": (0.18, 0.24), "base_width": (0.26, 0.34),
        "base_thickness": (0.015, 0.025), "lid_thickness": (0.008, 0.014),
        "lid_depth_ratio": (0.92, 1.0), "lid_width_ratio": (0.92, 1.0), "init_angle": (0.1, 0.3),
    }, _build_laptop, (0.08, 0.0, 0.0)),
    "faucet": CategoryTemplate("faucet", {
        "scale": (0.9, 1.1), "body_radius": (0.025, 0.04), "body_half_height": (0.06, 0.09),
        "spout_length": (0.08, 0.14), "hub_height": (0.025, 0.04), "lever_length": (0.09, 0.14),
        "lever_radius": (0.009, 0.013), "init_angle": (0.0, 0.1),
    }, _build_faucet, (0.08, 0.0, 0.0)),
    "bucket": CategoryTemplate("bucket", {
        "scale": (0.9, 1.1), "radius": (0.08, 0.11), "half_height": (0.06, 0.09),
        "handle_height": (0.07, 0.10), "handle_radius": (0.008, 0.012),
    }, _build_bucket, (0.1, 0.0, 0.0)),
    "toilet": CategoryTemplate("toilet", {
        "scale": (0.9, 1.05), "bowl_depth": (0.32, 0.40), "bowl_width": (0.30, 0.36),
        "bowl_height": (0.24, 0.30), "tank_depth": (0.10, 0.14), "tank_height": (0.16, 0.24),
        "lid_thickness": (0.015, 0.025), "init_angle": (0.0, 0.1),
    }, _build_toilet, (0.18, 0.0, 0.0)),
    "drawer": CategoryTemplate("drawer", {
        "scale": (0.9, 1.1), "depth": (0.25, 0.35), "width": (0.25, 0.35), "height": (0.2, 0.3),
        "init_angle": (0.0, 1.0),
    }, _build_drawer, (0.15, 0.0, 0.0), task=False),
    "door": CategoryTemplate("door", {
        "scale": (0.9, 1.1), "depth": (0.25, 0.35), "width": (0.25, 0.35), "height": (0.25, 0.35),
        "init_angle": (0.0, 0.2),
    }, _build_door, (0.15, 0.0, 0.0), task=False),
    "storage_box": CategoryTemplate("storage_box", {
        "scale": (0.9, 1.1), "depth": (0.2, 0.3), "width": (0.2, 0.3), "height": (0.2, 0.3),
        "init_angle": (0.0, 0.4),
    }, _build_storage_box, (0.1, 0.0, 0.0), task=False),
    "knob": CategoryTemplate("knob", {
        "scale": (0.9, 1.1), "width": (0.15, 0.25), "init_angle": (0.0, 0.5),
    }, _build_knob, (0.1, 0.0, 0.0), task=False),
}


def get_template(category: str) -> CategoryTemplate:
    try:
        return TEMPLATES[category.lower()]
    except KeyError:
        raise ValueError(f"unknown category {category!r}; expected one of {sorted(TEMPLATES)}") from None


def generate_object(template: CategoryTemplate, seed: int, split: str = "seen",
                    object_id: str | None = None) -> ArticulatedObjectInstance:
    """Build one instance; ``(template, seed, split)`` fully determines it."""
    if split not in ("seen", "unseen"):
        raise ValueError(f"split must be 'seen' or 'unseen', got {split!r}")
    params = template.sample_params(seed, split)
    parts = template.builder(params)
    x, y, yaw = template.base_xy_yaw
    root = Pose(quat_from_axis_angle((0, 0, 1), yaw), (x, y, 0.0))
    chain = KinematicChain(parts["joints"], parts["parents"], root)
    return ArticulatedObjectInstance(
        object_id=object_id or f"{template.category}-{seed}",
        category=template.category,
        split=split,
        seed=int(seed),
        chain=chain,
        shapes=parts["shapes"],
        functional_joint=parts["functional_joint"],
        functional_links=tuple(parts["functional_links"]),
        grasp_link=parts["grasp_link"],
        grasp_local=np.asarray(parts["grasp_local"], dtype=np.float64),
        q_init=np.asarray(parts["q_init"], dtype=np.float64),
        lift=parts.get("lift", False),
        params=params,
    )


def functional_part_labels(instance: ArticulatedObjectInstance) -> dict[int, str]:
    """``link id -> 'functional' | 'rest'`` (root-attached shapes use link -1)."""
    return {link: ("functional" if link in instance.functional_links else "rest") for link in instance.link_ids
            if any(s.link == link for s in instance.shapes)}


def grasp_point_reachable(instance: ArticulatedObjectInstance) -> bool:
    p = instance.grasp_point(instance.chain.root, instance.q_init)
    return bool(np.all(p >= WORKSPACE_LO) and np.all(p <= WORKSPACE_HI))


@dataclass
class SplitManifest:
    category: str
    seed: int
    objects: list[dict]

    @property
    def counts(self) -> dict[str, int]:
        seen = sum(o["split"] == "seen" for o in self.objects)
        return {"all": len(self.objects), "seen": seen, "unseen": len(self.objects) - seen}

    def ids(self, split: str | None = None) -> list[str]:
        return [o["id"] for o in self.objects if split is None or o["split"] == split]

    def entries(self, split: str | None = None) -> list[dict]:
        return [o for o in self.objects if split is None or o["split"] == split]

    def instances(self, split: str | None = None) -> list[ArticulatedObjectInstance]:
        template = get_template(self.category)
        return [generate_object(template, o["seed"], o["split"], o["id"]) for o in self.entries(split)]

    def subset(self, fraction: float) -> "SplitManifest":
        """Keep the first ``round(fraction * n_seen)`` seen objects and every unseen one."""
        seen = self.entries("seen")
        k = max(1, int(np.floor(fraction * len(seen) + 0.5)))
        keep = {o["id"] for o in seen[:k]}
        objs = [o for o in self.objects if o["split"] == "unseen" or o["id"] in keep]
        return SplitManifest(self.category, self.seed, objs)

    def to_json(self) -> str:
        body = {"category": self.category, "seed": self.seed, "counts": self.counts, "objects": self.objects}
        return json.dumps(body, indent=2, sort_keys=True)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "SplitManifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        body = json.loads(path.read_text())
        return cls(body["category"], int(body["seed"]), body["objects"])


def generate_split(template: CategoryTemplate, n_all: int, n_seen: int, n_unseen: int,
                   seed: int) -> SplitManifest:
    if n_seen + n_unseen != n_all:
        raise ValueError(f"n_seen + n_unseen must equal n_all ({n_seen} + {n_unseen} != {n_all})")
    if min(n_all, n_seen, n_unseen) < 0:
        raise ValueError("object counts must be non-negative")
    rng = np.random.default_rng(seed)
    seeds = rng.choice(2**31 - 1, size=n_all, replace=False)
    objects = []
    for i, s in enumerate(seeds):
        split = "seen" if i < n_seen else "unseen"
        oid = f"{template.category}-{i:03d}"
        objects.append({"id": oid, "seed": int(s), "split": split,
                        "params": template.sample_params(int(s), split)})
    return SplitManifest(template.category, int(seed), objects)


def default_split(category: str, seed: int = 0) -> SplitManifest:
    n_all, n_seen, n_unseen = TABLE1_COUNTS[category]
    return generate_split(get_template(category), n_all, n_seen, n_unseen, seed)
