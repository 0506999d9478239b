"""Depth rendering, point-cloud construction and observation assembly.

Cameras follow the pinhole convention: +z looks forward, +x right, +y
down. Depth images hold z-depth in metres (``inf`` where nothing is hit).
Point clouds are expressed in the world frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit

from .geometry import Pose, compose_pose, look_at
from .robot import N_DOF, ROBOT
from .shapes import KIND_CODES, LABEL_HAND, ShapePrimitive, sample_surface
from .world import SimState

OBSERVED, IMAGINED = 0, 1
PROPRIO_DIM = N_DOF + 3 + 3 + 3 + 4

DXPC_MAGIC = b"DXPC"
DXPC_VERSION = 1
DXPC_RECORD = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "u1"), ("origin", "u1")])


class PointCloudFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    pose: Pose
    fov_y: float = np.deg2rad(60.0)
    width: int = 128
    height: int = 128
    near: float = 0.05
    far: float = 3.0

    def __post_init__(self):
        if not 0 < self.fov_y < np.pi:
            raise ValueError("fov_y must lie in (0, pi)")
        if not 0 <= self.near < self.far:
            raise ValueError("near must be smaller than far")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be positive")

    @classmethod
    def looking_at(cls, eye, target, **kw) -> "CameraModel":
        return cls(look_at(eye, target), **kw)

    @property
    def focal(self) -> float:
        return 0.5 * self.height / np.tan(0.5 * self.fov_y)

    @property
    def optical_axis(self) -> np.ndarray:
        return self.pose.rotation_matrix()[:, 2]

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray per pixel, scaled so that its z component is 1."""
        f = self.focal
        u = (np.arange(self.width) + 0.5 - 0.5 * self.width) / f
        v = (np.arange(self.height) + 0.5 - 0.5 * self.height) / f
        uu, vv = np.meshgrid(u, v)
        return np.stack([uu, vv, np.ones_like(uu)], axis=-1)


@dataclass
class LabeledPointCloud:
    points: np.ndarray
    labels: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        self.origin = np.asarray(self.origin, dtype=np.uint8).reshape(-1)
        if not len(self.points) == len(self.labels) == len(self.origin):
            raise ValueError("points, labels and origin must have equal length")

    def __len__(self):
        return len(self.points)

    def features(self) -> np.ndarray:
        """Per-point policy input: ``xyz`` plus the imagined-point flag."""
        return np.concatenate([self.points, self.origin[:, None].astype(np.float32)], axis=1)


@dataclass
class Observation:
    proprio: np.ndarray
    cloud: LabeledPointCloud
    sentinel: bool = False


@dataclass(frozen=True)
class SensingConfig:
    n_observed: int = 512
    n_imagined: int = 96
    crop_lo: tuple[float, float, float] = (-0.45, -0.45, 0.005)
    crop_hi: tuple[float, float, float] = (0.45, 0.45, 0.7)
    width: int = 128
    height: int = 128
    fov_deg: float = 60.0
    near: float = 0.05
    far: float = 3.0

    def camera(self, eye, target) -> CameraModel:
        return CameraModel(look_at(eye, target), np.deg2rad(self.fov_deg), self.width, self.height,
                           self.near, self.far)

    @property
    def n_points(self) -> int:
        return self.n_observed + self.n_imagined


# ---------------------------------------------------------------- ray casting

@njit(cache=True)
def _hit_sphere(ox, oy, oz, dx, dy, dz, r, near):
    a = dx * dx + dy * dy + dz * dz
    b = ox * dx + oy * dy + oz * dz
    c = ox * ox + oy * oy + oz * oz - r * r
    disc = b * b - a * c
    if disc < 0.0:
        return np.inf
    sq = np.sqrt(disc)
    t1 = (-b - sq) / a
    if t1 >= near:
        return t1
    t2 = (-b + sq) / a
    if t2 >= near:
        return t2
    return np.inf


@njit(cache=True)
def _hit_box(o, d, h, near):
    tmin = -np.inf
    tmax = np.inf
    for k in range(3):
        if abs(d[k]) < 1e-15:
            if abs(o[k]) > h[k]:
                return np.inf
        else:
            t1 = (-h[k] - o[k]) / d[k]
            t2 = (h[k] - o[k]) / d[k]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
            if tmin > tmax:
                return np.inf
    if tmin >= near:
        return tmin
    if tmax >= near:
        return tmax
    return np.inf


@njit(cache=True)
def _hit_round(o, d, r, h, near, capsule):
    best = np.inf
    a = d[0] * d[0] + d[1] * d[1]
    if a > 1e-18:
        b = o[0] * d[0] + o[1] * d[1]
        c = o[0] * o[0] + o[1] * o[1] - r * r
        disc = b * b - a * c
        if disc >= 0.0:
            sq = np.sqrt(disc)
            for t in ((-b - sq) / a, (-b + sq) / a):
                z = o[2] + t * d[2]
                if abs(z) <= h and t >= near and t < best:
                    best = t
    if capsule:
        for zc in (-h, h):
            t = _hit_sphere(o[0], o[1], o[2] - zc, d[0], d[1], d[2], r, near)
            if t < best:
                best = t
    elif abs(d[2]) > 1e-18:
        for zc in (-h, h):
            t = (zc - o[2]) / d[2]
            x = o[0] + t * d[0]
            y = o[1] + t * d[1]
            if x * x + y * y <= r * r and t >= near and t < best:
                best = t
    return best


@njit(cache=True)
def _render_kernel(rays, rc, tc, near, far, kinds, dims, rs, ts, br):
    hgt, wid = rays.shape[0], rays.shape[1]
    n_shapes = kinds.shape[0]
    depth = np.full((hgt, wid), np.inf)
    ids = np.full((hgt, wid), -1, dtype=np.int64)
    o = np.empty(3)
    d = np.empty(3)
    dw = np.empty(3)
    for v in range(hgt):
        for u in range(wid):
            for k in range(3):
                dw[k] = rc[k, 0] * rays[v, u, 0] + rc[k, 1] * rays[v, u, 1] + rc[k, 2] * rays[v, u, 2]
            dd = dw[0] * dw[0] + dw[1] * dw[1] + dw[2] * dw[2]
            best = np.inf
            best_id = -1
            for s in range(n_shapes):
                # bounding-sphere rejection
                ex = ts[s, 0] - tc[0]
                ey = ts[s, 1] - tc[1]
                ez = ts[s, 2] - tc[2]
                tca = (ex * dw[0] + ey * dw[1] + ez * dw[2]) / dd
                px = ex - tca * dw[0]
                py = ey - tca * dw[1]
                pz = ez - tca * dw[2]
                if px * px + py * py + pz * pz > br[s] * br[s]:
                    continue
                if tca - br[s] / np.sqrt(dd) > best:
                    continue
                for k in range(3):
                    o[k] = rs[s, 0, k] * (tc[0] - ts[s, 0]) + rs[s, 1, k] * (tc[1] - ts[s, 1]) \
                        + rs[s, 2, k] * (tc[2] - ts[s, 2])
                    d[k] = rs[s, 0, k] * dw[0] + rs[s, 1, k] * dw[1] + rs[s, 2, k] * dw[2]
                kind = kinds[s]
                if kind == 0:
                    t = _hit_sphere(o[0], o[1], o[2], d[0], d[1], d[2], dims[s, 0], near)
                elif kind == 1:
                    t = _hit_box(o, d, dims[s], near)
                elif kind == 2:
                    t = _hit_round(o, d, dims[s, 0], dims[s, 1], near, True)
                else:
                    t = _hit_round(o, d, dims[s, 0], dims[s, 1], near, False)
                if t < best and t <= far:
                    best = t
                    best_id = s
            depth[v, u] = best
            ids[v, u] = best_id
    return depth, ids


def _shape_arrays(shapes: list[ShapePrimitive]):
    n = len(shapes)
    kinds = np.empty(n, dtype=np.int64)
    dims = np.zeros((n, 3))
    rs = np.empty((n, 3, 3))
    ts = np.empty((n, 3))
    br = np.empty(n)
    for i, s in enumerate(shapes):
        kinds[i] = KIND_CODES[s.kind]
        dims[i, :len(s.dims)] = s.dims
        rs[i] = s.pose.rotation_matrix()
        ts[i] = s.pose.translation
        br[i] = s.bounding_radius()
    return kinds, dims, rs, ts, br


def render_depth(shapes: list[ShapePrimitive], cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast world-posed ``shapes``; returns ``(depth, shape_index)`` images."""
    rays = cam.pixel_rays()
    if not shapes:
        return np.full(rays.shape[:2], np.inf), np.full(rays.shape[:2], -1, dtype=np.int64)
    kinds, dims, rs, ts, br = _shape_arrays(shapes)
    return _render_kernel(rays, cam.pose.rotation_matrix(), cam.pose.translation, float(cam.near),
                          float(cam.far), kinds, dims, rs, ts, br)


def depth_to_points(depth: np.ndarray, ids: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Back-project finite pixels into world points with the id of the shape hit."""
    mask = np.isfinite(depth)
    if not mask.any():
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    rays = cam.pixel_rays()[mask]
    pts_cam = rays * depth[mask][:, None]
    return cam.pose.apply(pts_cam), ids[mask]


def crop_and_downsample(points: np.ndarray, lo, hi, n: int, seed: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Keep points inside the box ``[lo, hi]`` and resample to exactly ``n``.

    Returns ``(points, source_index, sentinel)``. With fewer than ``n``
    points inside, the remainder is drawn with replacement; with none,
    ``n`` copies of the box centre are returned with index ``-1``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = np.flatnonzero(np.all((points >= lo) & (points <= hi), axis=1))
    m = len(inside)
    if m == 0:
        return np.tile(0.5 * (lo + hi), (n, 1)), np.full(n, -1, dtype=np.int64), True
    rng = np.random.default_rng(seed)
    if m >= n:
        pick = np.sort(rng.choice(m, size=n, replace=False))
    else:
        pick = np.concatenate([np.arange(m), rng.choice(m, size=n - m, replace=True)])
    idx = inside[pick]
    return points[idx], idx, False


# ---------------------------------------------------------------- imagination

def _imagination_quotas(n: int) -> list[int]:
    weights = np.array([6.0 if s.label == LABEL_HAND and s.kind == "box" else 1.0 for s in ROBOT.shapes])
    raw = n * weights / weights.sum()
    q = np.floor(raw).astype(int)
    rem = n - q.sum()
    order = np.argsort(-(raw - q), kind="stable")
    q[order[:rem]] += 1
    return q.tolist()


@lru_cache(maxsize=16)
def imagination_pattern(n: int, seed: int) -> tuple[tuple[int, np.ndarray], ...]:
    """Fixed per-shape surface samples (link frame) re-posed every step."""
    rng = np.random.default_rng(seed)
    out = []
    for i, (shape, k) in enumerate(zip(ROBOT.shapes, _imagination_quotas(n))):
        pts = sample_surface(shape, k, rng)
        pts.setflags(write=False)
        out.append((i, pts))
    return tuple(out)


def imagine_robot_points(robot_q: np.ndarray, n: int, seed: int = 0,
                         link_poses: list[Pose] | None = None) -> LabeledPointCloud:
    """``n`` points on the robot's primitives, posed by forward kinematics."""
    if n <= 0:
        raise ValueError("n must be positive")
    poses = ROBOT.link_poses(robot_q) if link_poses is None else link_poses
    pts, labels = [], []
    for i, local in imagination_pattern(n, seed):
        if len(local) == 0:
            continue
        shape = ROBOT.shapes[i]
        pts.append(poses[shape.link].apply(local))
        labels.append(np.full(len(local), shape.label))
    return LabeledPointCloud(np.concatenate(pts), np.concatenate(labels), np.full(n, IMAGINED))


# ---------------------------------------------------------------- assembly

def posed_robot_shapes(link_poses: list[Pose]) -> list[ShapePrimitive]:
    return [ShapePrimitive(s.kind, s.dims, compose_pose(link_poses[s.link], s.pose), s.link, s.label)
            for s in ROBOT.shapes]


def posed_object_shapes(obj, obj_poses: dict[int, Pose]) -> list[ShapePrimitive]:
    return [ShapePrimitive(s.kind, s.dims, compose_pose(obj_poses[s.link], s.pose), s.link, s.label)
            for s in obj.labeled_shapes()]


def scene_shapes(state: SimState, include_robot: bool = True, link_poses=None) -> list[ShapePrimitive]:
    shapes = posed_object_shapes(state.obj, state.object_link_poses())
    if include_robot:
        shapes += posed_robot_shapes(state.robot_link_poses() if link_poses is None else link_poses)
    return shapes


def proprio_vector(state: SimState) -> np.ndarray:
    r = state.robot
    palm = state.palm_pose()
    return np.concatenate([r.arm_q, r.hand_q, r.palm_v, r.palm_w, palm.translation, palm.rotation])


def observe_shapes(shapes: list[ShapePrimitive], cam: CameraModel, cfg: SensingConfig,
                   seed: int) -> tuple[LabeledPointCloud, bool]:
    depth, ids = render_depth(shapes, cam)
    pts, sid = depth_to_points(depth, ids, cam)
    sel, idx, sentinel = crop_and_downsample(pts, cfg.crop_lo, cfg.crop_hi, cfg.n_observed, seed)
    shape_labels = np.array([s.label for s in shapes] + [1], dtype=np.uint8)
    labels = shape_labels[np.where(idx >= 0, sid[np.maximum(idx, 0)], -1)] if len(sid) else \
        np.full(cfg.n_observed, shape_labels[-1])
    return LabeledPointCloud(sel, labels, np.full(cfg.n_observed, OBSERVED)), sentinel


def assemble_observation(state: SimState, cam: CameraModel, cfg: SensingConfig = SensingConfig(),
                         seed: int = 0, imagination_seed: int = 0) -> Observation:
    """Proprio vector plus observed (cropped, downsampled) and imagined points."""
    poses = state.robot_link_poses()
    observed, sentinel = observe_shapes(scene_shapes(state, link_poses=poses), cam, cfg, seed)
    imagined = imagine_robot_points(state.robot.q, cfg.n_imagined, imagination_seed, poses)
    cloud = LabeledPointCloud(np.concatenate([observed.points, imagined.points]),
                              np.concatenate([observed.labels, imagined.labels]),
                              np.concatenate([observed.origin, imagined.origin]))
    return Observation(proprio_vector(state), cloud, sentinel)


# ---------------------------------------------------------------- file format

def write_dxpc(path, cloud: LabeledPointCloud) -> Path:
    path = Path(path)
    rec = np.empty(len(cloud), dtype=DXPC_RECORD)
    rec["x"], rec["y"], rec["z"] = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    rec["label"], rec["origin"] = cloud.labels, cloud.origin
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", DXPC_MAGIC, DXPC_VERSION, len(cloud), len(DXPC_RECORD.names)))
        fh.write(rec.tobytes())
    return path


def read_dxpc(path) -> LabeledPointCloud:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"point cloud not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16:
        raise PointCloudFormatError(f"{path}: truncated header")
    magic, version, n, nfields = struct.unpack("<4sIII", raw[:16])
    if magic != DXPC_MAGIC:
        raise PointCloudFormatError(f"{path}: bad magic {magic!r}")
    if version != DXPC_VERSION or nfields != len(DXPC_RECORD.names):
        raise PointCloudFormatError(f"{path}: unsupported version {version} / fields {nfields}")
    if len(raw) != 16 + n * DXPC_RECORD.itemsize:
        raise PointCloudFormatError(f"{path}: expected {n} records")
    rec = np.frombuffer(raw, dtype=DXPC_RECORD, offset=16, count=n)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
    return LabeledPointCloud(pts, rec["label"].copy(), rec["origin"].copy())
