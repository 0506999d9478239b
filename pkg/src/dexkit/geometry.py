"""Rigid transforms, quaternions and forward kinematics.

Quaternions are stored as ``(w, x, y, z)`` numpy arrays. A :class:`Pose`
maps points from its local frame into its parent frame, so chaining
``world_T_parent`` with ``parent_T_child`` reads left to right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.sqrt(q @ q)
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis: Sequence[float], angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.sqrt(axis @ axis)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Quaternion of the rotation vector ``rotvec`` (axis times angle)."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = np.sqrt(rotvec @ rotvec)
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * rotvec[0], 0.5 * rotvec[1], 0.5 * rotvec[2]])
        return quat_normalize(q)
    return quat_from_axis_angle(rotvec / angle, angle)


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of ``q``, taking the short way round."""
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = np.sqrt(v @ v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * np.arctan2(s, q[0])
    return angle * v / s


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(np.array(q))
    return q if q[0] >= 0 else -q


def quat_from_euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` as a quaternion."""
    qz = quat_from_axis_angle((0, 0, 1), yaw)
    qy = quat_from_axis_angle((0, 1, 0), pitch)
    qx = quat_from_axis_angle((1, 0, 0), roll)
    return quat_normalize(quat_mul(quat_mul(qz, qy), qx))


def euler_zyx_from_quat(q: np.ndarray) -> tuple[float, float, float]:
    m = quat_to_matrix(q)
    pitch = float(np.arcsin(np.clip(-m[2, 0], -1.0, 1.0)))
    yaw = float(np.arctan2(m[1, 0], m[0, 0]))
    roll = float(np.arctan2(m[2, 1], m[2, 2]))
    return yaw, pitch, roll


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3].copy())

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> "Pose":
        return cls(translation=np.asarray(t, dtype=np.float64))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def inverse(self) -> "Pose":
        return inverse_pose(self)

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose_pose(self, other)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return transform_points(self, pts)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.rotation, other.rotation)
                    and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def _raw_pose(rotation: np.ndarray, translation: np.ndarray) -> Pose:
    # skips validation; callers pass a unit quaternion and a float 3-vector
    p = object.__new__(Pose)
    object.__setattr__(p, "rotation", rotation)
    object.__setattr__(p, "translation", translation)
    return p


def compose_pose(a: Pose, b: Pose) -> Pose:
    """Return ``a ∘ b``: points are mapped by ``b`` first, then by ``a``.

    Matches the homogeneous product ``a.matrix() @ b.matrix()``.
    """
    # scalar arithmetic: this sits on the FK hot path
    aw, ax, ay, az = a.rotation.tolist()
    bw, bx, by, bz = b.rotation.tolist()
    w = aw * bw - ax * bx - ay * by - az * bz
    x = aw * bx + ax * bw + ay * bz - az * by
    y = aw * by - ax * bz + ay * bw + az * bx
    z = aw * bz + ax * by - ay * bx + az * bw
    n = math.sqrt(w * w + x * x + y * y + z * z)
    tx, ty, tz = b.translation.tolist()
    ox, oy, oz = a.translation.tolist()
    rx = (1 - 2 * (ay * ay + az * az)) * tx + 2 * (ax * ay - aw * az) * ty + 2 * (ax * az + aw * ay) * tz
    ry = 2 * (ax * ay + aw * az) * tx + (1 - 2 * (ax * ax + az * az)) * ty + 2 * (ay * az - aw * ax) * tz
    rz = 2 * (ax * az - aw * ay) * tx + 2 * (ay * az + aw * ax) * ty + (1 - 2 * (ax * ax + ay * ay)) * tz
    return _raw_pose(np.array([w / n, x / n, y / n, z / n]), np.array([ox + rx, oy + ry, oz + rz]))


def inverse_pose(p: Pose) -> Pose:
    rinv = quat_conj(p.rotation)
    return Pose(rinv, -(quat_to_matrix(rinv) @ p.translation))


def transform_points(p: Pose, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3)
    return pts @ quat_to_matrix(p.rotation).T + p.translation


def twist_integrate(p: Pose, v: np.ndarray, w: np.ndarray, dt: float) -> Pose:
    """Advance ``p`` by a world-frame twist ``(v, w)`` held for ``dt`` seconds.

    Translation moves by ``v * dt``; orientation is left-multiplied by
    ``exp(w * dt)``.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    rot = quat_normalize(quat_mul(quat_exp(w * dt), p.rotation))
    return Pose(rot, p.translation + v * dt)


@dataclass(frozen=True)
class JointSpec:
    kind: str
    axis: np.ndarray
    origin: Pose = field(default_factory=Pose)
    limits: tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        n = np.sqrt(axis @ axis)
        if abs(n - 1.0) > 1e-9:
            if n == 0:
                raise ValueError("joint axis must be non-zero")
            axis = axis / n
        object.__setattr__(self, "axis", axis)
        lo, hi = float(self.limits[0]), float(self.limits[1])
        if lo > hi:
            raise ValueError(f"joint limits inverted: {lo} > {hi}")
        object.__setattr__(self, "limits", (lo, hi))
        # prismatic axis expressed in the parent frame, reused by local()
        object.__setattr__(self, "_parent_axis", quat_to_matrix(self.origin.rotation) @ axis)

    def clamp(self, q: float) -> float:
        return float(min(max(q, self.limits[0]), self.limits[1]))

    def motion(self, q: float) -> Pose:
        # axis is unit length (see __post_init__), so no renormalisation here
        if self.kind == REVOLUTE:
            h = 0.5 * float(q)
            return _raw_pose(np.concatenate(([math.cos(h)], math.sin(h) * self.axis)), np.zeros(3))
        return _raw_pose(np.array([1.0, 0.0, 0.0, 0.0]), self.axis * float(q))

    def local(self, q: float) -> Pose:
        """``origin ∘ motion(q)`` in closed form (one product instead of two)."""
        o = self.origin
        if self.kind == PRISMATIC:
            return _raw_pose(o.rotation, o.translation + self._parent_axis * float(q))
        h = 0.5 * float(q)
        c, sn = math.cos(h), math.sin(h)
        ux, uy, uz = self.axis.tolist()
        bx, by, bz = sn * ux, sn * uy, sn * uz
        aw, ax, ay, az = o.rotation.tolist()
        w = aw * c - ax * bx - ay * by - az * bz
        x = aw * bx + ax * c + ay * bz - az * by
        y = aw * by - ax * bz + ay * c + az * bx
        z = aw * bz + ax * by - ay * bx + az * c
        n = math.sqrt(w * w + x * x + y * y + z * z)
        return _raw_pose(np.array([w / n, x / n, y / n, z / n]), o.translation)


@dataclass
class KinematicChain:
    """A tree of links, each attached to its parent through one joint.

    ``parents[i]`` is the index of link ``i``'s parent, or ``-1`` for
    links attached directly to ``root``. Parents always precede children.
    """

    joints: list[JointSpec]
    parents: list[int]
    root: Pose = field(default_factory=Pose)
    names: list[str] | None = None

    def __post_init__(self):
        if len(self.joints) != len(self.parents):
            raise ValueError("joints and parents must have equal length")
        for i, p in enumerate(self.parents):
            if not -1 <= p < i:
                raise ValueError(f"link {i} has invalid parent {p}; parents must precede children")
        if self.names is None:
            self.names = [f"link{i}" for i in range(len(self.joints))]

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def lower(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    def upper(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def clamp(self, q: np.ndarray) -> np.ndarray:
        # bounds cached against the joint list they were built from
        key = tuple(id(j) for j in self.joints)
        if getattr(self, "_bounds_key", None) != key:
            self._bounds = (self.lower(), self.upper())
            self._bounds_key = key
        return np.clip(np.asarray(q, dtype=np.float64), *self._bounds)

    def descendants(self, link: int) -> list[int]:
        out = [link]
        for i in range(link + 1, self.n_joints):
            if self.parents[i] in out:
                out.append(i)
        return out


def forward_kinematics(chain: KinematicChain, q: Sequence[float]) -> list[Pose]:
    """World pose of every link after clamping ``q`` to the joint limits."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != chain.n_joints:
        raise ValueError(f"expected {chain.n_joints} joint values, got {q.shape[0]}")
    q = chain.clamp(q)
    poses: list[Pose] = []
    for i, joint in enumerate(chain.joints):
        parent = chain.root if chain.parents[i] < 0 else poses[chain.parents[i]]
        poses.append(compose_pose(parent, joint.local(q[i])))
    return poses


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0, 0, 1)) -> Pose:
    """Camera pose with +z along the view direction, +x right and +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    m = np.stack([right, down, fwd], axis=1)
    return Pose(matrix_to_quat(m), eye)
