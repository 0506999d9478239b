"""Quasi-static simulation of the robot and one articulated object.

The object never moves on its own: its functional joint advances only
through :func:`couple_functional_joint`, and only while the palm and at
least two fingers touch the functional part. All collision queries run on
sphere proxies, so the only distance kernel is sphere-sphere.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    PRISMATIC,
    KinematicChain,
    Pose,
    euler_zyx_from_quat,
    forward_kinematics,
    quat_conj,
    quat_from_axis_angle,
    quat_log,
    quat_mul,
    twist_integrate,
)
from .robot import (
    CONTACT_LINKS,
    FINGER_LINKS,
    N_ARM,
    N_DOF,
    N_HAND,
    PALM_LINK,
    ROBOT,
    palm_pose_from_arm_q,
)
from .shapes import LABEL_FUNCTIONAL, LABEL_REST, ShapePrimitive, sphere_proxies

log = logging.getLogger(__name__)

ROOT_LINK = -1


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    hand_kp: float = 10.0
    hand_max_speed: float = 2.0
    palm_max_lin: float = 0.5
    palm_max_ang: float = 1.5
    contact_tol: float = 0.002
    penetration_tol: float = 0.005
    coupling_gain: float = 1.0
    coupling_max_rate: float = 2.0
    hook_flex_threshold: float = 1.0
    bisection_iters: int = 8

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.contact_tol < 0 or self.penetration_tol < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass
class ArticulatedObjectInstance:
    """A generated object: kinematic chain, primitive shapes and annotations.

    ``chain.root`` is the annotated base pose. Shapes with ``link == -1``
    are rigidly attached to the root.
    """

    object_id: str
    category: str
    split: str
    seed: int
    chain: KinematicChain
    shapes: list[ShapePrimitive]
    functional_joint: int
    functional_links: tuple[int, ...]
    grasp_link: int
    grasp_local: np.ndarray
    q_init: np.ndarray
    lift: bool = False
    params: dict = field(default_factory=dict)
    proxy_spacing: float = 0.01
    _proxy_cache: dict | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def link_ids(self) -> list[int]:
        return [ROOT_LINK] + list(range(self.chain.n_joints))

    def link_label(self, link: int) -> int:
        return LABEL_FUNCTIONAL if link in self.functional_links else LABEL_REST

    def labeled_shapes(self) -> list[ShapePrimitive]:
        return [dataclasses.replace(s, label=self.link_label(s.link)) for s in self.shapes]

    def link_poses(self, root: Pose, q: np.ndarray) -> dict[int, Pose]:
        chain = dataclasses.replace(self.chain, root=root)
        poses = forward_kinematics(chain, q)
        out = {ROOT_LINK: root}
        out.update(enumerate(poses))
        return out

    def grasp_point(self, root: Pose, q: np.ndarray) -> np.ndarray:
        return self.link_poses(root, q)[self.grasp_link].apply(self.grasp_local[None])[0]

    def proxies(self) -> dict[int, tuple[np.ndarray, np.ndarray, cKDTree, float]]:
        """Per link: ``(centers, radii, kd-tree, r_max)`` in the link frame."""
        if self._proxy_cache is None:
            cache = {}
            for link in self.link_ids:
                cs, rs = [], []
                for s in self.shapes:
                    if s.link == link:
                        c, r = sphere_proxies(s, self.proxy_spacing)
                        cs.append(c)
                        rs.append(r)
                if cs:
                    c = np.concatenate(cs)
                    r = np.concatenate(rs)
                    center = 0.5 * (c.min(0) + c.max(0))
                    bound = float(np.max(np.linalg.norm(c - center, axis=1) + r))
                    cache[link] = (c, r, cKDTree(c), float(r.max()), center, bound)
            self._proxy_cache = cache
        return self._proxy_cache

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_proxy_cache"] = None
        return state


@dataclass
class RobotState:
    arm_q: np.ndarray
    hand_q: np.ndarray
    hand_q_target: np.ndarray
    palm_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    palm_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hand_qd: np.ndarray = field(default_factory=lambda: np.zeros(N_HAND))

    @property
    def q(self) -> np.ndarray:
        return np.concatenate([self.arm_q, self.hand_q])

    def copy(self) -> "RobotState":
        return RobotState(*(np.array(getattr(self, f.name)) for f in dataclasses.fields(self)))


@dataclass
class SimState:
    robot: RobotState
    obj: ArticulatedObjectInstance
    obj_root: Pose
    obj_q: np.ndarray
    step: int = 0
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.robot.copy(), self.obj, self.obj_root, self.obj_q.copy(), self.step, self.time)

    def robot_link_poses(self) -> list[Pose]:
        return ROBOT.link_poses(self.robot.q)

    def object_link_poses(self) -> dict[int, Pose]:
        return self.obj.link_poses(self.obj_root, self.obj_q)

    def palm_pose(self) -> Pose:
        return palm_pose_from_arm_q(self.robot.arm_q)

    def grasp_point(self) -> np.ndarray:
        return self.obj.grasp_point(self.obj_root, self.obj_q)

    def functional_value(self) -> float:
        return float(self.obj_q[self.obj.functional_joint])

    def fingerprint(self) -> bytes:
        r = self.robot
        parts = [r.arm_q, r.hand_q, r.hand_q_target, r.palm_v, r.palm_w, r.hand_qd, self.obj_q,
                 self.obj_root.rotation, self.obj_root.translation, np.array([self.step, self.time])]
        return b"".join(np.ascontiguousarray(p, dtype=np.float64).tobytes() for p in parts)


@dataclass
class ContactReport:
    """Hand/object proxy contacts. Normals point from the object toward the hand."""

    link_contact: np.ndarray
    link_contact_functional: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    depths: np.ndarray
    gaps: np.ndarray
    hand_index: np.ndarray
    hand_link: np.ndarray
    obj_link: np.ndarray
    obj_index: np.ndarray
    functional: np.ndarray

    @property
    def max_penetration(self) -> float:
        return float(self.depths.max()) if len(self.depths) else 0.0

    def link_in_contact(self, link: int, functional_only: bool = False) -> bool:
        flags = self.link_contact_functional if functional_only else self.link_contact
        return bool(flags[CONTACT_LINKS.index(link)])

    def palm_contact(self, functional_only: bool = False) -> bool:
        return self.link_in_contact(PALM_LINK, functional_only)

    def finger_contacts(self, functional_only: bool = False) -> int:
        flags = self.link_contact_functional if functional_only else self.link_contact
        n = 0
        for f in FINGER_LINKS:
            if any(flags[CONTACT_LINKS.index(i)] for i in f):
                n += 1
        return n

    def grasp(self, functional_only: bool = False) -> bool:
        """Palm plus at least two fingers touching the object (or its functional part)."""
        return self.palm_contact(functional_only) and self.finger_contacts(functional_only) >= 2


@dataclass
class StepInfo:
    step: int
    grasp: bool = False
    functional_grasp: bool = False
    coupled: bool = False
    coupling_rate: float = 0.0
    coupling_degenerate: bool = False
    penetration_before: float = 0.0
    residual_penetration: float = 0.0
    sentinel: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _empty_report() -> ContactReport:
    z3 = np.zeros((0, 3))
    zi = np.zeros(0, dtype=np.int64)
    flags = np.zeros(len(CONTACT_LINKS), dtype=bool)
    return ContactReport(flags, flags.copy(), z3, z3.copy(), np.zeros(0), np.zeros(0), zi, zi, zi, zi,
                         np.zeros(0, dtype=bool))


def sphere_pair_contacts(ca, ra, cb, rb, tol):
    """All pairs with surface gap ``<= tol``; returns ``(i, j, gap)``.

    Uses kd-trees; :func:`brute_force_pairs` in the tests checks it.
    """
    if len(ca) == 0 or len(cb) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    ta, tb = cKDTree(ca), cKDTree(cb)
    rmax = float(ra.max() + rb.max() + tol)
    m = ta.sparse_distance_matrix(tb, rmax, output_type="ndarray")
    i, j = m["i"].astype(np.int64), m["j"].astype(np.int64)
    dist = np.linalg.norm(ca[i] - cb[j], axis=1)
    gap = dist - ra[i] - rb[j]
    keep = gap <= tol
    order = np.lexsort((j[keep], i[keep]))
    return i[keep][order], j[keep][order], gap[keep][order]


def _contacts_from_hand(hand_world: np.ndarray, obj: ArticulatedObjectInstance, obj_poses: dict[int, Pose],
                        tol: float) -> ContactReport:
    _, hand_r, hand_links = ROBOT.proxies
    hc = 0.5 * (hand_world.min(0) + hand_world.max(0))
    hb = float(np.max(np.linalg.norm(hand_world - hc, axis=1))) + float(hand_r.max())
    chunks = []
    for link, (c, r, tree, rmax, center, bound) in obj.proxies().items():
        pose = obj_poses[link]
        R = pose.rotation_matrix()
        local = (hand_world - pose.translation) @ R
        if np.linalg.norm(R.T @ (hc - pose.translation) - center) > hb + bound + tol:
            continue
        th = cKDTree(local)
        m = th.sparse_distance_matrix(tree, float(hand_r.max() + rmax + tol), output_type="ndarray")
        if len(m) == 0:
            continue
        i, j = m["i"].astype(np.int64), m["j"].astype(np.int64)
        diff = local[i] - c[j]
        dist = np.linalg.norm(diff, axis=1)
        gap = dist - hand_r[i] - r[j]
        keep = gap <= tol
        if not keep.any():
            continue
        i, j, diff, dist, gap = i[keep], j[keep], diff[keep], dist[keep], gap[keep]
        n_local = diff / np.maximum(dist, 1e-12)[:, None]
        point_local = c[j] + r[j][:, None] * n_local
        chunks.append((i, j, np.full(len(i), link), pose.apply(point_local), n_local @ R.T, gap))
    if not chunks:
        return _empty_report()
    i = np.concatenate([ch[0] for ch in chunks])
    j = np.concatenate([ch[1] for ch in chunks])
    ol = np.concatenate([ch[2] for ch in chunks])
    pts = np.concatenate([ch[3] for ch in chunks])
    nrm = np.concatenate([ch[4] for ch in chunks])
    gap = np.concatenate([ch[5] for ch in chunks])
    order = np.lexsort((j, ol, i))
    i, j, ol, pts, nrm, gap = i[order], j[order], ol[order], pts[order], nrm[order], gap[order]
    hl = hand_links[i]
    functional = np.isin(ol, obj.functional_links)
    link_contact = np.array([np.any(hl == k) for k in CONTACT_LINKS])
    link_func = np.array([np.any((hl == k) & functional) for k in CONTACT_LINKS])
    return ContactReport(link_contact, link_func, pts, nrm, np.maximum(0.0, -gap), gap, i, hl, ol, j, functional)


def detect_contacts(state: SimState, cfg: SimConfig) -> ContactReport:
    """Link/object contact iff some proxy-sphere pair has gap ``<= contact_tol``."""
    hand_world = ROBOT.proxy_world(state.robot_link_poses())
    return _contacts_from_hand(hand_world, state.obj, state.object_link_poses(), cfg.contact_tol)


def _hook_condition(state: SimState, cfg: SimConfig) -> bool:
    palm_z = state.robot.arm_q[2]
    handle_z = state.grasp_point()[2]
    q = state.robot.hand_q
    flexed = 0
    for f in range(4):
        if q[4 * f + 1:4 * f + 4].sum() >= cfg.hook_flex_threshold:
            flexed += 1
    return palm_z < handle_z and flexed >= 2


def couple_functional_joint(state: SimState, contacts: ContactReport, cfg: SimConfig,
                            v_palm: np.ndarray | None = None) -> tuple[float, bool]:
    """Functional-joint rate induced by the palm while it grasps the functional part.

    Returns ``(rate, degenerate)``. Revolute joints follow the lever-arm
    rule ``gain * ((a x (c - p)) . v) / |a x (c - p)|^2`` with ``c`` the
    mean contact point; lifting joints follow the upward palm velocity
    while the hand hooks the handle.
    """
    if not contacts.grasp(functional_only=True):
        return 0.0, False
    v = state.robot.palm_v if v_palm is None else np.asarray(v_palm, dtype=np.float64)
    obj = state.obj
    jf = obj.functional_joint
    joint = obj.chain.joints[jf]
    poses = state.object_link_poses()
    link_pose = poses[jf]
    axis = link_pose.rotation_matrix() @ joint.axis
    if joint.kind == PRISMATIC:
        if obj.lift:
            if not _hook_condition(state, cfg):
                return 0.0, False
            rate = cfg.coupling_gain * max(0.0, float(v[2]))
        else:
            rate = cfg.coupling_gain * float(axis @ v)
        return float(np.clip(rate, -cfg.coupling_max_rate, cfg.coupling_max_rate)), False
    c = contacts.points[contacts.functional].mean(axis=0)
    p = link_pose.translation
    lever = np.cross(axis, c - p)
    n2 = float(lever @ lever)
    if np.sqrt(n2) < 1e-6:
        return 0.0, True
    rate = cfg.coupling_gain * float(lever @ v) / n2
    return float(np.clip(rate, -cfg.coupling_max_rate, cfg.coupling_max_rate)), False


def _pair_depths(hand_world: np.ndarray, obj_poses: dict[int, Pose], obj: ArticulatedObjectInstance,
                 contacts: ContactReport) -> np.ndarray:
    _, hand_r, _ = ROBOT.proxies
    prox = obj.proxies()
    out = np.empty(len(contacts.depths))
    for link in np.unique(contacts.obj_link):
        sel = contacts.obj_link == link
        c, r = prox[int(link)][0], prox[int(link)][1]
        oc = obj_poses[int(link)].apply(c[contacts.obj_index[sel]])
        d = np.linalg.norm(hand_world[contacts.hand_index[sel]] - oc, axis=1)
        out[sel] = hand_r[contacts.hand_index[sel]] + r[contacts.obj_index[sel]] - d
    return np.maximum(out, 0.0)


def _with_arm_xyz(state: SimState, xyz: np.ndarray) -> SimState:
    s = state.copy()
    s.robot.arm_q[:3] = np.clip(xyz, ROBOT.chain.lower()[:3], ROBOT.chain.upper()[:3])
    return s


def _with_hand_q(state: SimState, hand_q: np.ndarray) -> SimState:
    s = state.copy()
    s.robot.hand_q = np.clip(hand_q, ROBOT.hand_lower, ROBOT.hand_upper)
    return s


def resolve_penetration(state: SimState, contacts: ContactReport, cfg: SimConfig,
                        hand_q_prev: np.ndarray | None = None) -> tuple[SimState, float]:
    """Push the hand out of the object; returns ``(state, residual_penetration)``.

    The palm is translated along the mean normal of the violating
    contacts (bisection on the distance), then the hand joints are rolled
    back toward ``hand_q_prev`` if that was not enough. A correction is
    only accepted if no existing contact gets deeper.
    """
    tol = cfg.penetration_tol
    if contacts.max_penetration <= tol:
        return state, contacts.max_penetration
    obj_poses = state.object_link_poses()
    base_depths = contacts.depths

    def measure_hw(hw: np.ndarray) -> tuple[float, bool]:
        rep = _contacts_from_hand(hw, state.obj, obj_poses, cfg.contact_tol)
        worse = bool(np.any(_pair_depths(hw, obj_poses, state.obj, contacts) > base_depths + 1e-12))
        return rep.max_penetration, worse

    def measure(s: SimState) -> tuple[float, bool]:
        return measure_hw(ROBOT.proxy_world(s.robot_link_poses()))

    # the gantry's first three joints translate the whole hand along world
    # axes, so shifting the palm only offsets the proxy centres
    hw0 = ROBOT.proxy_world(state.robot_link_poses())
    xyz_lo, xyz_hi = ROBOT.chain.lower()[:3], ROBOT.chain.upper()[:3]

    def measure_shift(xyz0: np.ndarray, xyz: np.ndarray) -> tuple[float, bool]:
        return measure_hw(hw0 + (np.clip(xyz, xyz_lo, xyz_hi) - xyz0))

    viol = base_depths > tol
    n = contacts.normals[viol].mean(axis=0)
    nn = np.linalg.norm(n)
    best = state
    best_pen = contacts.max_penetration
    if nn > 1e-9:
        n = n / nn
        xyz0 = state.robot.arm_q[:3].copy()
        lo, hi = 0.0, 2.0 * contacts.max_penetration
        pen_hi, worse_hi = measure_shift(xyz0, xyz0 + hi * n)
        if pen_hi <= tol and not worse_hi:
            for _ in range(cfg.bisection_iters):
                mid = 0.5 * (lo + hi)
                pen, worse = measure_shift(xyz0, xyz0 + mid * n)
                if pen <= tol and not worse:
                    hi = mid
                else:
                    lo = mid
            best = _with_arm_xyz(state, xyz0 + hi * n)
            best_pen, _ = measure(best)
        elif not worse_hi and pen_hi < best_pen:
            best = _with_arm_xyz(state, xyz0 + hi * n)
            best_pen = pen_hi
    if best_pen > tol and hand_q_prev is not None:
        q_new = best.robot.hand_q.copy()
        q_prev = np.asarray(hand_q_prev, dtype=np.float64)

        def rolled(alpha: float) -> SimState:
            return _with_hand_q(best, q_prev + alpha * (q_new - q_prev))

        pen0, worse0 = measure(rolled(0.0))
        if not worse0 and pen0 < best_pen:
            lo, hi = 0.0, 1.0
            if pen0 <= tol:
                for _ in range(cfg.bisection_iters):
                    mid = 0.5 * (lo + hi)
                    pen, worse = measure(rolled(mid))
                    if pen <= tol and not worse:
                        lo = mid
                    else:
                        hi = mid
            best = rolled(lo)
            best_pen, _ = measure(best)
    if best_pen > tol:
        log.debug("residual penetration %.4f m after resolution", best_pen)
    return best, best_pen


def _clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = np.linalg.norm(v)
    return v * (limit / n) if n > limit else v


def step(state: SimState, action, cfg: SimConfig = SimConfig()) -> tuple[SimState, ContactReport, StepInfo]:
    """Advance one control step. ``action`` is a 22-vector in [-1, 1].

    Layout: palm linear velocity (3), palm angular velocity (3), then 16
    hand joint position targets.
    """
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape[0] != N_DOF:
        raise ValueError(f"action must have {N_DOF} entries, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("action contains non-finite values")
    a = np.clip(a, -1.0, 1.0)
    s = state.copy()
    r = s.robot
    dt = cfg.dt

    v = _clip_norm(a[0:3] * cfg.palm_max_lin, cfg.palm_max_lin)
    w = _clip_norm(a[3:6] * cfg.palm_max_ang, cfg.palm_max_ang)
    palm0 = palm_pose_from_arm_q(r.arm_q)
    if np.any(v) or np.any(w):
        palm1 = twist_integrate(palm0, v, w, dt)
        yaw, pitch, roll = euler_zyx_from_quat(palm1.rotation)
        arm_q = np.concatenate([palm1.translation, [yaw, pitch, roll]])
        if not np.any(w):
            arm_q[3:] = r.arm_q[3:]
        r.arm_q = np.clip(arm_q, ROBOT.chain.lower()[:N_ARM], ROBOT.chain.upper()[:N_ARM])
    r.palm_v, r.palm_w = v, w

    hand_q0 = r.hand_q.copy()
    r.hand_q_target = ROBOT.hand_target_from_action(a[N_ARM:])
    qd = np.clip(cfg.hand_kp * (r.hand_q_target - r.hand_q), -cfg.hand_max_speed, cfg.hand_max_speed)
    r.hand_q = np.clip(r.hand_q + qd * dt, ROBOT.hand_lower, ROBOT.hand_upper)

    info = StepInfo(step=state.step + 1)
    contacts = detect_contacts(s, cfg)
    info.grasp = contacts.grasp()
    info.functional_grasp = contacts.grasp(functional_only=True)
    if info.functional_grasp:
        rate, degenerate = couple_functional_joint(s, contacts, cfg, v)
        info.coupling_rate, info.coupling_degenerate = rate, degenerate
        if rate != 0.0:
            jf = s.obj.functional_joint
            s.obj_q = s.obj_q.copy()
            s.obj_q[jf] = s.obj.chain.joints[jf].clamp(s.obj_q[jf] + rate * dt)
            info.coupled = True
            contacts = detect_contacts(s, cfg)

    info.penetration_before = contacts.max_penetration
    if contacts.max_penetration > cfg.penetration_tol:
        s, info.residual_penetration = resolve_penetration(s, contacts, cfg, hand_q0)
        contacts = detect_contacts(s, cfg)
    else:
        info.residual_penetration = contacts.max_penetration
    s.robot.hand_qd = (s.robot.hand_q - hand_q0) / dt
    s.step = state.step + 1
    s.time = state.time + dt
    return s, contacts, info


def realized_palm_twist(before: SimState, after: SimState, dt: float) -> tuple[np.ndarray, np.ndarray]:
    p0, p1 = before.palm_pose(), after.palm_pose()
    v = (p1.translation - p0.translation) / dt
    w = quat_log(quat_mul(p1.rotation, quat_conj(p0.rotation))) / dt
    return v, w


def reset(task, instance: ArticulatedObjectInstance, seed: int) -> SimState:
    """Initial state: robot at ``task.home_arm_q``, object randomised about its base pose.

    ``task`` needs ``home_arm_q``, ``yaw_range`` and ``xy_range`` attributes.
    """
    rng = np.random.default_rng(seed)
    yaw = rng.uniform(-task.yaw_range, task.yaw_range) if task.yaw_range > 0 else 0.0
    dxy = rng.uniform(-task.xy_range, task.xy_range, size=2) if task.xy_range > 0 else np.zeros(2)
    base = instance.chain.root
    if yaw == 0.0 and not np.any(dxy):
        root = base
    else:
        rot = quat_mul(quat_from_axis_angle((0, 0, 1), yaw), base.rotation)
        root = Pose(rot, base.translation + np.array([dxy[0], dxy[1], 0.0]))
    home_hand = ROBOT.hand_home.copy()
    robot = RobotState(np.array(task.home_arm_q, dtype=np.float64), home_hand, home_hand.copy())
    return SimState(robot, instance, root, np.array(instance.q_init, dtype=np.float64), 0, 0.0)


def sample_reset_offsets(task, seed: int) -> tuple[float, np.ndarray]:
    """The yaw and planar offset :func:`reset` draws for ``seed``."""
    rng = np.random.default_rng(seed)
    yaw = rng.uniform(-task.yaw_range, task.yaw_range) if task.yaw_range > 0 else 0.0
    dxy = rng.uniform(-task.xy_range, task.xy_range, size=2) if task.xy_range > 0 else np.zeros(2)
    return yaw, dxy
