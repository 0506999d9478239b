"""Virtual gantry arm plus a simplified four-finger hand.

Link layout of the robot chain:

* 0-5: gantry joints ``x, y, z`` (prismatic) and ``yaw, pitch, roll``
  (revolute, ``Rz @ Ry @ Rx``). Link 5 is the palm.
* 6-21: four fingers of four links each (abduction, then three flexion
  joints). Positive flexion curls toward the palm's -z gripping side.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .geometry import (
    PRISMATIC,
    REVOLUTE,
    JointSpec,
    KinematicChain,
    Pose,
    forward_kinematics,
    quat_from_axis_angle,
    quat_from_euler_zyx,
)
from .shapes import BOX, LABEL_ARM, LABEL_HAND, ShapePrimitive, capsule_between, sphere_proxies

N_ARM, N_HAND = 6, 16
N_DOF = N_ARM + N_HAND
PALM_LINK = 5
N_FINGERS = 4
FINGER_LINKS = tuple(tuple(6 + 4 * f + k for k in range(4)) for f in range(N_FINGERS))
CONTACT_LINKS = (PALM_LINK,) + tuple(i for f in FINGER_LINKS for i in f)

PALM_HALF = (0.045, 0.045, 0.01)
FINGER_RADIUS = 0.01
FINGER_LENGTHS = (0.012, 0.045, 0.035, 0.03)
HAND_LIMITS = ((-0.3, 0.3), (-0.3, 1.5), (-0.2, 1.6), (-0.2, 1.6))

WORKSPACE_LO = np.array([-0.45, -0.45, 0.0])
WORKSPACE_HI = np.array([0.45, 0.45, 0.65])
ROT_LIMITS = ((-np.pi / 2, np.pi / 2), (-1.2, 1.2), (-np.pi / 2, np.pi / 2))


def _finger_bases():
    # (position on palm, yaw of the finger's local frame)
    return [
        ((0.045, 0.03, 0.0), 0.0),
        ((0.045, 0.0, 0.0), 0.0),
        ((0.045, -0.03, 0.0), 0.0),
        ((-0.005, 0.05, -0.005), np.pi / 2),
    ]


def build_robot_chain() -> KinematicChain:
    joints, parents, names = [], [], []
    for k, axis in enumerate(np.eye(3)):
        lo, hi = WORKSPACE_LO[k], WORKSPACE_HI[k]
        joints.append(JointSpec(PRISMATIC, axis, Pose(), (lo, hi)))
        parents.append(k - 1)
        names.append("xyz"[k])
    for k, (axis, name) in enumerate(zip([(0, 0, 1), (0, 1, 0), (1, 0, 0)], ["yaw", "pitch", "roll"])):
        joints.append(JointSpec(REVOLUTE, axis, Pose(), ROT_LIMITS[k]))
        parents.append(2 + k)
        names.append(name)
    for f, (base, yaw) in enumerate(_finger_bases()):
        origin = Pose(quat_from_axis_angle((0, 0, 1), yaw), base)
        joints.append(JointSpec(REVOLUTE, (0, 0, 1), origin, HAND_LIMITS[0]))
        parents.append(PALM_LINK)
        names.append(f"f{f}_abd")
        for k in range(1, 4):
            joints.append(JointSpec(REVOLUTE, (0, 1, 0), Pose.from_translation((FINGER_LENGTHS[k - 1], 0, 0)),
                                    HAND_LIMITS[k]))
            parents.append(FINGER_LINKS[f][k - 1])
            names.append(f"f{f}_j{k}")
    return KinematicChain(joints, parents, Pose(), names)


def build_robot_shapes() -> list[ShapePrimitive]:
    shapes = [ShapePrimitive(BOX, PALM_HALF, Pose(), PALM_LINK, LABEL_HAND)]
    for f in range(N_FINGERS):
        for k in range(4):
            shapes.append(capsule_between((0, 0, 0), (FINGER_LENGTHS[k], 0, 0), FINGER_RADIUS,
                                          FINGER_LINKS[f][k], LABEL_HAND))
    shapes.append(capsule_between((-0.05, 0, 0.015), (-0.25, 0, 0.15), 0.03, PALM_LINK, LABEL_ARM))
    shapes.append(capsule_between((-0.25, 0, 0.15), (-0.32, 0, 0.42), 0.035, PALM_LINK, LABEL_ARM))
    return shapes


def palm_pose_from_arm_q(arm_q: np.ndarray) -> Pose:
    return Pose(quat_from_euler_zyx(arm_q[3], arm_q[4], arm_q[5]), arm_q[:3])


@dataclass(frozen=True)
class RobotModel:
    """Static description of the robot: chain, shapes, proxies, home pose."""

    proxy_spacing: float = 0.5 * 2 * FINGER_RADIUS

    @cached_property
    def chain(self) -> KinematicChain:
        return build_robot_chain()

    @cached_property
    def shapes(self) -> list[ShapePrimitive]:
        return build_robot_shapes()

    @cached_property
    def hand_lower(self) -> np.ndarray:
        return self.chain.lower()[N_ARM:]

    @cached_property
    def hand_upper(self) -> np.ndarray:
        return self.chain.upper()[N_ARM:]

    @cached_property
    def hand_home(self) -> np.ndarray:
        return np.clip(np.zeros(N_HAND), self.hand_lower, self.hand_upper)

    @cached_property
    def proxies(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(centers, radii, link)`` for every contact-link proxy sphere (link frame)."""
        centers, radii, links = [], [], []
        for s in self.shapes:
            if s.label != LABEL_HAND:
                continue
            c, r = sphere_proxies(s, self.proxy_spacing)
            centers.append(c)
            radii.append(r)
            links.append(np.full(len(r), s.link))
        return np.concatenate(centers), np.concatenate(radii), np.concatenate(links)

    @cached_property
    def proxy_slices(self) -> dict[int, np.ndarray]:
        _, _, links = self.proxies
        return {link: np.flatnonzero(links == link) for link in CONTACT_LINKS}

    def link_poses(self, q: np.ndarray) -> list[Pose]:
        return forward_kinematics(self.chain, q)

    def proxy_world(self, poses: list[Pose]) -> np.ndarray:
        centers, _, links = self.proxies
        out = np.empty_like(centers)
        for link, idx in self.proxy_slices.items():
            out[idx] = poses[link].apply(centers[idx])
        return out

    def hand_target_from_action(self, a: np.ndarray) -> np.ndarray:
        """Map normalised hand actions in [-1, 1] to absolute joint targets.

        Piecewise linear around the home pose so a zero action holds home.
        """
        home, lo, hi = self.hand_home, self.hand_lower, self.hand_upper
        return np.where(a >= 0, home + a * (hi - home), home + a * (home - lo))


ROBOT = RobotModel()
