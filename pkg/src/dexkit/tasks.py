"""Task definitions: staged rewards, stage tracking and success criteria."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .world import ContactReport, SimState

STAGE_REACH, STAGE_CONTACT, STAGE_MANIPULATE = 1, 2, 3


@dataclass(frozen=True)
class RewardWeights:
    w_reach: float = 1.0
    w_contact: float = 0.5
    w_progress: float = 5.0
    w_penalty_action: float = 0.01
    w_penalty_jerk: float = 0.01
    reach_cap: float = -0.05
    # multiplier on the already-weighted penalty term when summing
    w_penalty: float = 1.0

    def __post_init__(self):
        vals = asdict(self)
        if not all(np.isfinite(v) for v in vals.values()):
            raise ValueError("reward weights must be finite")
        if self.reach_cap >= 0:
            raise ValueError("reach_cap must be negative")
        for k, v in vals.items():
            if k != "reach_cap" and v < 0:
                raise ValueError(f"{k} must be >= 0")

    def scaled(self, c: float) -> "RewardWeights":
        return replace(self, w_reach=c * self.w_reach, w_contact=c * self.w_contact,
                       w_progress=c * self.w_progress, w_penalty=c * self.w_penalty)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    category: str
    progress_kind: str
    success_threshold: float
    home_arm_q: tuple[float, ...]
    camera_eye: tuple[float, float, float]
    camera_target: tuple[float, float, float]
    d_reach: float = 0.10
    height_scale: float = 1.0
    yaw_range: float = np.deg2rad(10.0)
    xy_range: float = 0.02
    reach_only: bool = False

    def __post_init__(self):
        if self.success_threshold <= 0 or self.d_reach <= 0:
            raise ValueError("thresholds must be positive")
        if self.progress_kind not in ("angle", "height"):
            raise ValueError(f"unknown progress kind {self.progress_kind!r}")
        if len(self.home_arm_q) != 6:
            raise ValueError("home_arm_q needs 6 values")

    def reach_variant(self) -> "TaskSpec":
        return replace(self, name=f"{self.name}-reach", reach_only=True)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        for k in ("home_arm_q", "camera_eye", "camera_target"):
            d[k] = tuple(float(x) for x in d[k])
        return cls(**d)


def _home(x, y, z, pitch=0.0):
    return (x, y, z, 0.0, pitch, 0.0)


TASKS: dict[str, TaskSpec] = {
    "laptop": TaskSpec("laptop", "laptop", "angle", 1.0, _home(-0.2, 0.0, 0.3),
                       (-0.1, -0.65, 0.6), (0.05, 0.0, 0.05)),
    "faucet": TaskSpec("faucet", "faucet", "angle", 1.3, _home(-0.2, 0.0, 0.35),
                       (-0.1, -0.65, 0.6), (0.05, 0.0, 0.15)),
    "bucket": TaskSpec("bucket", "bucket", "height", 0.20, _home(-0.15, 0.0, 0.35),
                       (-0.1, -0.65, 0.6), (0.1, 0.0, 0.12), height_scale=5.0),
    "toilet": TaskSpec("toilet", "toilet", "angle", 1.0, _home(-0.2, 0.0, 0.5),
                       (-0.1, -0.65, 0.8), (0.1, 0.0, 0.3)),
}


def get_task(name: str) -> TaskSpec:
    base, _, variant = name.lower().partition("-")
    if base not in TASKS or variant not in ("", "reach"):
        raise ValueError(f"unknown task {name!r}; expected one of {sorted(TASKS)} (optionally '-reach')")
    return TASKS[base].reach_variant() if variant else TASKS[base]


# ---------------------------------------------------------------- progress

def task_progress(state: SimState, spec: TaskSpec) -> float:
    """Signed progress of the functional joint from its initial value."""
    j = state.obj.functional_joint
    delta = float(state.obj_q[j] - state.obj.q_init[j])
    return delta * spec.height_scale if spec.progress_kind == "height" else delta


def raw_progress(state: SimState) -> float:
    j = state.obj.functional_joint
    return float(state.obj_q[j] - state.obj.q_init[j])


def reach_distance(state: SimState) -> float:
    return float(np.linalg.norm(state.palm_pose().translation - state.grasp_point()))


# ---------------------------------------------------------------- stages

def compute_stage(state: SimState, contacts: ContactReport, spec: TaskSpec, prev_stage: int = STAGE_REACH) -> int:
    stage = prev_stage
    if stage == STAGE_REACH and reach_distance(state) <= spec.d_reach:
        stage = STAGE_CONTACT
    if stage == STAGE_CONTACT and contacts.grasp():
        stage = STAGE_MANIPULATE
    return stage


@dataclass
class StageTracker:
    stage: int = STAGE_REACH
    transitions: list[tuple[int, int]] = field(default_factory=list)

    def update(self, state: SimState, contacts: ContactReport, spec: TaskSpec) -> int:
        new = compute_stage(state, contacts, spec, self.stage)
        for s in range(self.stage + 1, new + 1):
            self.transitions.append((s, state.step))
        self.stage = new
        return new

    def reset(self) -> None:
        self.stage = STAGE_REACH
        self.transitions = []


# ---------------------------------------------------------------- rewards

@dataclass(frozen=True)
class RewardTerms:
    reach: float = 0.0
    contact: float = 0.0
    progress: float = 0.0
    penalty: float = 0.0

    def as_tuple(self):
        return self.reach, self.contact, self.progress, self.penalty


def reward_reach(distance: float, stage: int, weights: RewardWeights) -> float:
    if stage != STAGE_REACH:
        return 0.0
    return min(-float(distance), weights.reach_cap)


def reward_contact(contacts: ContactReport, stage: int) -> float:
    return 1.0 if stage >= STAGE_CONTACT and contacts.grasp() else 0.0


def reward_progress(state: SimState, prev: SimState, stage: int, spec: TaskSpec) -> float:
    if stage != STAGE_MANIPULATE:
        return 0.0
    return task_progress(state, spec) - task_progress(prev, spec)


def reward_penalty(action, hand_qd, weights: RewardWeights) -> float:
    a = np.asarray(action, dtype=np.float64)
    qd = np.asarray(hand_qd, dtype=np.float64)
    return -weights.w_penalty_action * float(a @ a) - weights.w_penalty_jerk * float(qd @ qd)


def total_reward(terms: RewardTerms, weights: RewardWeights) -> float:
    return (weights.w_reach * terms.reach + weights.w_contact * terms.contact
            + weights.w_progress * terms.progress + weights.w_penalty * terms.penalty)


def step_reward(state: SimState, prev: SimState, contacts: ContactReport, action, stage: int,
                spec: TaskSpec, weights: RewardWeights) -> tuple[float, RewardTerms]:
    """Reward for the transition ``prev -> state`` given the stage after it."""
    if spec.reach_only:
        terms = RewardTerms(reach=reward_reach(reach_distance(state), min(stage, STAGE_CONTACT), weights))
    else:
        terms = RewardTerms(
            reach=reward_reach(reach_distance(state), stage, weights),
            contact=reward_contact(contacts, stage),
            progress=reward_progress(state, prev, stage, spec),
            penalty=reward_penalty(action, state.robot.hand_qd, weights),
        )
    return total_reward(terms, weights), terms


def check_success(state: SimState, spec: TaskSpec) -> bool:
    if spec.reach_only:
        return reach_distance(state) <= spec.d_reach
    return raw_progress(state) >= spec.success_threshold
