"""Gym-style environment over the quasi-static simulator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensing import (
    OBSERVED,
    CameraModel,
    LabeledPointCloud,
    Observation,
    SensingConfig,
    assemble_observation,
    imagine_robot_points,
    proprio_vector,
)
from .tasks import RewardWeights, StageTracker, TaskSpec, check_success, step_reward
from .world import ArticulatedObjectInstance, SimConfig, SimState, detect_contacts, reset, step
from .robot import N_DOF

ACTION_DIM = N_DOF


@dataclass
class EpisodeStats:
    ret: float = 0.0
    length: int = 0
    success: bool = False
    first_success_step: int | None = None
    object_id: str = ""


class DexEnv:
    """One task over a pool of object instances.

    ``reset`` picks the next object round-robin (or at random with
    ``shuffle=True``) and draws the placement from the env's seed stream.
    Episodes run for ``horizon`` steps; success is latched at the first
    step the task criterion holds.
    """

    def __init__(self, spec: TaskSpec, objects: list[ArticulatedObjectInstance], *,
                 sim_cfg: SimConfig = SimConfig(), sensing: SensingConfig = SensingConfig(),
                 weights: RewardWeights = RewardWeights(), horizon: int = 200, seed: int = 0,
                 camera: CameraModel | None = None, shuffle: bool = False, render: bool = True):
        if not objects:
            raise ValueError("environment needs at least one object")
        if horizon < 1:
            raise ValueError("horizon must be positive")
        self.spec = spec
        self.objects = list(objects)
        self.sim_cfg = sim_cfg
        self.sensing = sensing
        self.weights = weights
        self.horizon = horizon
        self.camera = camera or sensing.camera(spec.camera_eye, spec.camera_target)
        self.shuffle = shuffle
        self.render = render
        self.rng = np.random.default_rng(seed)
        self._next_object = 0
        self.state: SimState | None = None
        self.tracker = StageTracker()
        self.stats = EpisodeStats()

    def _observe(self) -> Observation:
        obs_seed = int(self.rng.integers(2**31))
        if not self.render:
            # proprio-only runs skip ray casting; observed slots hold zeros
            n = self.sensing.n_observed
            im = imagine_robot_points(self.state.robot.q, self.sensing.n_imagined)
            obs = LabeledPointCloud(np.zeros((n, 3)), np.full(n, 1), np.full(n, OBSERVED))
            cloud = LabeledPointCloud(np.concatenate([obs.points, im.points]), np.concatenate([obs.labels, im.labels]),
                                      np.concatenate([obs.origin, im.origin]))
            return Observation(proprio_vector(self.state), cloud, False)
        return assemble_observation(self.state, self.camera, self.sensing, seed=obs_seed)

    def reset(self, object_index: int | None = None) -> Observation:
        if object_index is None:
            if self.shuffle:
                object_index = int(self.rng.integers(len(self.objects)))
            else:
                object_index = self._next_object
                self._next_object = (self._next_object + 1) % len(self.objects)
        obj = self.objects[object_index]
        self.state = reset(self.spec, obj, int(self.rng.integers(2**31)))
        self.tracker.reset()
        self.tracker.update(self.state, detect_contacts(self.state, self.sim_cfg), self.spec)
        self.stats = EpisodeStats(object_id=obj.object_id)
        return self._observe()

    def step(self, action) -> tuple[Observation, float, bool, dict]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        prev = self.state
        self.state, contacts, info = step(prev, action, self.sim_cfg)
        stage = self.tracker.update(self.state, contacts, self.spec)
        reward, terms = step_reward(self.state, prev, contacts, np.clip(action, -1, 1), stage,
                                    self.spec, self.weights)
        success = check_success(self.state, self.spec)
        st = self.stats
        st.ret += reward
        st.length += 1
        if success and not st.success:
            st.success, st.first_success_step = True, st.length
        done = st.length >= self.horizon
        obs = self._observe()
        out = info.to_dict()
        out.update(stage=stage, success=success, ever_success=st.success, terms=terms.as_tuple(),
                   sentinel=obs.sentinel, object_id=st.object_id)
        if done:
            out["episode"] = EpisodeStats(st.ret, st.length, st.success, st.first_success_step, st.object_id)
        return obs, reward, done, out
