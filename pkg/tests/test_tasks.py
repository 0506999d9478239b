import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dexkit.assets import default_split
from dexkit.robot import N_DOF
from dexkit.tasks import (STAGE_CONTACT, STAGE_MANIPULATE, STAGE_REACH, TASKS, RewardTerms, RewardWeights,
                          StageTracker, TaskSpec, check_success, compute_stage, get_task, reward_contact,
                          reward_penalty, reward_progress, reward_reach, step_reward, task_progress, total_reward)
from dexkit.world import SimConfig, detect_contacts, reset, step
from helpers import approach_action, fake_contacts

W = RewardWeights()
NO_CONTACT = fake_contacts(np.zeros((0, 3)), palm=False, fingers=0)


@pytest.fixture(scope="module")
def objects():
    return {name: default_split(spec.category).instances("seen")[0] for name, spec in TASKS.items()}


def at_palm(state, point):
    s = state.copy()
    s.robot.arm_q[:3] = point
    return s


def with_functional(state, value):
    s = state.copy()
    s.obj_q[s.obj.functional_joint] = value
    return s


# ---------------------------------------------------------------- stages

def test_stage_rules(objects):
    spec = TASKS["laptop"]
    s = reset(spec, objects["laptop"], 0)
    g = s.grasp_point()
    far = at_palm(s, g + [0.5, 0, 0])
    near = at_palm(s, g + [0.05, 0, 0])
    assert compute_stage(far, NO_CONTACT, spec) == STAGE_REACH
    assert compute_stage(near, NO_CONTACT, spec) == STAGE_CONTACT
    # the grasp predicate alone does not skip the reach stage
    assert compute_stage(far, fake_contacts(), spec) == STAGE_REACH
    assert compute_stage(near, fake_contacts(), spec, STAGE_CONTACT) == STAGE_MANIPULATE


def test_stage_latches(objects):
    spec = TASKS["laptop"]
    s = reset(spec, objects["laptop"], 0)
    g = s.grasp_point()
    tr = StageTracker()
    seq = [(g + [0.5, 0, 0], NO_CONTACT), (g, NO_CONTACT), (g, fake_contacts()),
           (g + [0.5, 0, 0], NO_CONTACT), (g, NO_CONTACT)]
    stages = []
    for i, (p, c) in enumerate(seq):
        st_ = at_palm(s, p)
        st_.step = i
        stages.append(tr.update(st_, c, spec))
    assert stages == [1, 2, 3, 3, 3]
    assert tr.transitions == [(2, 1), (3, 2)]
    tr.reset()
    assert tr.stage == STAGE_REACH and tr.transitions == []


def test_tracker_records_skipped_stages(objects):
    spec = TASKS["laptop"]
    s = at_palm(reset(spec, objects["laptop"], 0), reset(spec, objects["laptop"], 0).grasp_point())
    tr = StageTracker()
    assert tr.update(s, fake_contacts(), spec) == STAGE_MANIPULATE
    assert tr.transitions == [(2, 0), (3, 0)]


def test_stage_monotone_on_random_episodes(objects):
    rng = np.random.default_rng(0)
    spec = TASKS["laptop"]
    seen = set()
    for ep in range(12):
        s = reset(spec, objects["laptop"], ep)
        tr = StageTracker()
        stages = [tr.update(s, detect_contacts(s, SimConfig()), spec)]
        for _ in range(25):
            s, contacts, _ = step(s, approach_action(s, rng, noise=1.0 if ep % 2 else 0.3))
            stages.append(tr.update(s, contacts, spec))
        assert stages[0] == STAGE_REACH
        assert all(b >= a for a, b in zip(stages, stages[1:]))
        seen.update(stages)
    assert STAGE_CONTACT in seen


# ---------------------------------------------------------------- reward terms

def test_reach_examples():
    assert reward_reach(0.3, STAGE_REACH, W) == pytest.approx(-0.3)
    assert reward_reach(0.01, STAGE_REACH, W) == -0.05
    assert reward_reach(0.3, STAGE_CONTACT, W) == 0.0
    assert reward_reach(0.0, STAGE_MANIPULATE, W) == 0.0


@given(st.floats(0, 5), st.sampled_from([1, 2, 3]))
def test_reach_bounds(d, stage):
    r = reward_reach(d, stage, W)
    if stage == STAGE_REACH:
        assert r <= W.reach_cap < 0
    else:
        assert r == 0.0


def test_contact_examples():
    assert reward_contact(fake_contacts(fingers=2), STAGE_CONTACT) == 1.0
    assert reward_contact(fake_contacts(fingers=1), STAGE_CONTACT) == 0.0
    assert reward_contact(fake_contacts(palm=False, fingers=4), STAGE_CONTACT) == 0.0
    assert reward_contact(fake_contacts(fingers=4), STAGE_REACH) == 0.0
    assert reward_contact(fake_contacts(fingers=3), STAGE_MANIPULATE) == 1.0


def test_progress_examples(objects):
    spec = TASKS["faucet"]
    s = reset(spec, objects["faucet"], 0)
    v = s.functional_value()
    assert reward_progress(with_functional(s, v + 0.1), s, STAGE_MANIPULATE, spec) == pytest.approx(0.1, abs=1e-12)
    assert reward_progress(with_functional(s, v - 0.1), s, STAGE_MANIPULATE, spec) == pytest.approx(-0.1, abs=1e-12)
    assert reward_progress(with_functional(s, v + 0.1), s, STAGE_CONTACT, spec) == 0.0


def test_bucket_progress_is_scaled_height(objects):
    spec = TASKS["bucket"]
    s = reset(spec, objects["bucket"], 0)
    v = s.functional_value()
    r = reward_progress(with_functional(s, v + 0.02), s, STAGE_MANIPULATE, spec)
    assert r == pytest.approx(0.02 * spec.height_scale, abs=1e-12)


def test_penalty_examples():
    assert reward_penalty(np.zeros(N_DOF), np.zeros(16), W) == 0.0
    assert N_DOF == 22
    assert reward_penalty(np.ones(N_DOF), np.zeros(16), W) == pytest.approx(-0.22)
    assert reward_penalty(np.zeros(N_DOF), np.ones(16), W) == pytest.approx(-0.16)


@given(st.lists(st.floats(-10, 10), min_size=N_DOF, max_size=N_DOF),
       st.lists(st.floats(-10, 10), min_size=16, max_size=16))
def test_penalty_never_positive(a, qd):
    assert reward_penalty(a, qd, W) <= 0.0


def test_total_examples():
    unit = RewardWeights(w_reach=1, w_contact=1, w_progress=1)
    assert total_reward(RewardTerms(), W) == 0.0
    assert total_reward(RewardTerms(-0.3, 1, 0.1, -0.01), unit) == pytest.approx(0.79)


@given(st.floats(0.01, 10), st.tuples(st.floats(-1, 0), st.sampled_from([0.0, 1.0]), st.floats(-1, 1),
                                      st.floats(-1, 0)))
def test_total_is_linear_in_weights(c, terms):
    t = RewardTerms(*terms)
    assert total_reward(t, W.scaled(c)) == pytest.approx(c * total_reward(t, W), rel=1e-12, abs=1e-12)


def test_reward_weights_validation():
    with pytest.raises(ValueError):
        RewardWeights(reach_cap=0.05)
    with pytest.raises(ValueError):
        RewardWeights(w_contact=-1)
    with pytest.raises(ValueError):
        RewardWeights(w_reach=math.inf)


def test_reach_only_reward_ignores_other_terms(objects):
    spec = get_task("laptop-reach")
    s = reset(spec, objects["laptop"], 0)
    near = at_palm(s, s.grasp_point())
    r, terms = step_reward(near, s, fake_contacts(), np.ones(N_DOF), STAGE_MANIPULATE, spec, W)
    assert terms.as_tuple() == (0.0, 0.0, 0.0, 0.0) and r == 0.0
    r, terms = step_reward(s, s, NO_CONTACT, np.ones(N_DOF), STAGE_REACH, spec, W)
    assert r == terms.reach < 0


# ---------------------------------------------------------------- telescoping

@given(st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=40), st.integers(1, 7),
       st.sampled_from(sorted(TASKS)))
def test_progress_telescopes(objects, deltas, stride, task):
    spec = TASKS[task]
    s0 = reset(spec, objects[task], 0)
    values = s0.functional_value() + np.cumsum([0.0] + deltas)
    states = [with_functional(s0, v) for v in values]
    total = task_progress(states[-1], spec) - task_progress(states[0], spec)
    fine = sum(reward_progress(b, a, STAGE_MANIPULATE, spec) for a, b in zip(states, states[1:]))
    coarse_states = states[::stride] + ([states[-1]] if (len(states) - 1) % stride else [])
    coarse = sum(reward_progress(b, a, STAGE_MANIPULATE, spec) for a, b in zip(coarse_states, coarse_states[1:]))
    assert abs(fine - total) < 1e-9
    assert abs(coarse - total) < 1e-9


# ---------------------------------------------------------------- success

def test_success_examples(objects):
    faucet, bucket = TASKS["faucet"], TASKS["bucket"]
    s = reset(faucet, objects["faucet"], 0)
    assert check_success(with_functional(s, s.obj.q_init[s.obj.functional_joint] + 1.4), faucet)
    assert not check_success(with_functional(s, s.obj.q_init[s.obj.functional_joint] + 1.2), faucet)
    b = reset(bucket, objects["bucket"], 0)
    assert not check_success(b, bucket)


def test_reach_success_uses_distance(objects):
    spec = get_task("laptop-reach")
    s = reset(spec, objects["laptop"], 0)
    g = s.grasp_point()
    assert check_success(at_palm(s, g + [0.09, 0, 0]), spec)
    assert not check_success(at_palm(s, g + [0.11, 0, 0]), spec)


@given(st.lists(st.floats(0, 0.2), min_size=1, max_size=30), st.sampled_from(sorted(TASKS)))
def test_success_is_monotone(objects, steps, task):
    spec = TASKS[task]
    s0 = reset(spec, objects[task], 0)
    flags = [check_success(with_functional(s0, v), spec) for v in s0.functional_value() + np.cumsum(steps)]
    first = flags.index(True) if True in flags else len(flags)
    assert all(flags[first:])


def test_stock_thresholds():
    assert TASKS["faucet"].success_threshold == 1.3
    assert TASKS["laptop"].success_threshold == TASKS["toilet"].success_threshold == 1.0
    assert TASKS["bucket"].success_threshold == 0.20
    assert all(t.d_reach == 0.10 for t in TASKS.values())
    assert (W.w_reach, W.w_contact, W.w_progress, W.w_penalty_action, W.w_penalty_jerk, W.reach_cap) == \
        (1.0, 0.5, 5.0, 0.01, 0.01, -0.05)


def test_task_lookup_and_serialisation():
    assert get_task("Laptop-reach").reach_only
    with pytest.raises(ValueError):
        get_task("door")
    with pytest.raises(ValueError):
        get_task("laptop-lift")
    for spec in TASKS.values():
        assert TaskSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        TaskSpec("x", "laptop", "angle", 0.0, (0,) * 6, (0, 0, 1), (0, 0, 0))
