import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dexkit.assets import default_split
from dexkit.geometry import Pose, forward_kinematics, look_at, quat_from_axis_angle
from dexkit.robot import ROBOT
from dexkit.sensing import (IMAGINED, OBSERVED, PROPRIO_DIM, CameraModel, LabeledPointCloud, PointCloudFormatError,
                            SensingConfig, assemble_observation, crop_and_downsample, depth_to_points,
                            imagine_robot_points, read_dxpc, render_depth, scene_shapes, write_dxpc)
from dexkit.shapes import BOX, CAPSULE, CYLINDER, SPHERE, ShapePrimitive, signed_distance_local
from dexkit.tasks import get_task
from dexkit.world import reset
from oracles import ray_shape_oracle

LAPTOP = get_task("laptop")


def camera(res=33, eye=(0.0, 0.0, 0.0), target=(1.0, 0.0, 0.0)):
    return CameraModel(look_at(eye, target), np.deg2rad(60), res, res)


def test_sphere_on_axis_depth():
    cam = camera()
    d, r = 1.3, 0.2
    depth, ids = render_depth([ShapePrimitive(SPHERE, (r,), Pose.from_translation((d, 0, 0)))], cam)
    assert abs(depth[16, 16] - (d - r)) < 1e-6 and ids[16, 16] == 0
    assert np.isinf(depth[0, 0])


def test_occluder_wins():
    cam = camera()
    box = ShapePrimitive(BOX, (0.05, 0.3, 0.3), Pose.from_translation((0.8, 0, 0)))
    sphere = ShapePrimitive(SPHERE, (0.1,), Pose.from_translation((1.5, 0, 0)))
    depth, ids = render_depth([sphere, box], cam)
    assert ids[16, 16] == 1 and abs(depth[16, 16] - 0.75) < 1e-9


def random_shape(rng):
    kind = rng.choice([SPHERE, BOX, CAPSULE, CYLINDER])
    dims = {SPHERE: (rng.uniform(0.05, 0.2),), BOX: tuple(rng.uniform(0.03, 0.2, 3)),
            CAPSULE: (rng.uniform(0.03, 0.1), rng.uniform(0.03, 0.2)),
            CYLINDER: (rng.uniform(0.03, 0.15), rng.uniform(0.03, 0.2))}[kind]
    pose = Pose(quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi)),
                (rng.uniform(1.0, 2.0), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)))
    return ShapePrimitive(kind, dims, pose)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_render_matches_per_shape_oracle(seed):
    rng = np.random.default_rng(seed)
    shapes = [random_shape(rng) for _ in range(5)]
    cam = camera(25)
    depth, ids = render_depth(shapes, cam)
    rays = cam.pixel_rays().reshape(-1, 3)
    world_dirs = rays @ cam.pose.rotation_matrix().T
    per_shape = np.stack([ray_shape_oracle(cam.pose.translation, world_dirs, s) for s in shapes])
    ref = per_shape.min(axis=0)
    ref[(ref < cam.near) | (ref > cam.far)] = np.inf
    flat = depth.reshape(-1)
    assert np.array_equal(np.isfinite(flat), np.isfinite(ref))
    fin = np.isfinite(flat)
    assert np.abs(flat[fin] - ref[fin]).max(initial=0) < 1e-9
    assert np.array_equal(ids.reshape(-1)[fin], per_shape.argmin(axis=0)[fin])


def test_depth_to_points_roundtrip():
    cam = camera(41)
    c, r = np.array([1.2, 0.1, -0.05]), 0.25
    depth, ids = render_depth([ShapePrimitive(SPHERE, (r,), Pose.from_translation(c))], cam)
    pts, sid = depth_to_points(depth, ids, cam)
    assert len(pts) == np.isfinite(depth).sum() > 0 and np.all(sid == 0)
    assert np.abs(np.linalg.norm(pts - c, axis=1) - r).max() < 1e-6
    # centre pixel lies on the optical axis at its depth
    img = np.full((41, 41), np.inf)
    img[20, 20] = 0.9
    p, _ = depth_to_points(img, np.zeros((41, 41), dtype=np.int64), cam)
    np.testing.assert_allclose(p[0], cam.pose.translation + 0.9 * cam.optical_axis, atol=1e-12)
    empty, eid = depth_to_points(np.full((4, 4), np.inf), np.zeros((4, 4), dtype=np.int64), cam)
    assert empty.shape == (0, 3) and len(eid) == 0


def test_crop_contract():
    rng = np.random.default_rng(0)
    lo, hi = np.zeros(3), np.ones(3)
    pts = np.concatenate([rng.uniform(0, 1, (2000, 3)), rng.uniform(2, 3, (300, 3))])
    out, idx, sentinel = crop_and_downsample(pts, lo, hi, 512, seed=1)
    assert out.shape == (512, 3) and not sentinel
    assert np.all((out >= lo) & (out <= hi)) and len(set(idx.tolist())) == 512
    again, _, _ = crop_and_downsample(pts, lo, hi, 512, seed=1)
    np.testing.assert_array_equal(out, again)
    few, idx, _ = crop_and_downsample(pts[:10], lo, hi, 512, seed=1)
    assert few.shape == (512, 3) and set(idx.tolist()) == set(range(10))
    sent, idx, sentinel = crop_and_downsample(rng.uniform(2, 3, (50, 3)), lo, hi, 512, seed=1)
    assert sentinel and sent.shape == (512, 3) and np.all(sent == 0.5) and np.all(idx == -1)
    with pytest.raises(ValueError):
        crop_and_downsample(pts, lo, hi, 0, 0)


def test_crop_selection_uniform():
    m, n, trials = 40, 10, 10_000
    pts = np.random.default_rng(0).uniform(0, 1, (m, 3))
    counts = np.zeros(m)
    for t in range(trials):
        _, idx, _ = crop_and_downsample(pts, np.zeros(3), np.ones(3), n, seed=t)
        counts[idx] += 1
    p = n / m
    sigma = np.sqrt(trials * p * (1 - p))
    assert np.abs(counts - trials * p).max() < 4 * sigma


def robot_q(rng):
    q = np.concatenate([rng.uniform([-0.3, -0.3, 0.1, -1, -1, -1], [0.3, 0.3, 0.5, 1, 1, 1]),
                        rng.uniform(ROBOT.hand_lower, ROBOT.hand_upper)])
    return q


@given(st.integers(0, 10_000))
def test_imagined_points_on_robot_surface(seed):
    rng = np.random.default_rng(seed)
    q = robot_q(rng)
    cloud = imagine_robot_points(q, 96)
    assert len(cloud) == 96 and np.all(cloud.origin == IMAGINED)
    poses = forward_kinematics(ROBOT.chain, q)
    dist = np.full(96, np.inf)
    for s in ROBOT.shapes:
        world = poses[s.link] @ s.pose
        local = world.inverse().apply(cloud.points.astype(np.float64))
        dist = np.minimum(dist, np.abs(signed_distance_local(s.kind, s.dims, local)))
    assert dist.max() < 1e-6
    assert set(np.unique(cloud.labels)) <= {2, 3}


def test_imagined_points_rigid_translation():
    q = robot_q(np.random.default_rng(3))
    moved = q.copy()
    t = np.array([0.05, -0.02, 0.03])
    moved[:3] += t
    a, b = imagine_robot_points(q, 96), imagine_robot_points(moved, 96)
    np.testing.assert_allclose(b.points - a.points, np.tile(t, (96, 1)), atol=1e-6)


@pytest.fixture(scope="module")
def laptop_state():
    return reset(LAPTOP, default_split("laptop").instances("seen")[0], 0)


def test_assemble_observation(laptop_state):
    cfg = SensingConfig(width=64, height=64)
    cam = cfg.camera(LAPTOP.camera_eye, LAPTOP.camera_target)
    obs = assemble_observation(laptop_state, cam, cfg, seed=4)
    assert len(obs.cloud) == 608 and obs.proprio.shape == (PROPRIO_DIM,) == (35,)
    assert np.all(np.isfinite(obs.proprio))
    assert np.all(obs.cloud.origin[:512] == OBSERVED) and np.all(obs.cloud.origin[512:] == IMAGINED)
    lo, hi = np.array(cfg.crop_lo), np.array(cfg.crop_hi)
    observed = obs.cloud.points[:512]
    assert np.all((observed >= lo - 1e-6) & (observed <= hi + 1e-6))
    again = assemble_observation(laptop_state, cam, cfg, seed=4)
    np.testing.assert_array_equal(obs.cloud.points, again.cloud.points)
    np.testing.assert_array_equal(obs.proprio, again.proprio)
    assert obs.cloud.features().shape == (608, 4)


def test_observed_labels_match_hit_link(laptop_state):
    cfg = SensingConfig(width=64, height=64)
    cam = cfg.camera(LAPTOP.camera_eye, LAPTOP.camera_target)
    obs = assemble_observation(laptop_state, cam, cfg, seed=0)
    shapes = scene_shapes(laptop_state)
    pts = obs.cloud.points[:512].astype(np.float64)
    for p, label in zip(pts, obs.cloud.labels[:512]):
        d = [abs(signed_distance_local(s.kind, s.dims, s.pose.inverse().apply(p[None]))[0]) for s in shapes]
        assert shapes[int(np.argmin(d))].label == label or min(d) > 1e-4
    assert len(set(obs.cloud.labels[:512].tolist())) >= 2


def test_imagined_independent_of_camera(laptop_state):
    cfg = SensingConfig(width=48, height=48)
    a = assemble_observation(laptop_state, cfg.camera(LAPTOP.camera_eye, LAPTOP.camera_target), cfg)
    b = assemble_observation(laptop_state, cfg.camera((0.5, -0.5, 0.6), LAPTOP.camera_target), cfg)
    np.testing.assert_array_equal(a.cloud.points[512:], b.cloud.points[512:])
    assert not np.array_equal(a.cloud.points[:512], b.cloud.points[:512])


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel(Pose(), fov_y=np.pi)
    with pytest.raises(ValueError):
        CameraModel(Pose(), near=2.0, far=1.0)


def test_dxpc_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    cloud = LabeledPointCloud(rng.normal(size=(50, 3)), rng.integers(0, 4, 50), rng.integers(0, 2, 50))
    path = write_dxpc(tmp_path / "c.dxpc", cloud)
    raw = path.read_bytes()
    assert raw[:4] == b"DXPC" and len(raw) == 16 + 50 * 14
    back = read_dxpc(path)
    np.testing.assert_array_equal(back.points, cloud.points)
    np.testing.assert_array_equal(back.labels, cloud.labels)
    np.testing.assert_array_equal(back.origin, cloud.origin)
    (tmp_path / "bad.dxpc").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(PointCloudFormatError):
        read_dxpc(tmp_path / "bad.dxpc")
    (tmp_path / "short.dxpc").write_bytes(raw[:-3])
    with pytest.raises(PointCloudFormatError):
        read_dxpc(tmp_path / "short.dxpc")
