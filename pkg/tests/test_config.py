import json

import pytest

from dexkit.config import (DESK_PROFILE, SEED_ENV, ConfigError, RunConfig, RunManifest, file_sha256,
                           profile_config)
from dexkit.rl.ppo import PPOConfig
from dexkit.sensing import SensingConfig
from dexkit.tasks import RewardWeights
from dexkit.world import SimConfig


def test_empty_config_is_runnable():
    cfg = RunConfig.from_dict({}, env={}).validate()
    assert cfg.sim_config() == SimConfig()
    assert cfg.sensing_config() == SensingConfig()
    assert cfg.ppo_config() == PPOConfig()
    assert cfg.reward_weights() == RewardWeights()
    assert cfg.policy_spec().feature_dim == 384


def test_unknown_keys_are_all_reported():
    with pytest.raises(ConfigError) as ei:
        RunConfig.from_dict({"colour": 1, "ppo": {"gama": 0.9, "lr": 1e-3}, "sim": 3}, env={})
    errs = ei.value.errors
    assert "unknown field 'colour'" in errs and "ppo.gama: unknown field" in errs and "sim: expected an object" in errs


def test_validate_collects_errors(tmp_path):
    cfg = RunConfig.from_dict({"task": "door", "episode_horizon": 0, "ppo": {"gamma": 1.0},
                               "encoder": {"size": "huge"}, "camera_eye": [1, 2],
                               "pretrain": {"checkpoint": str(tmp_path / "x.dxck")}}, env={})
    with pytest.raises(ConfigError) as ei:
        cfg.validate()
    text = "\n".join(ei.value.errors)
    for key in ("task", "episode_horizon", "ppo", "encoder.size", "camera_eye", "pretrain.checkpoint"):
        assert key in text
    cfg.pretrain = {"method": None, "checkpoint": None}
    with pytest.raises(ConfigError):
        cfg.validate(check_paths=False)


def test_seed_env_override():
    assert RunConfig.from_dict({"seed": 3}, env={SEED_ENV: "11"}).seed == 11
    assert RunConfig.from_dict({"seed": 3}, env={SEED_ENV: ""}).seed == 3
    with pytest.raises(ConfigError):
        RunConfig.from_dict({}, env={SEED_ENV: "x"})


def test_round_trip_and_hash(tmp_path):
    cfg = profile_config("desk")
    path = cfg.save(tmp_path / "c.json")
    back = RunConfig.load(path, env={})
    assert back.to_dict() == cfg.to_dict()
    assert back.config_hash() == cfg.config_hash()
    back.output_dir = "elsewhere"
    assert back.config_hash() == cfg.config_hash()
    back.seed += 1
    assert back.config_hash() != cfg.config_hash()


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)


def test_profiles():
    desk = profile_config("desk")
    assert desk.sensing["n_observed"] == DESK_PROFILE["sensing"]["n_observed"]
    assert desk.ppo["gamma"] == PPOConfig().gamma
    assert profile_config("full").ppo["total_steps"] == 2_000_000
    assert profile_config("desk", ppo={"lr": 0.5}).ppo["lr"] == 0.5
    with pytest.raises(ConfigError):
        profile_config("huge")


def test_camera_override():
    cfg = RunConfig.from_dict({"camera_eye": [0, -1, 1]}, env={})
    spec = cfg.task_spec()
    assert spec.camera_eye == (0.0, -1.0, 1.0) and spec.camera_target == cfg.task_spec().camera_target


def test_run_manifest(tmp_path):
    m = RunManifest.begin("train", {"a": 1}, tmp_path)
    assert RunManifest.read(tmp_path).status == "running"
    (tmp_path / "out.txt").write_text("hi")
    (tmp_path / "junk.tmp").write_text("x")
    m.finish(tmp_path)
    back = RunManifest.read(tmp_path)
    assert back.status == "complete" and back.files == {"out.txt": file_sha256(tmp_path / "out.txt")}
    assert json.loads((tmp_path / "run_manifest.json").read_text())["config"] == {"a": 1}
    assert RunManifest.read(tmp_path / "nothing") is None
