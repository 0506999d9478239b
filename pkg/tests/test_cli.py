import csv
import json

import numpy as np
import pytest

from dexkit.assets import ALL_CATEGORIES
from dexkit.cli import EXIT_INVALID, EXIT_OK, main
from dexkit.config import MANIFEST_FILE, RunManifest
from dexkit.nn.checkpoint import read_checkpoint
from dexkit.nn.layers import PointNetSpec
from dexkit.pretrain import load_dataset
from dexkit.pretrain.data import read_index
from dexkit.rl.policy import ActorCritic, PolicySpec
from dexkit.rl.trainer import PPOTrainer, save_policy
from dexkit.sensing import SensingConfig, read_dxpc
from dexkit.shapes import LABEL_ARM, LABEL_HAND
from dexkit.tasks import TASKS

TINY_ENC = ["--size", "small", "--hidden", "8", "--out-dim", "16"]
TRAIN_CFG = {
    "episode_horizon": 5,
    "checkpoint_every": 1,
    "sensing": {"n_observed": 32, "n_imagined": 16, "width": 32, "height": 32},
    "encoder": {"size": "small", "hidden": 8, "out_dim": 16},
    "policy": {"proprio_hidden": 16, "proprio_out": 16, "head_hidden": 32},
    "ppo": {"horizon": 5, "n_envs": 2, "epochs": 1, "minibatch_size": 10, "total_steps": 30},
}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A small laptop manifest plus dam and pmm datasets shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-assets", "--task", "laptop", "--out", root, "--n-seen", 2, "--n-unseen", 1) == EXIT_OK
    man = root / "laptop_manifest.json"
    assert run("gen-pretrain-data", "--dataset", "dam", "--manifest", man, "--out", root / "dam",
               "--per-object", 6, "--n-observed", 48, "--n-imagined", 16) == EXIT_OK
    assert run("gen-pretrain-data", "--dataset", "pmm", "--out", root / "pmm", "--per-category", 3,
               "--n-observed", 48) == EXIT_OK
    return root


# ---------------------------------------------------------------- gen-assets

def test_gen_assets_defaults(tmp_path):
    assert run("gen-assets", "--task", "faucet", "--out", tmp_path) == EXIT_OK
    body = json.loads((tmp_path / "faucet_manifest.json").read_text())
    splits = [o["split"] for o in body["objects"]]
    assert (len(splits), splits.count("seen"), splits.count("unseen")) == (18, 11, 7)


def test_gen_assets_override_and_rerun(tmp_path):
    for d in ("a", "b"):
        assert run("gen-assets", "--task", "bucket", "--seed", 3, "--out", tmp_path / d, "--n-seen", 5) == EXIT_OK
    a, b = (tmp_path / d / "bucket_manifest.json" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    assert [o["split"] for o in json.loads(a.read_text())["objects"]].count("seen") == 5


def test_gen_assets_bad_task(tmp_path):
    assert run("gen-assets", "--task", "door", "--out", tmp_path) == EXIT_INVALID


# ---------------------------------------------------------------- datasets

def test_dam_index(work):
    index = read_index(work / "dam")
    assert index["kind"] == "dam" and len(index["records"]) == 2 * 6
    assert all((work / "dam" / r["file"]).exists() for r in index["records"])
    assert RunManifest.read(work / "dam").status == "complete"


def test_pmm_has_no_robot_points(work):
    index = read_index(work / "pmm")
    assert len(index["records"]) == len(ALL_CATEGORIES) * 3
    for r in index["records"]:
        labels = read_dxpc(work / "pmm" / r["file"]).labels
        assert not np.isin(labels, [LABEL_HAND, LABEL_ARM]).any()


def test_dam_needs_manifest(tmp_path):
    assert run("gen-pretrain-data", "--dataset", "dam", "--out", tmp_path) == EXIT_INVALID
    assert run("gen-pretrain-data", "--dataset", "dam", "--manifest", tmp_path / "none.json",
               "--out", tmp_path) == EXIT_INVALID


# ---------------------------------------------------------------- pretrain

@pytest.mark.parametrize("method", ["seg-dam", "recon-dam", "simsiam-dam", "seg-pmm", "cls-pmm"])
def test_pretrain_methods(work, tmp_path, method):
    data = work / method.split("-")[1]
    ckpt = tmp_path / f"{method}.dxck"
    assert run("pretrain", "--method", method, "--data", data, "--out", ckpt, "--epochs", 1, "--batch-size", 4,
               *TINY_ENC) == EXIT_OK
    state = read_checkpoint(ckpt)
    ref = ActorCritic(PolicySpec(encoder=PointNetSpec("small", 8, 16))).store.shapes("encoder.")
    assert {k: v.shape for k, v in state.items()} == ref
    with open(ckpt.with_suffix(".csv")) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in rows] == [0, 1]
    if method != "simsiam-dam":
        # SimSiam's loss is a similarity and may rise from a lucky start
        assert float(rows[1]["loss"]) < float(rows[0]["loss"])


def test_pretrain_rejects_wrong_dataset(work, tmp_path):
    assert run("pretrain", "--method", "cls-pmm", "--data", work / "dam", "--out", tmp_path / "x.dxck") \
        == EXIT_INVALID
    assert run("pretrain", "--method", "seg-dam", "--data", tmp_path, "--out", tmp_path / "x.dxck") == EXIT_INVALID
    assert run("pretrain", "--method", "jigsaw", "--data", work / "dam", "--out", tmp_path / "x.dxck") \
        == EXIT_INVALID


# ---------------------------------------------------------------- train

def _config(tmp_path, **kw):
    body = {**TRAIN_CFG, **kw}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(body))
    return path


def test_train_with_encoder(work, tmp_path):
    enc = tmp_path / "enc.dxck"
    assert run("pretrain", "--method", "seg-dam", "--data", work / "dam", "--out", enc, "--epochs", 1,
               "--batch-size", 4, *TINY_ENC) == EXIT_OK
    cfg = _config(tmp_path, manifest=str(work / "laptop_manifest.json"))
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--encoder", enc, "--out", out, "--total-steps", 0) == EXIT_OK
    policy_state = read_checkpoint(out / "policy.dxck")
    for k, v in read_checkpoint(enc).items():
        np.testing.assert_array_equal(policy_state[k], v)
    rm = RunManifest.read(out)
    assert rm.status == "complete" and "policy.dxck" in rm.files


def test_train_without_encoder_is_seeded(tmp_path):
    cfg = _config(tmp_path)
    for d in ("a", "b"):
        assert run("train", "--config", cfg, "--out", tmp_path / d, "--total-steps", 0) == EXIT_OK
    a, b = (read_checkpoint(tmp_path / d / "policy.dxck") for d in ("a", "b"))
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_train_resume_matches(tmp_path):
    cfg = _config(tmp_path)
    assert run("train", "--config", cfg, "--out", tmp_path / "full") == EXIT_OK
    assert run("train", "--config", cfg, "--out", tmp_path / "part", "--max-updates", 1) == EXIT_OK
    assert RunManifest.read(tmp_path / "part").status == "partial"
    assert run("train", "--config", cfg, "--out", tmp_path / "part", "--resume") == EXIT_OK
    full, part = (PPOTrainer.load(tmp_path / d) for d in ("full", "part"))
    assert len(full.log) == 3 and full.log_hash() == part.log_hash()
    assert (tmp_path / "full" / "train_log.csv").read_bytes() == (tmp_path / "part" / "train_log.csv").read_bytes()
    # finished runs are not recomputed
    before = (tmp_path / "part" / "trainer_state.pkl").stat().st_mtime_ns
    assert run("train", "--config", cfg, "--out", tmp_path / "part", "--resume") == EXIT_OK
    assert (tmp_path / "part" / "trainer_state.pkl").stat().st_mtime_ns == before


def test_train_resume_refuses_changed_config(tmp_path):
    cfg = _config(tmp_path)
    assert run("train", "--config", cfg, "--out", tmp_path / "r", "--max-updates", 1) == EXIT_OK
    assert run("train", "--config", cfg, "--out", tmp_path / "r", "--resume", "--seed", 9) == EXIT_INVALID


def test_train_validation_lists_every_error(tmp_path, capsys):
    bad = _config(tmp_path, task="door", episode_horizon=0, manifest=str(tmp_path / "missing.json"))
    assert run("train", "--config", bad, "--out", tmp_path / "x") == EXIT_INVALID
    err = capsys.readouterr().err
    assert "task" in err and "episode_horizon" in err and "manifest" in err
    assert not (tmp_path / "x" / MANIFEST_FILE).exists()


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = _config(tmp_path)
    monkeypatch.setenv("DEXKIT_SEED", "7")
    assert run("train", "--config", cfg, "--out", tmp_path / "s", "--total-steps", 0) == EXIT_OK
    assert json.loads((tmp_path / "s" / "config.json").read_text())["seed"] == 7
    monkeypatch.setenv("DEXKIT_SEED", "seven")
    assert run("train", "--config", cfg, "--out", tmp_path / "t", "--total-steps", 0) == EXIT_INVALID


# ---------------------------------------------------------------- eval, sweep, ablate

SENSE = SensingConfig(n_observed=32, n_imagined=16, width=32, height=32)
TINY = PolicySpec(encoder=PointNetSpec("small", 8, 16), proprio_hidden=16, proprio_out=16, head_hidden=32)


def test_eval_all_tasks(tmp_path):
    ckpts, mans = [], []
    for name in TASKS:
        ckpts.append(save_policy(ActorCritic(TINY), tmp_path / f"{name}.dxck", sensing=SENSE, task=name,
                                 episode_horizon=2))
        assert run("gen-assets", "--task", name, "--out", tmp_path) == EXIT_OK
        mans.append(tmp_path / f"{TASKS[name].category}_manifest.json")
    assert run("eval", "--checkpoint", *ckpts, "--manifest", *mans, "--n-episodes", 1, "--n-envs", 1,
               "--out", tmp_path / "rep") == EXIT_OK
    with open(tmp_path / "rep" / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8 and {(r["task"], r["split"]) for r in rows} == \
        {(t, s) for t in TASKS for s in ("seen", "unseen")}


def test_eval_missing_inputs(tmp_path):
    assert run("eval", "--checkpoint", tmp_path / "none.dxck", "--manifest", tmp_path / "m.json",
               "--out", tmp_path) == EXIT_INVALID


def test_sweep_writes_35_rows(work, tmp_path):
    ck = save_policy(ActorCritic(TINY), tmp_path / "p.dxck", sensing=SENSE, task="laptop", episode_horizon=2)
    out = tmp_path / "grid.csv"
    assert run("sweep-viewpoints", "--checkpoint", ck, "--manifest", work / "laptop_manifest.json",
               "--n-episodes", 1, "--n-envs", 1, "--out", out) == EXIT_OK
    assert len(out.read_text().splitlines()) == 36


def test_ablate_sizes(work, tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"axis": "size", "seeds": [0], "total_steps": 10, "n_eval_episodes": 1}))
    cfg = _config(tmp_path)
    assert run("ablate", "--plan", plan, "--config", cfg, "--manifest", work / "laptop_manifest.json",
               "--out", tmp_path / "abl") == EXIT_OK
    assert len(list((tmp_path / "abl").rglob("train_log.csv"))) == 3
    assert RunManifest.read(tmp_path / "abl").status == "complete"


def test_ablate_bad_plan(tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"axis": "colour"}))
    assert run("ablate", "--plan", plan, "--out", tmp_path / "o") == EXIT_INVALID
    assert run("ablate", "--plan", tmp_path / "none.json", "--out", tmp_path / "o") == EXIT_INVALID


def test_usage_errors():
    assert run() == EXIT_INVALID
    assert run("frobnicate") == EXIT_INVALID
    assert run("--help") == EXIT_OK


def test_loaded_dataset_matches_index(work):
    data = load_dataset(work / "dam")
    assert data.features.shape == (12, 64, 4)
