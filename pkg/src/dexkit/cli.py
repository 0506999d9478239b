"""``dexkit`` command line: assets, pre-training data, pre-training, PPO, evaluation.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .assets import SplitManifest, TABLE1_COUNTS, default_split, generate_split, get_template
from .config import ConfigError, RunConfig, RunManifest, config_digest, profile_config
from .evaluation import (
    AblationPlan,
    EvalReport,
    EvalSetup,
    run_ablation,
    run_eval,
    run_viewpoint_sweep,
)
from .nn.checkpoint import CheckpointFormatError, read_checkpoint
from .nn.layers import PointNetSpec
from .pretrain import ENCODER_PREFIX, METHODS, PretrainConfig, generate_dam, generate_pmm, load_dataset
from .pretrain.data import read_index
from .rl.trainer import STATE_FILE, PPOTrainer, load_policy
from .sensing import PointCloudFormatError, SensingConfig
from .tasks import get_task

log = logging.getLogger("dexkit")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------- commands

def _task(name):
    try:
        return get_task(name)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmd_gen_assets(a) -> int:
    category = _task(a.task).category
    n_all, n_seen, n_unseen = TABLE1_COUNTS[category]
    n_seen = n_seen if a.n_seen is None else a.n_seen
    n_unseen = n_unseen if a.n_unseen is None else a.n_unseen
    if min(n_seen, n_unseen) < 0:
        raise ValidationError("object counts must be non-negative")
    if a.n_seen is None and a.n_unseen is None:
        manifest = default_split(category, a.seed)
    else:
        manifest = generate_split(get_template(category), n_seen + n_unseen, n_seen, n_unseen, a.seed)
    path = manifest.save(Path(a.out) / f"{category}_manifest.json")
    print(f"wrote {path} ({manifest.counts})")
    return EXIT_OK


def _read_manifest(path) -> SplitManifest:
    try:
        return SplitManifest.load(path)
    except FileNotFoundError as exc:
        raise ValidationError(str(exc)) from None
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"malformed manifest {path}: {exc}") from None


def cmd_gen_pretrain_data(a) -> int:
    out = Path(a.out)
    RunManifest.begin("gen-pretrain-data", _args_dict(a), out)
    if a.dataset == "dam":
        if a.manifest is None:
            raise ValidationError("--manifest is required for the dam dataset")
        manifest = _read_manifest(a.manifest)
        sensing = SensingConfig(n_observed=a.n_observed, n_imagined=a.n_imagined)
        recs = generate_dam(manifest, a.per_object, a.seed, out=out, split=a.split, sensing=sensing)
    else:
        sensing = SensingConfig(n_observed=a.n_observed, n_imagined=0)
        kw = {"categories": tuple(a.categories)} if a.categories else {}
        recs = generate_pmm(per_category=a.per_category, seed=a.seed, out=out, sensing=sensing, **kw)
    RunManifest.read(out).finish(out)
    print(f"wrote {len(recs)} clouds to {out}")
    return EXIT_OK


def _args_dict(a) -> dict:
    return {k: v for k, v in vars(a).items() if k != "func"}


def cmd_pretrain(a) -> int:
    kind, trainer = METHODS[a.method]
    try:
        index = read_index(a.data)
    except FileNotFoundError as exc:
        raise ValidationError(str(exc)) from None
    if index.get("kind") != kind:
        raise ValidationError(f"method {a.method} needs a {kind} dataset, {a.data} holds {index.get('kind')!r}")
    data = load_dataset(a.data)
    cfg = PretrainConfig(encoder=PointNetSpec(a.size, a.hidden, a.out_dim), epochs=a.epochs,
                         batch_size=a.batch_size, lr=a.lr, seed=a.seed)
    result = trainer(data, cfg)
    ckpt = Path(a.out)
    metrics = Path(a.metrics) if a.metrics else ckpt.with_suffix(".csv")
    result.save(ckpt, metrics)
    last = result.metrics[-1]
    print(f"wrote {ckpt} and {metrics}; final {json.dumps({k: v for k, v in last.items() if v is not None})}")
    return EXIT_OK


def _train_config(a) -> RunConfig:
    cfg = RunConfig.load(a.config) if a.config else profile_config(a.profile)
    if a.out:
        cfg.output_dir = a.out
    if a.encoder:
        cfg.pretrain = {**cfg.pretrain, "checkpoint": a.encoder}
    if a.total_steps is not None:
        cfg.ppo = {**cfg.ppo, "total_steps": a.total_steps}
    if a.seed is not None:
        cfg.seed = a.seed
    return cfg.validate()


def _objects(cfg: RunConfig, split: str = "seen"):
    spec = cfg.task_spec()
    manifest = _read_manifest(cfg.manifest) if cfg.manifest else default_split(spec.category, cfg.seed)
    if manifest.category != spec.category:
        raise ValidationError(f"manifest category {manifest.category!r} does not match task {spec.name!r}")
    return manifest, manifest.instances(split)


def _encoder_state(path):
    try:
        state = read_checkpoint(path)
    except (FileNotFoundError, CheckpointFormatError) as exc:
        raise ValidationError(str(exc)) from None
    enc = {k: v for k, v in state.items() if k.startswith(ENCODER_PREFIX)}
    if not enc:
        raise ValidationError(f"{path} holds no {ENCODER_PREFIX}* parameters")
    return enc


def cmd_train(a) -> int:
    cfg = _train_config(a)
    out = Path(cfg.output_dir)
    body = cfg.to_dict()
    prior = RunManifest.read(out)
    if a.resume and prior is not None:
        if prior.config_hash != config_digest(body):
            raise ValidationError("config changed since the interrupted run; refusing to resume")
        if prior.status == "complete":
            print(f"{out} already complete; nothing to do")
            return EXIT_OK
    manifest, objects = _objects(cfg)
    if a.resume and (out / STATE_FILE).exists():
        trainer = PPOTrainer.load(out)
        print(f"resuming at {trainer.env_steps} env steps")
        run_manifest = prior or RunManifest.begin("train", body, out)
    else:
        run_manifest = RunManifest.begin("train", body, out)
        enc = cfg.pretrain.get("checkpoint")
        trainer = PPOTrainer(cfg.task_spec(), objects, policy_spec=cfg.policy_spec(), ppo=cfg.ppo_config(),
                             sensing=cfg.sensing_config(), sim_cfg=cfg.sim_config(), weights=cfg.reward_weights(),
                             episode_horizon=cfg.episode_horizon, seed=cfg.seed,
                             encoder_state=_encoder_state(enc) if enc else None)
    cfg.save(out / "config.json")
    trainer.train(cfg.ppo["total_steps"], out_dir=out, checkpoint_every=cfg.checkpoint_every,
                  max_updates=a.max_updates)
    done = trainer.env_steps >= cfg.ppo["total_steps"]
    run_manifest.finish(out, "complete" if done else "partial")
    last = trainer.log[-1] if trainer.log else {}
    print(f"{trainer.env_steps} env steps; last success_seen={last.get('success_seen')}; wrote {out}")
    return EXIT_OK


def _manifests_by_category(paths) -> dict[str, SplitManifest]:
    out = {}
    for p in paths or []:
        m = _read_manifest(p)
        out[m.category] = m
    return out


def cmd_eval(a) -> int:
    manifests = _manifests_by_category(a.manifest)
    groups: dict[str, list[str]] = {}
    for ck in a.checkpoint:
        try:
            _, meta = load_policy(ck)
        except FileNotFoundError as exc:
            raise ValidationError(str(exc)) from None
        groups.setdefault(meta["task"], []).append(ck)
    report = EvalReport()
    for task, paths in groups.items():
        cat = get_task(task).category
        if cat not in manifests:
            raise ValidationError(f"no manifest given for category {cat!r}")
        _, meta = load_policy(paths[0])
        setup = EvalSetup.from_meta(meta, n_envs=a.n_envs)
        seeds = a.seeds if a.seeds else list(range(len(paths)))
        report.extend(run_eval(paths, manifests[cat], a.splits, a.n_episodes, seeds, setup,
                               deterministic=not a.stochastic))
    report.write(a.out)
    for s in report.summary():
        std = "" if s["std"] is None else f" +- {s['std']:.3f}"
        print(f"{s['task']:>14s} {s['split']:>6s}: {s['mean']:.3f}{std} ({s['n_seeds']} seeds)")
    return EXIT_OK


def cmd_sweep(a) -> int:
    try:
        policy, meta = load_policy(a.checkpoint, camera_blind=True if a.camera_blind else None)
    except FileNotFoundError as exc:
        raise ValidationError(str(exc)) from None
    manifest = _read_manifest(a.manifest)
    setup = EvalSetup.from_meta(meta, n_envs=a.n_envs)
    out = Path(a.out)
    rows = run_viewpoint_sweep(policy, setup, manifest, a.n_episodes, a.seed, a.split, out_csv=out)
    print(f"wrote {len(rows)} cells to {out}")
    return EXIT_OK


def cmd_ablate(a) -> int:
    path = Path(a.plan)
    if not path.exists():
        raise ValidationError(f"plan not found: {path}")
    try:
        body = json.loads(path.read_text())
        plan = AblationPlan.from_dict(body.get("plan", body))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid plan {path}: {exc}") from None
    missing = plan.missing_encoders()
    if missing:
        raise ValidationError(f"plan lacks encoder checkpoints for {missing}")
    cfg = RunConfig.load(a.config) if a.config else profile_config(a.profile)
    cfg.task = plan.task
    cfg.validate()
    manifest = _read_manifest(a.manifest) if a.manifest else default_split(get_task(plan.task).category, cfg.seed)
    setup = EvalSetup(cfg.task_spec(), cfg.sensing_config(), cfg.sim_config(), cfg.reward_weights(),
                      cfg.episode_horizon, cfg.eval["n_envs"])
    out = Path(a.out)
    RunManifest.begin("ablate", {"plan": body, "config": cfg.to_dict()}, out)
    reports = run_ablation(plan, manifest, out, policy_spec=cfg.policy_spec(), ppo=cfg.ppo_config(), setup=setup)
    RunManifest.read(out).finish(out)
    for name, rep in reports.items():
        for s in rep.summary():
            print(f"{name:>22s} {s['split']:>6s}: {s['mean']:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dexkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-assets", help="write a seen/unseen split manifest")
    g.add_argument("--task", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--n-seen", type=int)
    g.add_argument("--n-unseen", type=int)
    g.set_defaults(func=cmd_gen_assets)

    d = sub.add_parser("gen-pretrain-data", help="write a point-cloud dataset")
    d.add_argument("--dataset", choices=("dam", "pmm"), required=True)
    d.add_argument("--manifest")
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--per-object", type=int, default=100)
    d.add_argument("--per-category", type=int, default=1000)
    d.add_argument("--categories", nargs="+")
    d.add_argument("--split", choices=("seen", "unseen"), default="seen")
    d.add_argument("--n-observed", type=int, default=512)
    d.add_argument("--n-imagined", type=int, default=96)
    d.set_defaults(func=cmd_gen_pretrain_data)

    t = sub.add_parser("pretrain", help="pre-train a point-cloud encoder")
    t.add_argument("--method", choices=sorted(METHODS), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--metrics")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--size", choices=("small", "medium", "large"), default="small")
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--out-dim", type=int, default=256)
    t.set_defaults(func=cmd_pretrain)

    r = sub.add_parser("train", help="train a PPO policy")
    r.add_argument("--config")
    r.add_argument("--profile", choices=("default", "desk", "full"), default="desk")
    r.add_argument("--encoder")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--total-steps", type=int)
    r.add_argument("--max-updates", type=int, help="stop after this many updates (leaves a resumable run)")
    r.add_argument("--resume", action="store_true")
    r.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="seen/unseen success rates")
    e.add_argument("--checkpoint", nargs="+", required=True)
    e.add_argument("--manifest", nargs="+", required=True)
    e.add_argument("--splits", nargs="+", choices=("seen", "unseen"), default=["seen", "unseen"])
    e.add_argument("--n-episodes", type=int, default=100)
    e.add_argument("--seeds", type=int, nargs="+")
    e.add_argument("--n-envs", type=int, default=10)
    e.add_argument("--stochastic", action="store_true")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-viewpoints", help="success rate over the 35-camera grid")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--n-episodes", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", choices=("seen", "unseen"), default="seen")
    s.add_argument("--n-envs", type=int, default=10)
    s.add_argument("--camera-blind", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("ablate", help="train and compare plan variants")
    b.add_argument("--plan", required=True)
    b.add_argument("--manifest")
    b.add_argument("--config")
    b.add_argument("--profile", choices=("default", "desk", "full"), default="desk")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ValidationError, PointCloudFormatError, CheckpointFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, PermissionError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, FileNotFoundError) else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
