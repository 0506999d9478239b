"""Encoder pre-training: segmentation, classification, reconstruction, SimSiam.

Every regime shares the PointNet encoder under the ``encoder.`` prefix so
the resulting checkpoints load into the policy's feature extractor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..assets import ALL_CATEGORIES
from ..nn import autodiff as ad
from ..nn.checkpoint import save_checkpoint
from ..nn.layers import MLP, Linear, PointNet, PointNetSpec
from ..nn.optim import Adam
from ..nn.params import ParamStore
from .augment import AugmentationSpec, augment
from .chamfer import chamfer_loss
from .data import PointDataset

ENCODER_PREFIX = "encoder."
N_SEG_CLASSES = 4
METRIC_FIELDS = ("epoch", "loss", "accuracy", "miou", "chamfer", "collapse_std")


@dataclass(frozen=True)
class PretrainConfig:
    encoder: PointNetSpec = PointNetSpec()
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    held_out: float = 0.1
    seed: int = 0
    recon_points: int = 512
    proj_hidden: int = 256
    proj_dim: int = 32
    pred_hidden: int = 64
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


# ---------------------------------------------------------------- models

class SegmentationModel:
    """Per-point logits from ``[f_i, F1]``.

    The first head layer acting on the concatenation is applied as
    ``f_i @ W_local + F1 @ W_global`` so the global half runs once per cloud.
    """

    def __init__(self, store: ParamStore, spec: PointNetSpec, n_classes: int = N_SEG_CLASSES, hidden: int = 128):
        self.encoder = PointNet(store, spec)
        self.local = Linear(store, "seg_head.local", spec.out_dim, hidden)
        self.glob = store.create("seg_head.global.weight", (spec.out_dim, hidden), fan_in=2 * spec.out_dim)
        self.out = Linear(store, "seg_head.out", hidden, n_classes, init_scale=0.01)

    def __call__(self, x):
        per_point, glob = self.encoder(x)
        b, n, _ = per_point.shape
        g = ad.reshape(ad.matmul(glob, self.glob), (b, 1, -1))
        return self.out(ad.gelu(self.local(per_point) + g))


class ClassificationModel:
    def __init__(self, store: ParamStore, spec: PointNetSpec, n_classes: int):
        self.encoder = PointNet(store, spec)
        self.head = MLP(store, "cls_head", [spec.out_dim, 128, n_classes], out_scale=0.01)

    def __call__(self, x):
        return self.head(self.encoder(x)[1])


class ReconstructionModel:
    def __init__(self, store: ParamStore, spec: PointNetSpec, n_points: int):
        self.encoder = PointNet(store, spec)
        self.n_points = n_points
        self.decoder = MLP(store, "decoder", [spec.out_dim, 256, 256, 3 * n_points])

    def __call__(self, x):
        glob = self.encoder(x)[1]
        return ad.reshape(self.decoder(glob), (glob.shape[0], self.n_points, 3))


class SimSiamModel:
    def __init__(self, store: ParamStore, spec: PointNetSpec, cfg: PretrainConfig):
        self.encoder = PointNet(store, spec)
        self.projector = MLP(store, "projector", [spec.out_dim, cfg.proj_hidden, cfg.proj_dim], norm=True)
        self.predictor = MLP(store, "predictor", [cfg.proj_dim, cfg.pred_hidden, cfg.proj_dim], norm=True)

    def project(self, x):
        return self.projector(self.encoder(x)[1])

    def __call__(self, x1, x2):
        z1, z2 = self.project(x1), self.project(x2)
        return simsiam_loss(self.predictor(z1), self.predictor(z2), z1, z2), z1, z2


def simsiam_loss(p1, p2, z1, z2):
    """``-(cos(p1, sg(z2)) + cos(p2, sg(z1))) / 2``, averaged over the batch."""
    c1 = ad.mean(ad.cosine_similarity(p1, ad.stop_gradient(z2)))
    c2 = ad.mean(ad.cosine_similarity(p2, ad.stop_gradient(z1)))
    return (c1 + c2) * -0.5


def collapse_std(z: np.ndarray) -> float:
    """Mean per-dimension std of L2-normalised embeddings (0 means collapse)."""
    z = np.asarray(z, dtype=np.float64)
    zn = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    return float(zn.std(axis=0).mean())


def segmentation_scores(pred: np.ndarray, labels: np.ndarray, n_classes: int = N_SEG_CLASSES) -> tuple[float, float]:
    pred, labels = pred.reshape(-1), labels.reshape(-1)
    acc = float((pred == labels).mean())
    ious = []
    for c in range(n_classes):
        union = np.sum((pred == c) | (labels == c))
        if union:
            ious.append(np.sum((pred == c) & (labels == c)) / union)
    return acc, float(np.mean(ious))


# ---------------------------------------------------------------- loop

@dataclass
class PretrainResult:
    method: str
    store: ParamStore
    model: object
    metrics: list[dict]

    def encoder_state(self) -> dict[str, np.ndarray]:
        return self.store.state_dict(ENCODER_PREFIX)

    def save(self, checkpoint, metrics_csv=None) -> Path:
        path = save_checkpoint(self.store, checkpoint, prefix=ENCODER_PREFIX)
        if metrics_csv is not None:
            write_metrics(self.metrics, metrics_csv)
        return path


def write_metrics(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in METRIC_FIELDS})
    return path


def _batches(n: int, size: int, rng):
    perm = rng.permutation(n)
    for i in range(0, n, size):
        yield perm[i:i + size]


def _eval_batches(n: int, size: int):
    for i in range(0, n, size):
        yield np.arange(i, min(n, i + size))


def _run(method: str, train: PointDataset, test: PointDataset, cfg: PretrainConfig, store: ParamStore, model,
         loss_fn, eval_fn) -> PretrainResult:
    opt = Adam(store, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 7])

    def train_loss():
        # full pass over the training set at the current parameters
        losses, sizes = [], []
        for idx in _eval_batches(len(train), cfg.batch_size):
            if len(idx) < 2 and method == "simsiam":
                continue
            losses.append(loss_fn(idx, rng).item())
            sizes.append(len(idx))
        return float(np.average(losses, weights=sizes))

    metrics = [dict(epoch=0, loss=train_loss(), **eval_fn())]
    for epoch in range(1, cfg.epochs + 1):
        for idx in _batches(len(train), cfg.batch_size, rng):
            if len(idx) < 2 and method == "simsiam":
                continue
            loss = loss_fn(idx, rng)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"{method}: non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
        metrics.append(dict(epoch=epoch, loss=train_loss(), **eval_fn()))
    return PretrainResult(method, store, model, metrics)


def _prepare(dataset: PointDataset, cfg: PretrainConfig):
    train, test = dataset.split(cfg.held_out, cfg.seed)
    return train, test, ParamStore(cfg.seed)


def train_segmentation(dataset: PointDataset, cfg: PretrainConfig = PretrainConfig()) -> PretrainResult:
    """Per-point 4-way labelling from per-point plus global features."""
    train, test, store = _prepare(dataset, cfg)
    model = SegmentationModel(store, cfg.encoder)

    def loss_fn(idx, rng):
        return ad.softmax_cross_entropy(model(train.features[idx]), train.labels[idx])

    def eval_fn():
        preds = [model(test.features[i]).data.argmax(-1) for i in _eval_batches(len(test), cfg.batch_size)]
        acc, miou = segmentation_scores(np.concatenate(preds), test.labels)
        return dict(accuracy=acc, miou=miou)

    return _run("segmentation", train, test, cfg, store, model, loss_fn, eval_fn)


def train_classification(dataset: PointDataset, cfg: PretrainConfig = PretrainConfig(),
                         n_classes: int = len(ALL_CATEGORIES)) -> PretrainResult:
    if dataset.category.min() < 0:
        raise ValueError("classification needs a category label on every record")
    train, test, store = _prepare(dataset, cfg)
    model = ClassificationModel(store, cfg.encoder, n_classes)

    def loss_fn(idx, rng):
        return ad.softmax_cross_entropy(model(train.features[idx]), train.category[idx])

    def eval_fn():
        preds = [model(test.features[i]).data.argmax(-1) for i in _eval_batches(len(test), cfg.batch_size)]
        return dict(accuracy=float((np.concatenate(preds) == test.category).mean()))

    return _run("classification", train, test, cfg, store, model, loss_fn, eval_fn)


def observed_points(features: np.ndarray) -> np.ndarray:
    """Observed xyz per record; every record holds the same observed count."""
    mask = features[..., 3] == 0
    counts = mask.sum(axis=1)
    if counts.min() != counts.max():
        raise ValueError("records differ in observed point count")
    return features[..., :3][mask].reshape(len(features), counts[0], 3)


def train_reconstruction(dataset: PointDataset, cfg: PretrainConfig = PretrainConfig()) -> PretrainResult:
    """Decode ``recon_points`` points from the global feature; Chamfer to the observed points."""
    train, test, store = _prepare(dataset, cfg)
    model = ReconstructionModel(store, cfg.encoder, cfg.recon_points)
    train_target, test_target = observed_points(train.features), observed_points(test.features)

    def loss_fn(idx, rng):
        return chamfer_loss(model(train.features[idx]), train_target[idx])

    def eval_fn():
        vals, sizes = [], []
        for i in _eval_batches(len(test), cfg.batch_size):
            vals.append(chamfer_loss(model(test.features[i]), test_target[i]).item())
            sizes.append(len(i))
        return dict(chamfer=float(np.average(vals, weights=sizes)))

    return _run("reconstruction", train, test, cfg, store, model, loss_fn, eval_fn)


def train_simsiam(dataset: PointDataset, cfg: PretrainConfig = PretrainConfig()) -> PretrainResult:
    """Two augmented views, predictor on both sides, stop-gradient on the targets."""
    train, test, store = _prepare(dataset, cfg)
    model = SimSiamModel(store, cfg.encoder, cfg)
    aug = cfg.augmentation

    def views(feats, rng):
        return (np.stack([augment(f, aug, rng) for f in feats]),
                np.stack([augment(f, aug, rng) for f in feats]))

    def loss_fn(idx, rng):
        v1, v2 = views(train.features[idx], rng)
        return model(v1, v2)[0]

    def eval_fn():
        z = model.project(test.features).data if len(test) > 1 else np.zeros((1, cfg.proj_dim))
        return dict(collapse_std=collapse_std(z))

    return _run("simsiam", train, test, cfg, store, model, loss_fn, eval_fn)
