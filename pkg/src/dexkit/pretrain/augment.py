"""Point-cloud augmentations for the siamese views."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentationSpec:
    max_rotation: float = np.pi
    jitter_sigma: float = 0.005
    dropout: float = 0.10
    crop_prob: float = 0.3

    def __post_init__(self):
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.jitter_sigma < 0 or not 0 <= self.crop_prob <= 1:
            raise ValueError("invalid augmentation parameters")


def augment(features: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """One random view of ``features (N, 4)``; the point count is preserved.

    Dropped or cropped points are replaced by copies of surviving points,
    which leaves a max-pooled encoding unchanged by the padding itself.
    """
    x = np.array(features, dtype=np.float32, copy=True)
    n = len(x)
    xyz = x[:, :3].astype(np.float64)
    centre = xyz.mean(axis=0)
    th = rng.uniform(-spec.max_rotation, spec.max_rotation)
    c, s = np.cos(th), np.sin(th)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    xyz = (xyz - centre) @ rot.T + centre
    xyz += rng.normal(0.0, spec.jitter_sigma, size=xyz.shape)
    keep = rng.uniform(size=n) >= spec.dropout
    if rng.uniform() < spec.crop_prob:
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        proj = (xyz - centre) @ normal
        keep &= proj <= np.quantile(proj, rng.uniform(0.6, 0.9))
    if not keep.any():
        keep[rng.integers(n)] = True
    idx = np.flatnonzero(keep)
    fill = idx[rng.integers(len(idx), size=n - len(idx))]
    order = np.concatenate([idx, fill])
    x[:, :3] = xyz
    return x[order]
