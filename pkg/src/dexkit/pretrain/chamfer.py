"""Chamfer distance between point sets, plain and differentiable."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..nn.autodiff import Tensor, as_tensor, index, mean, square, tsum


def chamfer_distance(a, b) -> float:
    """Mean squared nearest-neighbour distance, summed over both directions."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer_distance needs two non-empty point sets")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(da * da) + np.mean(db * db))


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a2 = (a * a).sum(-1)[..., :, None]
    b2 = (b * b).sum(-1)[..., None, :]
    return a2 + b2 - 2 * a @ np.swapaxes(b, -1, -2)


def chamfer_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Batch-mean Chamfer distance between ``pred (B, M, 3)`` and ``target (B, N, 3)``.

    Nearest neighbours are found on the current values and held fixed for
    the gradient, which is the usual subgradient of the min.
    """
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=pred.data.dtype)
    if pred.ndim != 3 or target.ndim != 3 or pred.shape[0] != target.shape[0]:
        raise ValueError(f"chamfer_loss: shapes {pred.shape} and {target.shape}")
    d = _pairwise_sq(pred.data.astype(np.float64), target.astype(np.float64))
    nn_pred = d.argmin(axis=2)
    nn_tgt = d.argmin(axis=1)
    bidx = np.arange(pred.shape[0])[:, None]
    fwd = square(pred - target[bidx, nn_pred])
    back = square(index(pred, (bidx, nn_tgt)) - target)
    return mean(tsum(fwd, axis=-1)) + mean(tsum(back, axis=-1))
