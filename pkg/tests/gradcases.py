"""Finite-difference gradient cases for every differentiable op.

Each case maps an RNG to input arrays and a function of the matching
tensors. ``check`` compares the tape gradient of ``sum(f(x) * r)``
against central differences in float64.
"""

import numpy as np

from dexkit.nn import autodiff as ad
from dexkit.pretrain.chamfer import chamfer_loss
from oracles import numeric_grad


def _away_from(x, points, gap=1e-3):
    for p in points:
        x = np.where(np.abs(x - p) < gap, x + 4 * gap, x)
    return x


def _spread(rng, shape):
    # distinct values so max/min/argmax are unambiguous under a 1e-6 nudge
    return rng.permutation(np.prod(shape)).reshape(shape) * 0.05 + rng.uniform(0, 0.01, shape) - 1.0


CASES = {
    "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: a + b),
    "sub": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))], lambda a, b: a - b),
    "mul": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))], lambda a, b: a * b),
    "div": (lambda r: [r.normal(size=(2, 3)), r.uniform(0.5, 2.0, (3,))], lambda a, b: a / b),
    "neg": (lambda r: [r.normal(size=(5,))], lambda a: -a),
    "power": (lambda r: [r.uniform(0.5, 2, (4,))], lambda a: ad.power(a, 2.5)),
    "square": (lambda r: [r.normal(size=(4, 2))], ad.square),
    "exp": (lambda r: [r.normal(size=(4,))], ad.exp),
    "log": (lambda r: [r.uniform(0.3, 3, (4,))], ad.log),
    "sqrt": (lambda r: [r.uniform(0.3, 3, (4,))], ad.sqrt),
    "tanh": (lambda r: [r.normal(size=(3, 3))], ad.tanh),
    "relu": (lambda r: [_away_from(r.normal(size=(6,)), [0.0])], ad.relu),
    "gelu": (lambda r: [r.normal(scale=2, size=(3, 4))], ad.gelu),
    "minimum": (lambda r: [_spread(r, (6,)), _spread(r, (6,)) + 0.013], ad.minimum),
    "clip": (lambda r: [_away_from(r.normal(size=(8,)), [-0.5, 0.5])], lambda a: ad.clip(a, -0.5, 0.5)),
    "reshape": (lambda r: [r.normal(size=(2, 6))], lambda a: ad.reshape(a, (3, 4))),
    "broadcast_to": (lambda r: [r.normal(size=(1, 3))], lambda a: ad.broadcast_to(a, (4, 3))),
    "transpose": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: ad.transpose(a, (2, 0, 1))),
    "index": (lambda r: [r.normal(size=(5, 3))], lambda a: ad.index(a, (np.array([0, 2, 2, 4]), np.array([1, 0, 0, 2])))),
    "concat": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))], lambda a, b: ad.concat([a, b], axis=1)),
    "sum": (lambda r: [r.normal(size=(3, 4))], lambda a: ad.tsum(a, axis=0)),
    "mean": (lambda r: [r.normal(size=(3, 4))], lambda a: ad.mean(a, axis=1, keepdims=True)),
    "max_pool_points": (lambda r: [_spread(r, (2, 5, 3))], ad.max_pool_points),
    "matmul": (lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))], ad.matmul),
    "log_softmax": (lambda r: [r.normal(size=(3, 5))], ad.log_softmax),
    "softmax_cross_entropy": (lambda r: [r.normal(size=(4, 5))],
                              lambda a: ad.softmax_cross_entropy(a, np.array([0, 3, 1, 4]))),
    "mse": (lambda r: [r.normal(size=(3, 2)), r.normal(size=(3, 2))], ad.mse),
    "l2_normalize": (lambda r: [r.normal(size=(3, 4))], ad.l2_normalize),
    "cosine_similarity": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4))], ad.cosine_similarity),
    "gaussian_log_prob": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 4)), r.normal(scale=0.3, size=(4,))],
                          ad.gaussian_log_prob),
    "gaussian_entropy": (lambda r: [r.normal(size=(4,))], ad.gaussian_entropy),
    "batch_norm": (lambda r: [r.normal(size=(6, 3)), r.normal(size=(3,)), r.normal(size=(3,))], ad.batch_norm),
    "chamfer_loss": (lambda r: [_spread(r, (2, 6, 3))],
                     lambda a: chamfer_loss(a, np.random.default_rng(99).normal(size=(2, 7, 3)))),
}


def check(name: str, seed: int) -> float:
    """Worst relative error over the case's inputs (tape vs central differences)."""
    make, fn = CASES[name]
    rng = np.random.default_rng(seed)
    arrays = [np.asarray(a, dtype=np.float64) for a in make(rng)]
    with ad.precision(np.float64):
        out_shape = fn(*[ad.Tensor(a) for a in arrays]).shape
        weights = rng.normal(size=out_shape)

        def loss_of(arrs):
            return float((fn(*[ad.Tensor(a) for a in arrs]).data * weights).sum())

        params = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
        ad.tsum(fn(*params) * ad.Tensor(weights)).backward()
        worst = 0.0
        for k, p in enumerate(params):
            def f(x, k=k):
                arrs = list(arrays)
                arrs[k] = x
                return loss_of(arrs)
            num = numeric_grad(f, arrays[k].copy(), eps=1e-6)
            ana = np.zeros_like(num) if p.grad is None else p.grad
            denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-10)
            worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst
