"""scikit-learn style wrappers around the learnable components.

Only the encoder pre-training and the PPO agent follow the estimator
protocol; the simulator and data pipeline keep their plain functional API.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .assets import SplitManifest
from .evaluation import EvalSetup, evaluate_split
from .nn.layers import PointNetSpec
from .pretrain import METHODS, PretrainConfig, PointDataset
from .rl.policy import PolicySpec, stack_observations
from .rl.ppo import PPOConfig
from .rl.trainer import PPOTrainer
from .sensing import SensingConfig
from .tasks import RewardWeights, get_task


def check_point_features(X, n_features: int = 4) -> np.ndarray:
    """Validate a ``(R, N, n_features)`` batch of point features."""
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_min_samples=1)
    if X.ndim != 3 or X.shape[2] != n_features:
        raise ValueError(f"expected point features of shape (R, N, {n_features}), got {X.shape}")
    if X.shape[1] < 1:
        raise ValueError("clouds must hold at least one point")
    return X


class PointNetPretrainer(TransformerMixin, BaseEstimator):
    """Pre-train a PointNet encoder with one of the five regimes.

    ``y`` are per-point labels ``(R, N)`` for segmentation, per-cloud
    categories ``(R,)`` for classification and unused otherwise.
    ``transform`` returns the global feature; ``predict`` is available for
    the segmentation and classification regimes.
    """

    def __init__(self, method: str = "seg-dam", size: str = "small", hidden: int = 64, out_dim: int = 256,
                 epochs: int = 20, batch_size: int = 32, lr: float = 1e-3, held_out: float = 0.1,
                 random_state: int = 0):
        self.method = method
        self.size = size
        self.hidden = hidden
        self.out_dim = out_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.held_out = held_out
        self.random_state = random_state

    def _config(self) -> PretrainConfig:
        return PretrainConfig(encoder=PointNetSpec(self.size, self.hidden, self.out_dim), epochs=self.epochs,
                              batch_size=self.batch_size, lr=self.lr, held_out=self.held_out,
                              seed=self.random_state)

    def fit(self, X, y=None):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {sorted(METHODS)}, got {self.method!r}")
        X = check_point_features(X)
        r, n, _ = X.shape
        kind, trainer = METHODS[self.method]
        labels = np.ones((r, n), dtype=np.uint8)
        category = np.full(r, -1)
        if self.method.startswith("seg"):
            if y is None:
                raise ValueError("segmentation needs per-point labels")
            labels = check_array(y, dtype=np.uint8).reshape(r, n)
        elif self.method.startswith("cls"):
            if y is None:
                raise ValueError("classification needs per-cloud categories")
            category = np.asarray(y).reshape(-1).astype(int)
            if len(category) != r:
                raise ValueError("need one category per cloud")
        data = PointDataset(X, labels, category, [f"r{i}" for i in range(r)], kind)
        kw = {"n_classes": int(category.max()) + 1} if self.method.startswith("cls") else {}
        result = trainer(data, self._config(), **kw)
        self.result_ = result
        self.model_ = result.model
        self.history_ = result.metrics
        self.n_features_in_ = 4
        return self

    def encoder_state(self) -> dict[str, np.ndarray]:
        check_is_fitted(self, "result_")
        return self.result_.encoder_state()

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.encoder(check_point_features(X))[1].data

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_point_features(X)
        if self.method.startswith("seg") or self.method.startswith("cls"):
            return self.model_(X).data.argmax(-1)
        raise AttributeError(f"{self.method} has no predict; use transform")

    def save(self, path):
        check_is_fitted(self, "result_")
        return self.result_.save(path)


class PPOAgent(BaseEstimator):
    """PPO policy for one task; ``fit`` takes a split manifest.

    ``predict`` maps observations to deterministic (mean) actions and
    ``score`` returns the success rate on a manifest split.
    """

    def __init__(self, task: str = "laptop", size: str = "small", hidden: int = 32, out_dim: int = 64,
                 n_observed: int = 64, n_imagined: int = 32, resolution: int = 48, episode_horizon: int = 100,
                 total_steps: int = 40_000, n_envs: int = 8, rollout_horizon: int = 100, epochs: int = 4,
                 minibatch_size: int = 200, lr: float = 1e-3, camera_blind: bool = False,
                 encoder_state: dict | None = None, random_state: int = 0):
        self.task = task
        self.size = size
        self.hidden = hidden
        self.out_dim = out_dim
        self.n_observed = n_observed
        self.n_imagined = n_imagined
        self.resolution = resolution
        self.episode_horizon = episode_horizon
        self.total_steps = total_steps
        self.n_envs = n_envs
        self.rollout_horizon = rollout_horizon
        self.epochs = epochs
        self.minibatch_size = minibatch_size
        self.lr = lr
        self.camera_blind = camera_blind
        self.encoder_state = encoder_state
        self.random_state = random_state

    def _sensing(self) -> SensingConfig:
        return SensingConfig(n_observed=self.n_observed, n_imagined=self.n_imagined, width=self.resolution,
                             height=self.resolution)

    def fit(self, X: SplitManifest, y=None, stop=None):
        if not isinstance(X, SplitManifest):
            raise TypeError("PPOAgent.fit expects a SplitManifest")
        spec = get_task(self.task)
        if X.category != spec.category:
            raise ValueError(f"manifest category {X.category!r} does not match task {self.task!r}")
        hidden = max(2 * self.out_dim, 64)
        pspec = PolicySpec(encoder=PointNetSpec(self.size, self.hidden, self.out_dim), proprio_hidden=hidden // 2,
                           proprio_out=hidden // 2, head_hidden=hidden, camera_blind=self.camera_blind)
        ppo = PPOConfig(horizon=self.rollout_horizon, n_envs=self.n_envs, epochs=self.epochs,
                        minibatch_size=self.minibatch_size, lr=self.lr, total_steps=self.total_steps)
        self.trainer_ = PPOTrainer(spec, X.instances("seen"), policy_spec=pspec, ppo=ppo, sensing=self._sensing(),
                                   weights=RewardWeights(), episode_horizon=self.episode_horizon,
                                   seed=self.random_state, encoder_state=self.encoder_state)
        self.trainer_.train(self.total_steps, stop=stop)
        self.policy_ = self.trainer_.policy
        self.log_ = self.trainer_.log
        return self

    def predict(self, X):
        """Mean actions for a list of observations, clamped to ``[-1, 1]``."""
        check_is_fitted(self, "policy_")
        pts, pro = stack_observations(list(X))
        _, _, _, mean = self.policy_.act(pts, pro, deterministic=True)
        return np.clip(mean, -1.0, 1.0)

    def score(self, X: SplitManifest, y=None, split: str = "seen", n_episodes: int = 20, seed: int = 0) -> float:
        check_is_fitted(self, "policy_")
        setup = EvalSetup(get_task(self.task), self._sensing(), episode_horizon=self.episode_horizon,
                          n_envs=min(10, n_episodes))
        return evaluate_split(self.policy_, setup, X, split, n_episodes, seed).success_rate
