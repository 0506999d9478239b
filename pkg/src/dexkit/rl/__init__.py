"""On-policy RL: actor-critic policy, PPO with GAE, training driver."""

from .policy import ActorCritic, PolicyOutput, PolicySpec, gaussian_log_prob_np, stack_observations
from .ppo import (
    EvalResult,
    PPOConfig,
    RolloutBuffer,
    UpdateStats,
    VectorEnv,
    collect_rollouts,
    compute_gae,
    evaluate_policy,
    normalize_advantages,
    ppo_loss,
    ppo_update,
)
from .trainer import LOG_FIELDS, PPOTrainer

__all__ = [
    "ActorCritic", "PolicyOutput", "PolicySpec", "gaussian_log_prob_np", "stack_observations",
    "EvalResult", "PPOConfig", "RolloutBuffer", "UpdateStats", "VectorEnv", "collect_rollouts",
    "compute_gae", "evaluate_policy", "normalize_advantages", "ppo_loss", "ppo_update",
    "LOG_FIELDS", "PPOTrainer",
]
