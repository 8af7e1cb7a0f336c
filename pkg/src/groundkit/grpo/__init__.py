"""GRPO and SFT objectives on a factorized toy grounding policy."""

from groundkit.grpo.objectives import (
    GroupTooSmall,
    NonFiniteLoss,
    Rollout,
    RolloutGroup,
    grpo_loss,
    normalize_advantages,
    policy_grad,
    reward,
    sample_rollouts,
    sft_loss,
)
from groundkit.grpo.policy import ToyPolicy
from groundkit.grpo.scenes import ConfigError, SceneConfig, SyntheticScene, gen_scenes
from groundkit.grpo.train import TrainConfig, parse_regime, train_toy

__all__ = [
    "ConfigError", "GroupTooSmall", "NonFiniteLoss", "Rollout", "RolloutGroup", "SceneConfig",
    "SyntheticScene", "ToyPolicy", "TrainConfig", "gen_scenes", "grpo_loss", "normalize_advantages",
    "parse_regime", "policy_grad", "reward", "sample_rollouts", "sft_loss", "train_toy",
]
