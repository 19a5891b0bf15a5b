"""Rollout collection, PPO, discrete SAC and the shared training loop."""
from .loop import AgentConfig, RunSettings, TrainResult, build_net, train
from .ppo import PpoConfig, ReturnNormalizer, compute_advantage, discounted_returns, ppo_loss, ppo_update
from .rollout import EnvPool, Trajectory, episode_seeds
from .sac import EpisodeReplay, ReplayUnderflow, SacConfig, SacLearner, sac_update

__all__ = ["AgentConfig", "RunSettings", "TrainResult", "build_net", "train", "PpoConfig", "ReturnNormalizer",
           "compute_advantage", "discounted_returns", "ppo_loss", "ppo_update", "EnvPool", "Trajectory",
           "episode_seeds", "EpisodeReplay", "ReplayUnderflow", "SacConfig", "SacLearner", "sac_update"]
