"""Proactive failure recovery laboratory for stateful VNFs."""
from .env import Action, EnvConfig, RecoveryEnv, RewardConfig
from .failure import Health, TransitionConfig
from .metrics import AccuracyReport, evaluate

__version__ = "0.1.0"

__all__ = ["Action", "EnvConfig", "RecoveryEnv", "RewardConfig", "Health", "TransitionConfig", "AccuracyReport",
           "evaluate", "__version__"]
