"""scikit-learn style wrapper around the training loop.

``fit`` trains on an environment configuration rather than a data matrix; the
data-facing methods map observation sequences to per-VNF decisions.
"""
from __future__ import annotations

import dataclasses

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .env import EnvConfig
from .metrics import evaluate
from .policy import NetRolloutPolicy
from .trainers.loop import AgentConfig, RunSettings, train
from .trainers.ppo import PpoConfig
from .trainers.sac import SacConfig


class RecoveryAgent(BaseEstimator):
    """Recurrent PPO or SAC recovery orchestrator.

    Parameters mirror the agent and run sections of the configuration file;
    anything not listed keeps its default.
    """

    def __init__(self, kind="ppo", architecture="hybrid", gamma=0.99, iterations=200, learning_rate=None,
                 epochs=25, n_envs=None, credit="joint", eval_every=50, eval_episodes=50, master_seed=0,
                 stop_when=None, env_config=None, output_dir=None):
        self.kind = kind
        self.architecture = architecture
        self.gamma = gamma
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.n_envs = n_envs
        self.credit = credit
        self.eval_every = eval_every
        self.eval_episodes = eval_episodes
        self.master_seed = master_seed
        self.stop_when = stop_when
        self.env_config = env_config
        self.output_dir = output_dir

    def _agent_config(self) -> AgentConfig:
        ppo, sac = PpoConfig(), SacConfig()
        common = {"gamma": self.gamma, "epochs": self.epochs}
        if self.learning_rate is not None:
            common["learning_rate"] = self.learning_rate
        if self.n_envs is not None:
            common["n_envs"] = self.n_envs
        ppo = dataclasses.replace(ppo, credit=self.credit, **common)
        sac = dataclasses.replace(sac, **common)
        return AgentConfig(kind=self.kind, architecture=self.architecture, ppo=ppo, sac=sac)

    def fit(self, X=None, y=None):
        """Train. ``X`` may be an :class:`EnvConfig`; otherwise ``env_config`` or the defaults are used."""
        env_cfg = X if isinstance(X, EnvConfig) else (self.env_config or EnvConfig())
        run = RunSettings(iterations=self.iterations, eval_every=self.eval_every, eval_episodes=self.eval_episodes,
                          robustness_every=max(self.iterations, 1) * 10, checkpoint_every=max(self.eval_every, 1),
                          master_seed=self.master_seed, stop_when=dict(self.stop_when or {}))
        result = train(env_cfg, self._agent_config(), run, out_dir=self.output_dir)
        self.net_ = result.net
        self.history_ = result.rows
        self.n_iter_ = result.iterations_done
        self.env_config_ = env_cfg
        self.schema_hash_ = env_cfg.schema().hash
        self.n_features_in_ = env_cfg.schema().width
        return self

    def _logits(self, X) -> tuple:
        check_is_fitted(self, "net_")
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 2
        if squeeze:
            X = X[:, None, :]
        if X.ndim != 3 or X.shape[-1] != self.n_features_in_:
            raise ValueError(f"expected observations of width {self.n_features_in_} shaped (n, W) or (n, T, W), "
                             f"got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("observations contain NaN or infinity")
        dtype = next(self.net_.parameters()).dtype
        with torch.no_grad():
            out = self.net_(torch.as_tensor(X, dtype=dtype))
        return out.dist, squeeze

    def predict(self, X) -> np.ndarray:
        """Greedy action per VNF; ``X`` is (n, W) single slots or (n, T, W) sequences from episode start."""
        dist, squeeze = self._logits(X)
        a = dist.mode().numpy()
        return a[:, 0] if squeeze else a

    def predict_proba(self, X) -> np.ndarray:
        """Per-VNF action probabilities, last axis over NoOp/BP/BR/SS."""
        dist, squeeze = self._logits(X)
        p = dist.probs.numpy()
        return p[:, 0] if squeeze else p

    def score(self, X=None, y=None, episodes: int = 50, seed: int = 0) -> float:
        """Greedy critical-state accuracy over seeded evaluation episodes."""
        check_is_fitted(self, "net_")
        env_cfg = X if isinstance(X, EnvConfig) else self.env_config_
        rep = evaluate(NetRolloutPolicy(self.net_), env_cfg, episodes, seed=seed, schema_hash=self.schema_hash_)
        return float(rep.csa) if rep.csa is not None else float("nan")
