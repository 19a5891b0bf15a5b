"""Discrete-action soft actor-critic over factored per-VNF categorical heads.

Twin soft-Q heads share the recurrent trunk with the actor. The joint Q of a
multi-VNF action is the sum of per-head components, and the soft state value
factorizes the same way, so every expectation stays a sum of small softmaxes.
The actor loss reads detached trunk features; the trunk is shaped by the critic.
"""
from __future__ import annotations

import copy
import math
import threading
from dataclasses import dataclass, asdict

import numpy as np
import torch

from ..policy import PolicyNet, backward


@dataclass
class SacConfig:
    epochs: int = 25
    learning_rate: float = 3e-4
    reward_scale: float = 1.0
    target_period: int = 1
    tau: float = 5e-3
    replay_capacity: int = 2000  # whole episodes
    temperature_mode: str = "auto"  # "auto" or "fixed"
    initial_temperature: float = 1.0
    target_entropy_ratio: float = 0.5  # fraction of the uniform-policy entropy
    n_envs: int = 16
    batch_episodes: int = 16
    gamma: float = 0.99
    max_grad_norm: float = 10.0

    def validate(self) -> None:
        if self.epochs < 1 or self.n_envs < 1 or self.batch_episodes < 1 or self.target_period < 1:
            raise ValueError("epochs, n_envs, batch_episodes and target_period must be >= 1")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.replay_capacity < self.batch_episodes:
            raise ValueError("replay_capacity must hold at least one batch")
        if self.temperature_mode not in ("auto", "fixed"):
            raise ValueError("temperature_mode must be 'auto' or 'fixed'")
        if self.initial_temperature <= 0 or self.learning_rate <= 0 or self.reward_scale <= 0:
            raise ValueError("initial_temperature, learning_rate and reward_scale must be > 0")
        if not 0 <= self.target_entropy_ratio <= 1 or not 0 <= self.gamma <= 1:
            raise ValueError("target_entropy_ratio and gamma must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


class ReplayUnderflow(RuntimeError):
    pass


class EpisodeReplay:
    """Ring buffer of whole episodes; sampling is a pure function of the supplied generator."""

    def __init__(self, capacity: int, obs_width: int, n_heads: int, horizon: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, horizon + 1, obs_width), dtype=np.float32)
        self.actions = np.zeros((capacity, horizon, n_heads), dtype=np.int64)
        self.rewards = np.zeros((capacity, horizon))
        self.dones = np.zeros((capacity, horizon), dtype=bool)
        self.size = 0
        self.cursor = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self.size

    def add(self, trajs) -> None:
        with self._lock:
            for tr in trajs:
                i = self.cursor
                self.obs[i], self.actions[i] = tr.obs, tr.actions
                self.rewards[i], self.dones[i] = tr.rewards, tr.dones
                self.cursor = (i + 1) % self.capacity
                self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        with self._lock:
            if self.size < batch:
                raise ReplayUnderflow(f"replay holds {self.size} episodes, batch needs {batch}")
            idx = np.sort(rng.choice(self.size, size=batch, replace=False))
            return {"idx": idx, "obs": self.obs[idx].copy(), "actions": self.actions[idx].copy(),
                    "rewards": self.rewards[idx].copy(), "dones": self.dones[idx].copy()}

    def state_dict(self) -> dict:
        return {"obs": self.obs[:self.size], "actions": self.actions[:self.size], "rewards": self.rewards[:self.size],
                "dones": self.dones[:self.size], "cursor": self.cursor}

    def load_state_dict(self, d: dict) -> None:
        n = len(d["obs"])
        self.obs[:n], self.actions[:n] = d["obs"], d["actions"]
        self.rewards[:n], self.dones[:n] = d["rewards"], d["dones"]
        self.size, self.cursor = n, int(d["cursor"])


def batch_to_tensors(batch: dict, dtype) -> dict:
    return {"obs": torch.as_tensor(batch["obs"], dtype=dtype), "actions": torch.as_tensor(batch["actions"]),
            "rewards": torch.as_tensor(batch["rewards"], dtype=dtype),
            "dones": torch.as_tensor(batch["dones"], dtype=dtype)}


def joint_q(q: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """q: (B, T, K, V, A), actions: (B, T, V) -> (B, T, K) summed over heads."""
    idx = actions.long().unsqueeze(-2).unsqueeze(-1).expand(*q.shape[:-1], 1)
    return q.gather(-1, idx).squeeze(-1).sum(-1)


def soft_value(q_min: torch.Tensor, log_probs: torch.Tensor, alpha) -> torch.Tensor:
    """Sum over heads of E_pi[Q - alpha log pi]; inputs are (..., V, A)."""
    return (log_probs.exp() * (q_min - alpha * log_probs)).sum(-1).sum(-1)


def polyak_update(target: torch.nn.Module, online: torch.nn.Module, tau: float) -> None:
    with torch.no_grad():
        for t, o in zip(target.parameters(), online.parameters()):
            t.mul_(1.0 - tau).add_(o, alpha=tau)


@torch.no_grad()
def bellman_target(net: PolicyNet, target: PolicyNet, data: dict, alpha: float, cfg: SacConfig) -> torch.Tensor:
    """Soft target: target-net twin minimum at t+1 weighted by the online policy. No gradient."""
    next_lp = net(data["obs"]).dist.log_probs[:, 1:]
    v_next = soft_value(target(data["obs"]).q[:, 1:].min(dim=2).values, next_lp, alpha)
    return cfg.reward_scale * data["rewards"] + cfg.gamma * (1.0 - data["dones"]) * v_next


def critic_loss(net: PolicyNet, target: PolicyNet, data: dict, alpha: float, cfg: SacConfig,
                y: torch.Tensor | None = None) -> tuple:
    """Mean squared soft Bellman error over both Q heads; ``y`` overrides the computed target."""
    T = data["actions"].shape[1]
    if y is None:
        y = bellman_target(net, target, data, alpha, cfg)
    out = net(data["obs"])
    q_taken = joint_q(out.q[:, :T], data["actions"])  # (B, T, 2)
    err = (q_taken - y.unsqueeze(-1)) ** 2
    return err.mean(), {"q_loss": err.mean().item(), "q_mean": q_taken.mean().item()}


def actor_loss(net: PolicyNet, data: dict, alpha: float) -> tuple:
    """E_s[ sum_v KL(pi_v || softmax(Q_v / alpha)) ] up to a constant, on detached features."""
    T = data["actions"].shape[1]
    with torch.no_grad():
        feats, _ = net.trunk(data["obs"][:, :T])
    logits, _, q = net.heads(feats)
    log_probs = torch.log_softmax(logits, dim=-1)
    q_min = q.min(dim=2).values.detach()
    loss = (log_probs.exp() * (alpha * log_probs - q_min)).sum(-1).sum(-1).mean()
    entropy = -(log_probs.exp() * log_probs).sum(-1).sum(-1)
    return loss, {"actor_loss": loss.item(), "entropy": entropy.mean().item(), "_entropy": entropy.detach()}


class SacLearner:
    """Online net, target net, optimizers and temperature; one instance per run."""

    def __init__(self, net: PolicyNet, cfg: SacConfig):
        if net.spec.q_heads < 2:
            raise ValueError("SAC needs a network built with q_heads >= 2")
        cfg.validate()
        self.net, self.cfg = net, cfg
        self.target = copy.deepcopy(net)
        for p in self.target.parameters():
            p.requires_grad_(False)
        actor_params = list(net.policy_head.parameters())
        actor_ids = {id(p) for p in actor_params}
        self.critic_params = [p for p in net.parameters() if id(p) not in actor_ids]
        self.actor_params = actor_params
        self.opt_critic = torch.optim.Adam(self.critic_params, lr=cfg.learning_rate)
        self.opt_actor = torch.optim.Adam(self.actor_params, lr=cfg.learning_rate)
        self.log_alpha = torch.tensor(math.log(cfg.initial_temperature), dtype=torch.float64, requires_grad=True)
        self.opt_alpha = torch.optim.Adam([self.log_alpha], lr=cfg.learning_rate)
        self.target_entropy = cfg.target_entropy_ratio * net.spec.n_heads * math.log(net.spec.n_actions)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.detach().exp())

    def _apply(self, loss, params, opt) -> None:
        grad = backward(loss, params)
        opt.zero_grad()
        offset = 0
        for p in params:
            k = p.numel()
            p.grad = grad[offset:offset + k].view_as(p).clone()
            offset += k
        if self.cfg.max_grad_norm > 0:
            torch.nn.utils.clip_grad_norm_(params, self.cfg.max_grad_norm)
        opt.step()

    def step(self, batch: dict) -> dict:
        dtype = next(self.net.parameters()).dtype
        data = batch_to_tensors(batch, dtype)
        self.net.train()
        alpha = self.alpha
        q_loss, stats = critic_loss(self.net, self.target, data, alpha, self.cfg)
        self._apply(q_loss, self.critic_params, self.opt_critic)
        a_loss, a_stats = actor_loss(self.net, data, alpha)
        self._apply(a_loss, self.actor_params, self.opt_actor)
        if self.cfg.temperature_mode == "auto":
            gap = (a_stats.pop("_entropy") - self.target_entropy).mean().double()
            t_loss = self.log_alpha * gap
            self.opt_alpha.zero_grad()
            t_loss.backward()
            self.opt_alpha.step()
        else:
            a_stats.pop("_entropy")
        self.updates += 1
        if self.updates % self.cfg.target_period == 0:
            polyak_update(self.target, self.net, self.cfg.tau)
        self.net.eval()
        stats.update(a_stats)
        stats["alpha"] = self.alpha
        return stats

    def state_dict(self) -> dict:
        return {"target": self.target.state_dict(), "opt_critic": self.opt_critic.state_dict(),
                "opt_actor": self.opt_actor.state_dict(), "opt_alpha": self.opt_alpha.state_dict(),
                "log_alpha": float(self.log_alpha.detach()), "updates": self.updates}

    def load_state_dict(self, d: dict) -> None:
        self.target.load_state_dict(d["target"])
        self.opt_critic.load_state_dict(d["opt_critic"])
        self.opt_actor.load_state_dict(d["opt_actor"])
        self.opt_alpha.load_state_dict(d["opt_alpha"])
        with torch.no_grad():
            self.log_alpha.fill_(d["log_alpha"])
        self.updates = int(d["updates"])


def sac_update(learner: SacLearner, replay: EpisodeReplay, rng: np.random.Generator) -> dict:
    """``cfg.epochs`` gradient steps, each on a fresh replay sample."""
    cfg = learner.cfg
    totals: dict = {}
    for _ in range(cfg.epochs):
        stats = learner.step(replay.sample(cfg.batch_episodes, rng))
        for k, v in stats.items():
            totals[k] = totals.get(k, 0.0) + v
    learner.net.version += 1
    report = {k: v / cfg.epochs for k, v in totals.items()}
    report["grad_steps"] = cfg.epochs
    return report
