"""Proximal policy optimization with the clipped surrogate objective."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch

from ..policy import PolicyNet, backward


CREDIT_MODES = ("joint", "per_vnf")


@dataclass
class PpoConfig:
    epochs: int = 25
    learning_rate: float = 4e-4
    entropy_coef: float = 1e-2  # c_2
    value_coef: float = 1.0  # c_1
    clip: float = 0.2
    n_envs: int = 32
    gamma: float = 0.99
    minibatch_episodes: int = 0  # 0 = one full-batch step per epoch
    normalize_advantage: bool = True
    max_grad_norm: float = 0.5
    normalize_value_target: bool = True
    credit: str = "joint"  # "joint": one return for the whole action; "per_vnf": one per head

    def validate(self) -> None:
        if self.epochs < 1 or self.n_envs < 1 or self.minibatch_episodes < 0:
            raise ValueError("epochs and n_envs must be >= 1; minibatch_episodes >= 0")
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.learning_rate <= 0 or self.entropy_coef < 0 or self.value_coef < 0:
            raise ValueError("learning_rate must be > 0; coefficients must be >= 0")
        if self.credit not in CREDIT_MODES:
            raise ValueError(f"credit must be one of {CREDIT_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """R(t) = r(t) + gamma R(t+1), with R(T) = 0; works along the last axis."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        acc = rewards[..., t] + gamma * acc
        out[..., t] = acc
    return out


def compute_advantage(returns: np.ndarray, values: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Monte-Carlo return minus the value baseline, optionally standardized over the batch."""
    adv = np.asarray(returns, dtype=float) - np.asarray(values, dtype=float)
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


class ReturnNormalizer:
    """Running mean/std of discounted returns; the value head regresses the standardized target."""

    def __init__(self, mean: float = 0.0, var: float = 1.0, count: float = 0.0):
        self.mean, self.var, self.count = float(mean), float(var), float(count)

    @property
    def std(self) -> float:
        return float(np.sqrt(max(self.var, 1e-8)))

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).ravel()
        if x.size == 0:
            return
        b_mean, b_var, b_n = x.mean(), x.var(), x.size
        if self.count == 0:
            self.mean, self.var, self.count = float(b_mean), float(b_var), float(b_n)
            return
        tot = self.count + b_n
        delta = b_mean - self.mean
        m2 = self.var * self.count + b_var * b_n + delta**2 * self.count * b_n / tot
        self.mean, self.var, self.count = float(self.mean + delta * b_n / tot), float(m2 / tot), float(tot)

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=float) * self.std + self.mean

    def state_dict(self) -> dict:
        return {"mean": self.mean, "var": self.var, "count": self.count}


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, clip: float) -> tuple:
    unclipped = ratio * adv
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv
    return torch.min(unclipped, clipped), unclipped


def ppo_loss(net: PolicyNet, obs: torch.Tensor, actions: torch.Tensor, old_logp: torch.Tensor,
             adv: torch.Tensor, returns: torch.Tensor, cfg: PpoConfig) -> tuple:
    """Negated composite objective: mean(clipped surrogate - value_coef * value error + entropy_coef * entropy).

    With joint credit ``old_logp``/``adv``/``returns`` are (B, T) and the ratio is the
    joint one. With per-VNF credit they are (B, T, V): each head gets its own ratio,
    clip and value error, summed over heads.
    """
    out = net(obs)
    if adv.dim() == 3:
        logp = out.dist.log_probs.gather(-1, actions.long().unsqueeze(-1)).squeeze(-1)
    else:
        logp = out.dist.log_prob(actions)
    ratio = torch.exp(logp - old_logp)
    surr, unclipped = clipped_surrogate(ratio, adv, cfg.clip)
    value_err = (returns - out.value) ** 2
    if adv.dim() == 3:
        surr_t, value_t = surr.sum(-1), value_err.sum(-1)
    else:
        surr_t, value_t = surr, value_err
    entropy = out.dist.entropy()
    objective = (surr_t - cfg.value_coef * value_t + cfg.entropy_coef * entropy).mean()
    stats = {
        "surrogate": surr.mean().item(),
        "value_loss": value_err.mean().item(),
        "entropy": entropy.mean().item(),
        "clip_frac": ((ratio - 1).abs() > cfg.clip).double().mean().item(),
        "clip_excess": int((surr > unclipped + 1e-12).sum().item()),
    }
    return -objective, stats


def batch_tensors(trajs: list, gamma: float, normalize: bool, dtype=torch.float32,
                  scaler: ReturnNormalizer | None = None, credit: str = "joint") -> dict:
    """Stack trajectories; with ``scaler`` the stored values are in standardized units.

    The advantage uses the statistics in force at collection time; the scaler is then
    updated and the value target expressed with the new statistics.
    """
    obs = np.stack([tr.obs[:-1] for tr in trajs])
    values = np.stack([tr.values for tr in trajs])
    if credit == "per_vnf":
        rewards = np.stack([tr.vnf_rewards for tr in trajs])  # (B, T, V)
        returns = discounted_returns(rewards.swapaxes(1, 2), gamma).swapaxes(1, 2)
    else:
        rewards = np.stack([tr.rewards for tr in trajs])
        returns = discounted_returns(rewards, gamma)
    if values.shape != returns.shape:
        raise ValueError(f"value estimates {values.shape} do not match returns {returns.shape}; "
                         "per-VNF credit needs a network with one value output per head")
    if scaler is not None:
        adv = compute_advantage(returns, scaler.denormalize(values) if scaler.count else values, normalize)
        scaler.update(returns)
        returns = scaler.normalize(returns)
    else:
        adv = compute_advantage(returns, values, normalize)
    return {
        "obs": torch.as_tensor(obs, dtype=dtype),
        "actions": torch.as_tensor(np.stack([tr.actions for tr in trajs])),
        "old_logp": torch.as_tensor(np.stack([tr.logp for tr in trajs]), dtype=dtype),
        "adv": torch.as_tensor(adv, dtype=dtype),
        "returns": torch.as_tensor(returns, dtype=dtype),
    }


def ppo_update(net: PolicyNet, optimizer: torch.optim.Optimizer, trajs: list, cfg: PpoConfig,
               rng: np.random.Generator, scaler: ReturnNormalizer | None = None) -> dict:
    """Run ``cfg.epochs`` passes of minibatch ascent on the clipped objective."""
    dtype = next(net.parameters()).dtype
    data = batch_tensors(trajs, cfg.gamma, cfg.normalize_advantage, dtype, scaler, cfg.credit)
    n = len(trajs)
    net.eval()
    with torch.no_grad():
        start = net(data["obs"])
        ratio0 = torch.exp(start.dist.log_prob(data["actions"]) - data["old_logp"])
        if cfg.credit == "per_vnf":
            # per-head log-probs at theta_old; their sum is the stored joint log-prob
            data["old_logp"] = start.dist.log_probs.gather(-1, data["actions"].unsqueeze(-1)).squeeze(-1)
    report = {"ratio0_max_dev": float((ratio0 - 1).abs().max()), "clip_excess": 0}
    net.train()
    totals = {"loss": 0.0, "surrogate": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0}
    steps = 0
    params = [p for p in net.parameters()]
    mb = cfg.minibatch_episodes or n
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, mb):
            idx = torch.as_tensor(order[lo:lo + mb])
            loss, stats = ppo_loss(net, data["obs"][idx], data["actions"][idx], data["old_logp"][idx],
                                   data["adv"][idx], data["returns"][idx], cfg)
            grad = backward(loss, params)
            optimizer.zero_grad()
            offset = 0
            for p in params:
                k = p.numel()
                p.grad = grad[offset:offset + k].view_as(p).clone()
                offset += k
            if cfg.max_grad_norm > 0:
                torch.nn.utils.clip_grad_norm_(params, cfg.max_grad_norm)
            optimizer.step()
            steps += 1
            totals["loss"] += loss.item()
            for k in ("surrogate", "value_loss", "entropy", "clip_frac"):
                totals[k] += stats[k]
            report["clip_excess"] += stats["clip_excess"]
    net.eval()
    net.version += 1
    report.update({k: v / max(steps, 1) for k, v in totals.items()})
    report["grad_steps"] = steps
    return report
