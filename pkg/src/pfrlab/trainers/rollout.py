"""Lock-step episode collection over a pool of independently seeded environments."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from ..env import EnvConfig, RecoveryEnv, RewardBreakdown


class RolloutPolicy(Protocol):
    def begin(self, n_envs: int) -> None: ...

    def act(self, obs: np.ndarray, envs: Sequence[RecoveryEnv], rng: np.random.Generator,
            greedy: bool = False) -> tuple: ...


@dataclass
class Trajectory:
    obs: np.ndarray  # (T + 1, W), last row is the observation after the final step
    actions: np.ndarray  # (T, V)
    logp: np.ndarray  # (T,) joint log-prob at collection time
    values: np.ndarray  # (T,) or (T, V) for a per-VNF value output
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,)
    vnf_rewards: Optional[np.ndarray] = None  # (T, V), sums to ``rewards`` along the last axis
    breakdowns: list = field(default_factory=list)
    infos: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


class EnvPool:
    """``n`` environments sharing one config; stepped together so the policy can batch."""

    def __init__(self, config: EnvConfig, n_envs: int, workers: int = 1):
        if n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        self.config = config
        self.envs = [RecoveryEnv(config) for _ in range(n_envs)]
        self.workers = max(1, int(workers))

    def __len__(self) -> int:
        return len(self.envs)

    def _map(self, fn, items):
        if self.workers == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.workers) as ex:
            return list(ex.map(fn, items))

    def run(self, policy: RolloutPolicy, seeds: Sequence[int], rng: np.random.Generator,
            greedy: bool = False, keep_infos: bool = True) -> list:
        """One full episode per environment; results are ordered by environment index."""
        if len(seeds) != len(self.envs):
            raise ValueError(f"need one seed per environment ({len(self.envs)}), got {len(seeds)}")
        n = len(self.envs)
        T = self.config.episode_length
        outs = self._map(lambda i: self.envs[i].reset(int(seeds[i])), range(n))
        headers = [env.episode_header() for env in self.envs]
        W = outs[0].observation.shape[0]
        V = self.envs[0].n_vnfs
        obs = np.zeros((n, T + 1, W))
        acts = np.zeros((n, T, V), dtype=np.int64)
        logp = np.zeros((n, T))
        vals = None
        rews = np.zeros((n, T))
        vrews = np.zeros((n, T, V))
        dones = np.zeros((n, T), dtype=bool)
        breakdowns = [[] for _ in range(n)]
        infos = [[] for _ in range(n)]
        for i, o in enumerate(outs):
            obs[i, 0] = o.observation
        policy.begin(n)
        for t in range(T):
            a, lp, v = policy.act(obs[:, t], self.envs, rng, greedy)
            v = np.asarray(v, dtype=float)
            if vals is None:
                vals = np.zeros((n, T) + v.shape[1:])
            acts[:, t], logp[:, t], vals[:, t] = a, lp, v
            try:
                outs = self._map(lambda i: self.envs[i].step(a[i]), range(n))
            except Exception as exc:
                raise RuntimeError(f"environment failure at slot {t} (seeds {list(seeds)}): {exc}") from exc
            for i, o in enumerate(outs):
                obs[i, t + 1] = o.observation
                rews[i, t] = o.reward.total
                vrews[i, t] = o.info["vnf_reward"]
                dones[i, t] = o.done
                breakdowns[i].append(o.reward)
                if keep_infos:
                    infos[i].append(o.info)
        return [Trajectory(obs[i], acts[i], logp[i], vals[i], rews[i], dones[i], vrews[i], breakdowns[i], infos[i],
                           headers[i]) for i in range(n)]


def episode_seeds(master_seed: int, iteration: int, n: int, stream: int = 0) -> list:
    """Deterministic per-episode seeds for (master seed, stream, iteration)."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream, iteration))
    return [int(x) for x in ss.generate_state(n, dtype=np.uint64) % (2**63)]
