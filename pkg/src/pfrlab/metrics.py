"""Decision-accuracy metrics, evaluation protocol and reference baseline policies."""
from __future__ import annotations

import dataclasses
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import Action, EnvConfig, N_ACTIONS, Recovery
from .failure import Health
from .monitoring import PER_VNF_FEATURES
from .trainers.rollout import EnvPool, Trajectory

COUNT_KEYS = ("critical", "critical_correct", "warning", "warning_bp", "normal", "normal_correct",
              "pfr", "rfr", "false_alarms")


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


@dataclass
class AccuracyReport:
    """Raw counts plus the ratios derived from them. Empty denominators give ``None``."""

    counts: dict = field(default_factory=lambda: {k: 0 for k in COUNT_KEYS})
    episodes: int = 0
    mean_return: Optional[float] = None

    @property
    def csa(self):
        return _ratio(self.counts["critical_correct"], self.counts["critical"])

    @property
    def wsa(self):
        return _ratio(self.counts["warning_bp"], self.counts["warning"])

    @property
    def nsa(self):
        return _ratio(self.counts["normal_correct"], self.counts["normal"])

    @property
    def pfr_accuracy(self):
        return _ratio(self.counts["pfr"], self.counts["pfr"] + self.counts["rfr"])

    @property
    def rfr_accuracy(self):
        return _ratio(self.counts["rfr"], self.counts["pfr"] + self.counts["rfr"])

    def merge(self, other: "AccuracyReport") -> "AccuracyReport":
        counts = {k: self.counts[k] + other.counts[k] for k in COUNT_KEYS}
        return AccuracyReport(counts, self.episodes + other.episodes)

    def to_dict(self) -> dict:
        return {"csa": self.csa, "wsa": self.wsa, "nsa": self.nsa, "pfr_accuracy": self.pfr_accuracy,
                "rfr_accuracy": self.rfr_accuracy, "episodes": self.episodes, "mean_return": self.mean_return,
                "counts": dict(self.counts)}


def score_slots(infos) -> AccuracyReport:
    """Count decisions over per-slot info records (see ``RecoveryEnv.step``)."""
    c = {k: 0 for k in COUNT_KEYS}
    for info in infos:
        for k, a, b, has_backup, rec, critical in zip(info["true_kind"], info["action"], info["switched"],
                                                      info["has_backup"], info["recovery"], info["critical"]):
            if k == Health.CRITICAL:
                c["critical"] += 1
                c["critical_correct"] += b
            elif k == Health.WARNING:
                c["warning"] += 1
                c["warning_bp"] += a == Action.BP
            else:
                c["normal"] += 1
                c["normal_correct"] += a == Action.BR or (a == Action.NOOP and not has_backup)
            c["pfr"] += rec == Recovery.PFR
            c["rfr"] += rec == Recovery.RFR
            c["false_alarms"] += critical ^ b
    return AccuracyReport({k: int(v) for k, v in c.items()}, 0)


def score_episode(traj: Trajectory) -> AccuracyReport:
    rep = score_slots(traj.infos)
    rep.episodes = 1
    rep.mean_return = traj.episode_return
    return rep


def score_batch(trajs) -> AccuracyReport:
    total = AccuracyReport()
    for tr in trajs:
        total = total.merge(score_episode(tr))
    total.mean_return = float(np.mean([tr.episode_return for tr in trajs])) if trajs else None
    return total


def dwell_conditional_bp_rate(trajs) -> dict:
    """dwell -> (BP rate, warning occurrences) using the true warning dwell of each slot."""
    hits, seen = defaultdict(int), defaultdict(int)
    for tr in trajs:
        for info in tr.infos:
            for k, d, a in zip(info["true_kind"], info["warning_dwell"], info["action"]):
                if k == Health.WARNING:
                    seen[d] += 1
                    hits[d] += a == Action.BP
    return {d: (hits[d] / seen[d], seen[d]) for d in sorted(seen)}


# -- baselines ----------------------------------------------------------------
_UNIFORM_LOGP = float(np.log(1.0 / N_ACTIONS))
_BLOCK = len(PER_VNF_FEATURES)


class RandomPolicy:
    kind = "random"

    def begin(self, n_envs: int) -> None:
        pass

    def act(self, obs, envs, rng, greedy=False):
        n, V = len(envs), envs[0].n_vnfs
        a = rng.integers(N_ACTIONS, size=(n, V))
        return a, np.full(n, V * _UNIFORM_LOGP), np.zeros(n)


class OraclePolicy:
    """Reads the true health of every VNF. Test-only privilege."""

    kind = "oracle"

    def begin(self, n_envs: int) -> None:
        pass

    def act(self, obs, envs, rng, greedy=False):
        out = []
        for env in envs:
            kinds = env.true_kinds
            has_backup = env.backup_present()
            a = np.where(kinds == Health.CRITICAL, Action.SS,
                         np.where(kinds == Health.WARNING, Action.BP,
                                  np.where(has_backup, Action.BR, Action.NOOP)))
            out.append(a)
        return np.array(out, dtype=np.int64), np.zeros(len(envs)), np.zeros(len(envs))


class ReactivePolicy:
    """Acts only on reported state: recovers on observed critical, never pre-places backups."""

    kind = "reactive"

    def begin(self, n_envs: int) -> None:
        pass

    def act(self, obs, envs, rng, greedy=False):
        V = envs[0].n_vnfs
        blocks = np.asarray(obs)[:, :V * _BLOCK].reshape(len(envs), V, _BLOCK)
        critical = blocks[:, :, 2] > 0.5
        normal_with_backup = (blocks[:, :, 0] > 0.5) & (blocks[:, :, 4] > 0.5)
        a = np.where(critical, Action.SS, np.where(normal_with_backup, Action.BR, Action.NOOP))
        return a.astype(np.int64), np.zeros(len(envs)), np.zeros(len(envs))


BASELINES = {"random": RandomPolicy, "oracle": OraclePolicy, "reactive": ReactivePolicy}


# -- evaluation protocol -------------------------------------------------------
def evaluation_seeds(seed: int, episodes: int) -> list:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(7,))
    return [int(x) for x in ss.generate_state(episodes, dtype=np.uint64) % (2**63)]


def evaluate(policy, env_config: EnvConfig, episodes: int = 50, seed: int = 0, greedy: bool = True,
             schema_hash: Optional[str] = None, keep_trajectories: bool = False):
    """Run ``episodes`` seeded episodes in lock-step; returns the AccuracyReport (and trajectories)."""
    expected = env_config.schema().hash
    if schema_hash is not None and schema_hash != expected:
        raise ValueError(f"checkpoint schema {schema_hash} does not match environment schema {expected}")
    pool = EnvPool(env_config, episodes)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(8,)))
    trajs = pool.run(policy, evaluation_seeds(seed, episodes), rng, greedy=greedy)
    report = score_batch(trajs)
    return (report, trajs) if keep_trajectories else report


def robustness_probe(policy, env_config: EnvConfig, fresh_seed: int, episodes: int = 50,
                     schema_hash: Optional[str] = None, **kw):
    """Evaluate on a freshly drawn substrate, embedding and transition regime."""
    fresh = dataclasses.replace(env_config, substrate_seed=int(fresh_seed), regenerate_substrate=False)
    return evaluate(policy, fresh, episodes=episodes, seed=fresh_seed, schema_hash=schema_hash, **kw)
