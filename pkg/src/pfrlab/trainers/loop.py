"""Iteration loop shared by both agents: collect, update, evaluate, checkpoint, resume."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from ..checkpoint import save_checkpoint
from ..env import EnvConfig
from ..policy import ArchitectureSpec, NetRolloutPolicy, PolicyNet
from .ppo import PpoConfig, ReturnNormalizer, ppo_update
from .rollout import EnvPool, episode_seeds
from .sac import EpisodeReplay, SacConfig, SacLearner, sac_update

METRIC_COLUMNS = ("iteration", "phase", "episodes", "mean_return", "csa", "wsa", "nsa", "pfr_accuracy",
                  "rfr_accuracy", "loss", "value_loss", "entropy")
AGENT_KINDS = ("ppo", "sac")
ARCHITECTURES = ("hybrid", "feedforward")


@dataclass
class AgentConfig:
    kind: str = "ppo"
    architecture: str = "hybrid"
    ppo: PpoConfig = field(default_factory=PpoConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    precision: str = "float32"  # float64 for gradient checks
    init_seed: Optional[int] = None  # None: derived from the master seed

    @property
    def gamma(self) -> float:
        return self.ppo.gamma if self.kind == "ppo" else self.sac.gamma

    @property
    def n_envs(self) -> int:
        return self.ppo.n_envs if self.kind == "ppo" else self.sac.n_envs

    def validate(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"kind must be one of {AGENT_KINDS}, got {self.kind!r}")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        self.ppo.validate()
        self.sac.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunSettings:
    iterations: int = 5000
    eval_every: int = 50
    eval_episodes: int = 50
    robustness_every: int = 500
    checkpoint_every: int = 50
    master_seed: int = 0
    workers: int = 1
    stop_when: dict = field(default_factory=dict)  # e.g. {"csa": 0.9}; checked on eval rows
    max_seconds: Optional[float] = None  # wall-clock budget; the run stops after the iteration that crosses it

    def validate(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("eval_every", "eval_episodes", "robustness_every", "checkpoint_every", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise ValueError("max_seconds must be positive")
        unknown = set(self.stop_when) - {"csa", "wsa", "nsa", "pfr_accuracy", "mean_return"}
        if unknown:
            raise ValueError(f"stop_when has unknown metrics {sorted(unknown)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def build_net(agent: AgentConfig, env_cfg: EnvConfig, init_seed: int = 0) -> PolicyNet:
    schema = env_cfg.schema()
    factory = ArchitectureSpec.hybrid if agent.architecture == "hybrid" else ArchitectureSpec.feedforward
    per_vnf = agent.kind == "ppo" and agent.ppo.credit == "per_vnf"
    spec = factory(schema.width, env_cfg.n_vnfs, q_heads=2 if agent.kind == "sac" else 0,
                   value_outputs=env_cfg.n_vnfs if per_vnf else 1, init_seed=init_seed)
    net = PolicyNet(spec)
    return net.double() if agent.precision == "float64" else net


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def metric_row(iteration: int, phase: str, report, stats: dict | None = None) -> dict:
    stats = stats or {}
    return {"iteration": iteration, "phase": phase, "episodes": report.episodes, "mean_return": report.mean_return,
            "csa": report.csa, "wsa": report.wsa, "nsa": report.nsa, "pfr_accuracy": report.pfr_accuracy,
            "rfr_accuracy": report.rfr_accuracy, "loss": stats.get("loss", stats.get("q_loss")),
            "value_loss": stats.get("value_loss", stats.get("q_loss")), "entropy": stats.get("entropy")}


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


def rows_to_long_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "phase", "metric", "value"))
    for r in rows:
        for c in METRIC_COLUMNS[3:]:
            if r[c] is not None:
                w.writerow((r["iteration"], r["phase"], c, _fmt(r[c])))
    return buf.getvalue()


def read_metric_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {"iteration": int(r["iteration"]), "phase": r["phase"], "episodes": int(r["episodes"])}
        for c in METRIC_COLUMNS[3:]:
            d[c] = float(r[c]) if r[c] != "" else None
        out.append(d)
    return out


@dataclass
class TrainResult:
    net: PolicyNet
    rows: list
    iterations_done: int
    stopped_early: bool
    out_dir: Optional[Path]

    def best_eval(self, key: str = "csa") -> Optional[dict]:
        evals = [r for r in self.rows if r["phase"] == "eval" and r[key] is not None]
        return max(evals, key=lambda r: r[key]) if evals else None


def _meets(row: dict, stop_when: dict) -> bool:
    return bool(stop_when) and all(row.get(k) is not None and row[k] >= v for k, v in stop_when.items())


class _Agent:
    """Holds the optimizer-side state of one run; saves and restores it for resume."""

    def __init__(self, agent: AgentConfig, env_cfg: EnvConfig, net: PolicyNet):
        self.cfg, self.net = agent, net
        if agent.kind == "ppo":
            self.opt = torch.optim.Adam(net.parameters(), lr=agent.ppo.learning_rate)
            self.scaler = ReturnNormalizer() if agent.ppo.normalize_value_target else None
        else:
            self.learner = SacLearner(net, agent.sac)
            self.replay = EpisodeReplay(agent.sac.replay_capacity, env_cfg.schema().width, env_cfg.n_vnfs,
                                        env_cfg.episode_length)

    def update(self, trajs, rng) -> dict:
        if self.cfg.kind == "ppo":
            return ppo_update(self.net, self.opt, trajs, self.cfg.ppo, rng, self.scaler)
        self.replay.add(trajs)
        if len(self.replay) < self.cfg.sac.batch_episodes:
            return {}
        return sac_update(self.learner, self.replay, rng)

    def state_dict(self) -> dict:
        d = {"net": self.net.state_dict(), "version": self.net.version}
        if self.cfg.kind == "ppo":
            d["opt"] = self.opt.state_dict()
            d["scaler"] = self.scaler.state_dict() if self.scaler else None
        else:
            d["learner"] = self.learner.state_dict()
            d["replay"] = self.replay.state_dict()
        return d

    def load_state_dict(self, d: dict) -> None:
        self.net.load_state_dict(d["net"])
        self.net.version = d["version"]
        if self.cfg.kind == "ppo":
            self.opt.load_state_dict(d["opt"])
            if self.scaler is not None and d["scaler"]:
                self.scaler = ReturnNormalizer(**d["scaler"])
        else:
            self.learner.load_state_dict(d["learner"])
            self.replay.load_state_dict(d["replay"])


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def train(env_cfg: EnvConfig, agent: AgentConfig, run: RunSettings, out_dir=None, resume: bool = False,
          manifest: dict | None = None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Collect -> update for ``run.iterations`` iterations with periodic greedy evaluation.

    Every random draw of iteration ``i`` comes from streams keyed on (master seed, i),
    so a resumed run reproduces the uninterrupted metric series exactly.
    """
    from ..metrics import evaluate, robustness_probe, score_batch  # metrics imports trainers

    agent.validate()
    run.validate()
    env_cfg.validate()
    init_seed = agent.init_seed if agent.init_seed is not None else int(
        np.random.SeedSequence(run.master_seed, spawn_key=(99,)).generate_state(1)[0])
    net = build_net(agent, env_cfg, init_seed)
    state = _Agent(agent, env_cfg, net)
    schema_hash = env_cfg.schema().hash
    pool = EnvPool(env_cfg, agent.n_envs, workers=run.workers)
    policy = NetRolloutPolicy(net)
    rows: list = []
    start = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        state_path = out / "state.pt"
        if resume and state_path.exists():
            saved = torch.load(state_path, weights_only=False)
            state.load_state_dict(saved["agent"])
            start = saved["iteration"]
            rows = list(saved["rows"])
        elif resume:
            raise FileNotFoundError(f"nothing to resume in {out}")
        if manifest is not None:
            _write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def persist(iteration: int) -> None:
        if out is None:
            return
        extra = {"iteration": iteration, "agent": agent.kind, "master_seed": run.master_seed}
        save_checkpoint(out / "checkpoints" / f"iter_{iteration:06d}.npz", net, schema_hash, extra)
        save_checkpoint(out / "checkpoints" / "latest.npz", net, schema_hash, extra)
        torch.save({"agent": state.state_dict(), "iteration": iteration, "rows": rows}, out / "state.pt.tmp")
        os.replace(out / "state.pt.tmp", out / "state.pt")
        _write_text(out / "metrics.csv", rows_to_csv(rows))

    stopped = False
    done = start
    t0 = time.monotonic()
    for it in range(start, run.iterations):
        rng = np.random.default_rng(np.random.SeedSequence(run.master_seed, spawn_key=(1, it)))
        trajs = pool.run(policy, episode_seeds(run.master_seed, it, agent.n_envs), rng)
        stats = state.update(trajs, rng)
        rows.append(metric_row(it, "train", score_batch(trajs), stats))
        done = it + 1
        if done % run.eval_every == 0 or done == run.iterations:
            rep = evaluate(policy, env_cfg, run.eval_episodes, seed=run.master_seed, schema_hash=schema_hash)
            rows.append(metric_row(done, "eval", rep))
            stopped = _meets(rows[-1], run.stop_when)
        if done % run.robustness_every == 0:
            fresh = int(np.random.SeedSequence(run.master_seed, spawn_key=(2, done)).generate_state(1)[0])
            rows.append(metric_row(done, "robustness", robustness_probe(policy, env_cfg, fresh, run.eval_episodes,
                                                                         schema_hash=schema_hash)))
        if progress is not None:
            progress(rows[-1])
        out_of_time = run.max_seconds is not None and time.monotonic() - t0 > run.max_seconds
        if done % run.checkpoint_every == 0 or done == run.iterations or stopped or out_of_time:
            persist(done)
        if stopped or out_of_time:
            break
    if out is not None:
        _write_text(out / "metrics.csv", rows_to_csv(rows))
        _write_text(out / "metrics_long.csv", rows_to_long_csv(rows))
        last_eval = next((r for r in reversed(rows) if r["phase"] == "eval"), None)
        _write_text(out / "summary.json", json.dumps({"iterations_done": done, "stopped_early": stopped,
                                                      "last_eval": last_eval}, indent=2, sort_keys=True) + "\n")
    return TrainResult(net, rows, done, stopped, out)
