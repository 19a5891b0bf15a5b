"""Per-VNF health Markov chain with a minimum warning dwell and escalating failure odds."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from enum import IntEnum

import numpy as np

PROB_TOL = 1e-9


class Health(IntEnum):
    NORMAL = 1
    WARNING = 2
    CRITICAL = 3


@dataclass(frozen=True)
class TransitionConfig:
    p_nn: float
    p_nw: float
    p_ww: float
    p_wc: float
    p_wn: float
    min_warning_dwell: int = 2  # q_v

    def __post_init__(self):
        for name in ("p_nn", "p_nw", "p_ww", "p_wc", "p_wn"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if abs(self.p_nn + self.p_nw - 1.0) > PROB_TOL:
            raise ValueError("p_nn + p_nw must equal 1")
        if abs(self.p_ww + self.p_wc + self.p_wn - 1.0) > PROB_TOL:
            raise ValueError("p_ww + p_wc + p_wn must equal 1")
        if self.min_warning_dwell < 1:
            raise ValueError("min_warning_dwell must be >= 1")

    def warning_probs(self, dwell: int) -> tuple:
        """(stay, critical, normal) for a warning VNF that has spent ``dwell`` slots in warning.

        Below the minimum dwell the VNF is pinned to warning. Past it the critical
        probability grows linearly with the excess dwell, capped at 1; the added
        mass is taken from "stay" first and then from "normal".
        """
        if dwell < self.min_warning_dwell:
            return 1.0, 0.0, 0.0
        p_wc = min(1.0, self.p_wc * (1 + dwell - self.min_warning_dwell))
        p_ww = max(0.0, self.p_ww - (p_wc - self.p_wc))
        p_wn = max(0.0, 1.0 - p_wc - p_ww)
        return p_ww, p_wc, p_wn

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FailureRanges:
    """Uniform sampling ranges for per-episode transition probabilities."""

    p_nw: tuple = (0.02, 0.10)
    p_wc: tuple = (0.10, 0.40)
    p_wn: tuple = (0.10, 0.40)
    min_warning_dwell: int = 2

    def validate(self) -> None:
        for name in ("p_nw", "p_wc", "p_wn"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"failure range {name}={getattr(self, name)} must satisfy 0 <= low <= high <= 1")
        if self.p_wc[1] + self.p_wn[1] > 1.0:
            raise ValueError("p_wc and p_wn upper bounds must sum to <= 1 so that p_ww stays non-negative")
        if self.min_warning_dwell < 1:
            raise ValueError("min_warning_dwell must be >= 1")


def sample_episode_config(rng: np.random.Generator, ranges: FailureRanges | None = None) -> TransitionConfig:
    r = ranges or FailureRanges()
    r.validate()
    p_nw = float(rng.uniform(*r.p_nw))
    p_wc = float(rng.uniform(*r.p_wc))
    p_wn = float(rng.uniform(*r.p_wn))
    return TransitionConfig(
        p_nn=1.0 - p_nw, p_nw=p_nw,
        p_ww=1.0 - p_wc - p_wn, p_wc=p_wc, p_wn=p_wn,
        min_warning_dwell=r.min_warning_dwell,
    )


@dataclass(frozen=True)
class HealthState:
    kind: Health = Health.NORMAL
    warning_dwell: int = 0

    def __post_init__(self):
        if self.warning_dwell < 0 or (self.warning_dwell > 0) != (self.kind == Health.WARNING):
            raise ValueError(f"dwell {self.warning_dwell} inconsistent with state {self.kind.name}")


def step_health(state: HealthState, cfg: TransitionConfig, rng: np.random.Generator) -> HealthState:
    """One slot of the chain. Critical is absorbing until :func:`recover` is called."""
    if state.kind == Health.CRITICAL:
        return state
    u = rng.random()
    if state.kind == Health.NORMAL:
        if u < cfg.p_nn:
            return state
        return HealthState(Health.WARNING, 1)
    p_ww, p_wc, _ = cfg.warning_probs(state.warning_dwell)
    if u < p_ww:
        return HealthState(Health.WARNING, state.warning_dwell + 1)
    if u < p_ww + p_wc:
        return HealthState(Health.CRITICAL, 0)
    return HealthState(Health.NORMAL, 0)


def recover(state: HealthState) -> HealthState:
    if state.kind != Health.CRITICAL:
        raise ValueError(f"recover() needs a critical VNF, got {state.kind.name}")
    return HealthState(Health.NORMAL, 0)
