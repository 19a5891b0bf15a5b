"""Event-triggered plus scheduled state reporting with age-of-information tracking.

A VNF reports at the start of a slot when its health changed or when its
age would otherwise pass the scheduling threshold of its current state.
Reports may be dropped with a configurable probability.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .failure import Health

OBSERVATION_VERSION = 1
# Ages are clipped to AGE_CAP - 1; AGE_CAP itself is reserved for "never reported".
AGE_CAP = 16
BACKLOG_CLIP = 10.0
PER_VNF_FEATURES = ("reported_normal", "reported_warning", "reported_critical",
                    "age", "backup_present", "sync_backlog")


@dataclass
class MonitoringConfig:
    max_age_normal: float = 2.0
    max_age_warning: float = 2.0
    max_age_critical: float = 1.0
    loss_prob: float = 0.0
    slot_duration: float = 1.0  # slot length in age units

    def validate(self) -> None:
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be positive")
        for name in ("max_age_normal", "max_age_warning", "max_age_critical"):
            if getattr(self, name) < self.slot_duration:
                raise ValueError(f"{name} must be at least one slot")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")

    def max_age(self, kind: int) -> float:
        return {Health.NORMAL: self.max_age_normal, Health.WARNING: self.max_age_warning,
                Health.CRITICAL: self.max_age_critical}[Health(kind)]


class AoiTracker:
    """Per-VNF ages, last reported health and the previous true health."""

    def __init__(self, n_vnfs: int, cfg: MonitoringConfig | None = None):
        self.cfg = cfg or MonitoringConfig()
        self.cfg.validate()
        self.n_vnfs = n_vnfs
        self._max_age = np.array([0.0, self.cfg.max_age_normal, self.cfg.max_age_warning, self.cfg.max_age_critical])
        self.reset()

    def reset(self) -> None:
        self.age = np.full(self.n_vnfs, np.inf)
        self.reported_kind = np.zeros(self.n_vnfs, dtype=np.int64)  # 0 = nothing received yet
        self.last_true = np.zeros(self.n_vnfs, dtype=np.int64)
        self.last_reports = np.zeros(self.n_vnfs, dtype=bool)

    def thresholds(self, true_kinds) -> np.ndarray:
        return self._max_age[np.asarray(true_kinds, dtype=np.int64)]

    def tick(self, true_kinds, rng: np.random.Generator) -> np.ndarray:
        """Advance one slot; returns the mask of reports that reached the orchestrator."""
        kinds = np.asarray(true_kinds, dtype=np.int64)
        step = self.cfg.slot_duration
        changed = kinds != self.last_true
        due = self.age + step > self._max_age[kinds]
        sent = changed | due
        if self.cfg.loss_prob > 0:
            sent &= rng.random(self.n_vnfs) >= self.cfg.loss_prob
        self.age = np.where(sent, step, self.age + step)
        self.reported_kind = np.where(sent, kinds, self.reported_kind)
        self.last_true = kinds.copy()
        self.last_reports = sent
        return sent.copy()


def freshness_violations(tracker: AoiTracker, true_kinds) -> int:
    """VNFs whose age exceeds the threshold of their true current state."""
    return int(np.sum(tracker.age > tracker.thresholds(true_kinds)))


@dataclass(frozen=True)
class ObservationSchema:
    n_vnfs: int
    n_nodes: int
    n_resources: int

    @property
    def width(self) -> int:
        return self.n_vnfs * len(PER_VNF_FEATURES) + self.n_nodes * self.n_resources

    def layout(self) -> dict:
        return {
            "version": OBSERVATION_VERSION,
            "width": self.width,
            "per_vnf": list(PER_VNF_FEATURES),
            "per_vnf_block": f"{self.n_vnfs} blocks of {len(PER_VNF_FEATURES)}, ordered by global VNF index",
            "tail": f"node availability ratios, {self.n_nodes} nodes x {self.n_resources} resources, row-major",
            "age_encoding": f"min(age, {AGE_CAP - 1}) / {AGE_CAP}; never-reported encodes as 1.0",
            "backlog_encoding": f"backlog / (baseline sync bandwidth x max downtime), clipped to {BACKLOG_CLIP}",
            "n_vnfs": self.n_vnfs, "n_nodes": self.n_nodes, "n_resources": self.n_resources,
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(self.layout(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def encode_age(age: np.ndarray) -> np.ndarray:
    finite = np.isfinite(age)
    return np.where(finite, np.minimum(np.where(finite, age, 0.0), AGE_CAP - 1), AGE_CAP) / AGE_CAP


def build_observation(tracker: AoiTracker, backup_present, backlog_norm, node_ratios) -> np.ndarray:
    """Flatten the orchestrator's view into the documented fixed-width vector."""
    V = tracker.n_vnfs
    block = np.zeros((V, len(PER_VNF_FEATURES)))
    rk = tracker.reported_kind
    known = rk > 0
    block[np.nonzero(known)[0], rk[known] - 1] = 1.0
    block[:, 3] = encode_age(tracker.age)
    block[:, 4] = np.asarray(backup_present, dtype=float)
    block[:, 5] = np.clip(np.asarray(backlog_norm, dtype=float), 0.0, BACKLOG_CLIP)
    return np.concatenate([block.ravel(), np.asarray(node_ratios, dtype=float).ravel()])
