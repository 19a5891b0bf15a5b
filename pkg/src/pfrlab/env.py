"""Slot-stepped recovery environment.

Timing within slot ``t``: health transitions, then the monitoring tick, then the
observation is handed to the orchestrator. ``step(actions)`` applies the
orchestrator's per-VNF actions for slot ``t``, evolves statelet backlogs,
computes the reward, and then runs the transitions and monitoring of slot
``t + 1`` to produce the next observation. The orchestrator therefore always
decides on the report gathered at the start of the slot it acts in.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from enum import IntEnum
from typing import Optional

import numpy as np

from .failure import (FailureRanges, Health, HealthState, TransitionConfig, recover,
                      sample_episode_config, step_health)
from .monitoring import AoiTracker, MonitoringConfig, ObservationSchema, build_observation
from .network import (NetworkState, NoBackupPresent, SfcConfig, SubstrateConfig, build_network,
                      embed_sfcs_random)

BITS_PER_MEGABIT = 1e6


class Action(IntEnum):
    NOOP = 0
    BP = 1  # backup placement (launch + flow pre-configuration)
    BR = 2  # backup removal
    SS = 3  # statelet synchronization (completes a recovery)


N_ACTIONS = len(Action)


class Recovery(IntEnum):
    NONE = 0
    PFR = 1
    RFR = 2


@dataclass
class RewardConfig:
    sla_penalty: float = 1.0
    false_alarm_penalty: float = 1.0
    term_weights: tuple = (1.0, 1.0, 1.0)
    backup_weight_normal: float = 1.0
    backup_weight_warning: float = 0.1
    backup_weight_critical: float = 0.0
    bonus_br_normal: float = 1.0
    bonus_bp_warning: float = 1.0
    bonus_recovery_critical: float = 1.0
    bonus_pfr: float = 100.0
    noncritical_delay_bound: float = 1e6  # sync delay allowed while the VNF is not critical

    def validate(self) -> None:
        vals = [self.sla_penalty, self.false_alarm_penalty, *self.term_weights, self.backup_weight_normal,
                self.backup_weight_warning, self.backup_weight_critical, self.bonus_br_normal, self.bonus_bp_warning, self.bonus_recovery_critical, self.bonus_pfr]
        if len(self.term_weights) != 3:
            raise ValueError("term_weights must hold three weights")
        if any(v < 0 for v in vals):
            raise ValueError("reward penalties, weights and bonuses must be non-negative")
        if self.noncritical_delay_bound <= 0:
            raise ValueError("noncritical_delay_bound must be positive")

    def backup_weight(self, kind: int) -> float:
        return (0.0, self.backup_weight_normal, self.backup_weight_warning, self.backup_weight_critical)[kind]


@dataclass
class EnvConfig:
    substrate: SubstrateConfig = field(default_factory=SubstrateConfig)
    sfc: SfcConfig = field(default_factory=SfcConfig)
    failure: FailureRanges = field(default_factory=FailureRanges)
    monitoring: MonitoringConfig = field(default_factory=MonitoringConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    episode_length: int = 100
    statelet_bits_per_packet: float = 100.0
    seconds_per_slot: float = 1.0
    substrate_seed: int = 0
    regenerate_substrate: bool = False
    debug_audit: bool = False

    def validate(self) -> None:
        self.substrate.validate()
        self.sfc.validate()
        self.failure.validate()
        self.monitoring.validate()
        self.reward.validate()
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if self.statelet_bits_per_packet < 0 or self.seconds_per_slot <= 0:
            raise ValueError("statelet_bits_per_packet must be >= 0 and seconds_per_slot > 0")

    @property
    def n_vnfs(self) -> int:
        return self.sfc.n_sfcs * self.sfc.chain_length

    def schema(self) -> ObservationSchema:
        return ObservationSchema(self.n_vnfs, self.substrate.node_count, self.substrate.n_resources)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RewardBreakdown:
    sla_cost: float
    resource_cost: float
    false_alarm_cost: float
    penalty: float
    shaping: float
    total: float


@dataclass
class SlotOutcome:
    observation: np.ndarray
    reward: Optional[RewardBreakdown]
    done: bool
    info: dict


def compute_reward(cfg: RewardConfig, kinds, actions, critical, switched, has_backup, recovery,
                   costs=None) -> tuple:
    """Cost terms and shaping bonus for one slot; returns (RewardBreakdown, per-VNF bonus list)."""
    costs = [1.0] * len(kinds) if costs is None else costs
    sla_cost = cfg.sla_penalty * float(sum(r * (1 - hb) for r, hb in zip(critical, has_backup)))
    resource_cost = float(sum(cfg.backup_weight(k) * hb * u for k, hb, u in zip(kinds, has_backup, costs)))
    false_alarm_cost = cfg.false_alarm_penalty * float(sum(r ^ b for r, b in zip(critical, switched)))
    bonus = []
    for k, a, r, b, rec in zip(kinds, actions, critical, switched, recovery):
        x = 0.0
        if a == Action.BR and k == Health.NORMAL:
            x += cfg.bonus_br_normal
        if a == Action.BP and k == Health.WARNING:
            x += cfg.bonus_bp_warning
        if r and b:
            x += cfg.bonus_recovery_critical
        if rec == Recovery.PFR:
            x += cfg.bonus_pfr
        bonus.append(x)
    w_sla, w_resource, w_false_alarm = cfg.term_weights
    penalty = -w_sla * sla_cost - w_resource * resource_cost - w_false_alarm * false_alarm_cost
    shaping = float(sum(bonus))
    return RewardBreakdown(sla_cost, resource_cost, false_alarm_cost, penalty, shaping, penalty + shaping), bonus


def split_reward(cfg: RewardConfig, kinds, critical, switched, has_backup, bonus, costs=None) -> list:
    """Per-VNF share of the slot reward; the shares sum to the total."""
    costs = [1.0] * len(kinds) if costs is None else costs
    w_sla, w_resource, w_false_alarm = cfg.term_weights
    return [b - w_sla * cfg.sla_penalty * r * (1 - hb) - w_resource * cfg.backup_weight(k) * hb * u
            - w_false_alarm * cfg.false_alarm_penalty * (r ^ be)
            for k, r, be, hb, b, u in zip(kinds, critical, switched, has_backup, bonus, costs)]


def classify_recovery(backup_at_slot_start: bool) -> Recovery:
    """A recovery is proactive exactly when a backup was already in place when the slot began."""
    return Recovery.PFR if backup_at_slot_start else Recovery.RFR


class RecoveryEnv:
    """Gym-style environment over ``V`` stateful VNFs; one categorical action per VNF."""

    def __init__(self, config: Optional[EnvConfig] = None):
        self.config = config or EnvConfig()
        self.config.validate()
        self.schema = self.config.schema()
        self._base_state = self._make_substrate(self.config.substrate_seed)
        self.state: Optional[NetworkState] = None
        self.slot = 0
        self.seed_used: Optional[int] = None

    # -- construction ------------------------------------------------------
    def _make_substrate(self, seed: int) -> NetworkState:
        sub, sc = self.config.substrate, self.config.sfc
        net = build_network(sub.node_count, sub.nfv_count, sub)
        rng = np.random.default_rng(seed)
        return embed_sfcs_random(net, sc.n_sfcs, sc.chain_length, rng, sub, sc)

    @property
    def n_vnfs(self) -> int:
        return len(self._base_state.vnfs)

    @property
    def true_kinds(self) -> np.ndarray:
        return np.array([h.kind for h in self.health], dtype=np.int64)

    @property
    def warning_dwell(self) -> np.ndarray:
        return np.array([h.warning_dwell for h in self.health], dtype=np.int64)

    def backup_present(self) -> np.ndarray:
        return np.array([v in self.state.backups for v in range(self.n_vnfs)])

    def reset(self, seed: Optional[int] = None) -> SlotOutcome:
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
        self.seed_used = int(seed)
        ss = np.random.SeedSequence(self.seed_used)
        sub_seq, cfg_seq, dyn_seq, mon_seq = ss.spawn(4)
        if self.config.regenerate_substrate:
            self._base_state = self._make_substrate(int(sub_seq.generate_state(1)[0]))
        self.state = self._base_state.copy()
        cfg_rng = np.random.default_rng(cfg_seq)
        self.transition_configs = [sample_episode_config(cfg_rng, self.config.failure) for _ in range(self.n_vnfs)]
        self._dyn_rng = np.random.default_rng(dyn_seq)
        self._mon_rng = np.random.default_rng(mon_seq)
        self.health = [HealthState() for _ in range(self.n_vnfs)]
        self.tracker = AoiTracker(self.n_vnfs, self.config.monitoring)
        self.backlog = np.zeros(self.n_vnfs)  # bits
        self.slot = 0
        self._hold = np.zeros(self.n_vnfs, dtype=bool)
        self._last_reports = np.zeros(self.n_vnfs, dtype=bool)
        return SlotOutcome(self._observe(), None, False, {"slot": 0, "seed": self.seed_used})

    # -- helpers -------------------------------------------------------------
    def _sfc_of(self, v: int):
        return self.state.sfcs[self.state.vnfs[v].sfc]

    def backlog_normalized(self) -> np.ndarray:
        out = np.zeros(self.n_vnfs)
        for v in range(self.n_vnfs):
            spec = self.state.vnfs[v]
            out[v] = self.backlog[v] / (spec.sync_bandwidth * BITS_PER_MEGABIT * self._sfc_of(v).max_downtime)
        return out

    def _observe(self) -> np.ndarray:
        return build_observation(self.tracker, self.backup_present(), self.backlog_normalized(),
                                 self.state.node_available_ratios())

    def sync_delay(self, v: int) -> float:
        """Seconds to drain the pending statelets over the current sync reservation."""
        if v not in self.state.sync_bw:
            raise NoBackupPresent(f"VNF {v} has no sync link")
        return float(self.backlog[v] / (self.state.sync_bw[v] * BITS_PER_MEGABIT))

    def _advance(self) -> None:
        for v in range(self.n_vnfs):
            if self._hold[v]:
                continue  # a VNF recovered last slot resumes service in the normal state
            self.health[v] = step_health(self.health[v], self.transition_configs[v], self._dyn_rng)
        self._hold[:] = False
        self._last_reports = self.tracker.tick(self.true_kinds, self._mon_rng)

    def _recover(self, v: int, backup_at_start: bool, flags: dict) -> Recovery:
        st = self.state
        sfc = self._sfc_of(v)
        if backup_at_start:
            b_min = self.backlog[v] / sfc.max_downtime / BITS_PER_MEGABIT  # Mb/s
            wanted = max(st.vnfs[v].sync_bandwidth, b_min)
            granted = st.grant_sync_bandwidth(v, wanted)
            delay = self.sync_delay(v)
            flags["sync_delay"] = delay
            flags["b_min"] = b_min
            flags["granted_bw"] = granted
            if delay > sfc.max_downtime * (1 + 1e-9):
                flags["sla_violation"] = True
            kind = Recovery.PFR
        else:
            node = st.best_backup_node(v)
            if node is None:
                flags["recovery_failed"] = True
                return Recovery.NONE
            st.allocate_backup(v, node)
            self.backlog[v] = 0.0
            flags["sync_delay"] = 0.0
            kind = Recovery.RFR
        st.promote_backup(v)
        self.backlog[v] = 0.0
        self.health[v] = recover(self.health[v])
        self._hold[v] = True
        return kind

    # -- main loop -----------------------------------------------------------
    def step(self, actions) -> SlotOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        acts = np.asarray(actions, dtype=np.int64).reshape(-1)
        if acts.shape[0] != self.n_vnfs:
            raise ValueError(f"expected {self.n_vnfs} actions, got {acts.shape[0]}")
        if acts.min(initial=0) < 0 or acts.max(initial=0) >= N_ACTIONS:
            raise ValueError(f"actions must lie in [0, {N_ACTIONS})")

        st = self.state
        V = self.n_vnfs
        kinds = [int(h.kind) for h in self.health]
        dwell = [int(h.warning_dwell) for h in self.health]
        reported = self.tracker.reported_kind.copy()
        aoi = self.tracker.age.copy()
        reports = self._last_reports.copy()
        has_backup = [int(v in st.backups) for v in range(V)]
        critical = [int(k == Health.CRITICAL) for k in kinds]
        switched = [0] * V
        recovery = [Recovery.NONE] * V
        flags = [dict() for _ in range(V)]

        for v in range(V):
            a = int(acts[v])
            f = flags[v]
            if a == Action.BP:
                if critical[v]:
                    switched[v] = 1
                    recovery[v] = self._recover(v, bool(has_backup[v]), f)
                elif v in st.backups:
                    f["duplicate_bp"] = True
                else:
                    node = st.best_backup_node(v)
                    if node is None:
                        f["infeasible_bp"] = True
                    else:
                        st.allocate_backup(v, node)
                        self.backlog[v] = 0.0
            elif a == Action.BR:
                if v in st.backups:
                    st.release_backup(v)
                    self.backlog[v] = 0.0
                else:
                    f["br_without_backup"] = True
            elif a == Action.SS:
                switched[v] = 1
                if critical[v]:
                    recovery[v] = self._recover(v, bool(has_backup[v]), f)
                elif v not in st.backups:
                    f["ss_without_backup"] = True

        # statelet accumulation on live sync links
        dt = self.config.seconds_per_slot
        for v in sorted(st.backups):
            gen = self.config.statelet_bits_per_packet * self._sfc_of(v).traffic_rate * dt
            drain = st.sync_bw[v] * BITS_PER_MEGABIT * dt
            self.backlog[v] = max(0.0, self.backlog[v] + gen - drain)
        relaxed = self.config.reward.noncritical_delay_bound
        for v in sorted(st.backups):
            bound = self._sfc_of(v).max_downtime if critical[v] else relaxed
            if self.sync_delay(v) > bound:
                flags[v]["sla_violation"] = True

        costs = [spec.backup_cost for spec in st.vnfs]
        reward, bonus = compute_reward(self.config.reward, kinds, acts.tolist(), critical, switched, has_backup,
                                       recovery, costs)

        if self.config.debug_audit:
            problems = st.audit()
            if problems or np.any(self.backlog < 0):
                raise AssertionError(f"bookkeeping audit failed at slot {self.slot}: {problems}")

        info = {
            "slot": self.slot,
            "true_kind": kinds,
            "warning_dwell": dwell,
            "reported_kind": reported.tolist(),
            "aoi": [None if not np.isfinite(x) else float(x) for x in aoi],
            "reported": reports.astype(int).tolist(),
            "action": acts.tolist(),
            "critical": critical,
            "switched": switched,
            "has_backup": has_backup,
            "recovery": [int(r) for r in recovery],
            "bonus": bonus,
            "vnf_reward": split_reward(self.config.reward, kinds, critical, switched, has_backup, bonus, costs),
            "flags": {v: f for v, f in enumerate(flags) if f},
        }
        self.slot += 1
        done = self.slot >= self.config.episode_length
        self._advance()
        return SlotOutcome(self._observe(), reward, done, info)

    def episode_header(self) -> dict:
        return {
            "seed": self.seed_used,
            "schema_hash": self.schema.hash,
            "transition_configs": [c.to_dict() for c in self.transition_configs],
            "substrate": self._base_state.to_dict(),
        }
