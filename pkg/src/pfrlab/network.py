"""Physical substrate, embedded service chains and backup bookkeeping.

Resource usage is never updated incrementally. Every allocation is an owned
record (active instance, backup instance, sync-link reservation) and totals are
re-summed from those records in a canonical order, so releasing an allocation
restores the availability ratios bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np

# Slack for float comparisons against capacities.
CAPACITY_TOL = 1e-9


class ConstraintViolation(Exception):
    """Base class for rejected backup operations.

    ``constraint`` names the violated rule: ``node-capacity``,
    ``link-bandwidth``, ``anti-affinity`` or ``single-backup``.
    """

    constraint = "unknown"

    def __init__(self, message: str):
        super().__init__(f"[{self.constraint}] {message}")


class CapacityExceeded(ConstraintViolation):
    def __init__(self, message: str, constraint: str = "node-capacity"):
        self.constraint = constraint
        super().__init__(message)


class AntiAffinityViolation(ConstraintViolation):
    constraint = "anti-affinity"


class DuplicateBackup(ConstraintViolation):
    constraint = "single-backup"


class NoBackupPresent(Exception):
    pass


class EmbeddingError(RuntimeError):
    pass


@dataclass
class SubstrateConfig:
    node_count: int = 5
    nfv_count: int = 5
    n_resources: int = 3
    node_capacity: float = 100.0
    link_capacity: float = 1000.0  # Mb/s
    demand_low: float = 5.0
    demand_high: float = 20.0
    sync_bandwidth: float = 10.0  # Mb/s, baseline sync-link reservation
    backup_cost: float = 1.0

    def validate(self) -> None:
        if self.nfv_count < 2:
            raise ValueError("nfv_count must be >= 2: a backup needs a node other than its active one")
        if self.node_count < self.nfv_count:
            raise ValueError("node_count must be >= nfv_count")
        if self.n_resources < 1:
            raise ValueError("n_resources must be >= 1")
        if self.node_capacity <= 0 or self.link_capacity <= 0:
            raise ValueError("capacities must be positive")
        if not 0 < self.demand_low <= self.demand_high:
            raise ValueError("demand range must satisfy 0 < low <= high")
        if self.sync_bandwidth <= 0 or self.backup_cost < 0:
            raise ValueError("sync_bandwidth must be > 0 and backup_cost >= 0")


@dataclass
class SfcConfig:
    n_sfcs: int = 3
    chain_length: int = 3
    downtime_range: tuple = (0.1, 0.5)  # seconds
    traffic_range: tuple = (100.0, 1000.0)  # packets/s

    def validate(self) -> None:
        if self.n_sfcs < 1 or self.chain_length < 1:
            raise ValueError("n_sfcs and chain_length must be >= 1")
        lo, hi = self.downtime_range
        if not 0 < lo <= hi:
            raise ValueError("downtime_range must satisfy 0 < low <= high")
        lo, hi = self.traffic_range
        if not 0 < lo <= hi:
            raise ValueError("traffic_range must satisfy 0 < low <= high")


@dataclass
class PhysicalNode:
    id: int
    is_nfv: bool
    capacity: np.ndarray


@dataclass
class PhysicalLink:
    endpoints: tuple
    bandwidth_capacity: float


class PhysicalNetwork:
    """Undirected substrate graph with per-node and per-link capacities."""

    def __init__(self, nodes: list, links: list):
        self.nodes = list(nodes)
        self.links = {lk.endpoints: lk for lk in links}
        self.graph = nx.Graph()
        self.graph.add_nodes_from(n.id for n in self.nodes)
        for (m, n) in self.links:
            if m == n:
                raise ValueError(f"link endpoints must be distinct, got ({m}, {n})")
            self.graph.add_edge(m, n)
        self._path_cache: dict = {}

    @property
    def n_resources(self) -> int:
        return len(self.nodes[0].capacity)

    @property
    def nfv_nodes(self) -> list:
        return [n.id for n in self.nodes if n.is_nfv]

    def shortest_path(self, src: int, dst: int) -> list:
        """Hop-count shortest path; among equals the lexicographically smallest node sequence."""
        key = (src, dst)
        if key not in self._path_cache:
            dist = nx.single_source_shortest_path_length(self.graph, dst)
            if src not in dist:
                raise ValueError(f"no path between nodes {src} and {dst}")
            path = [src]
            node = src
            while node != dst:
                node = min(nb for nb in self.graph.neighbors(node) if dist.get(nb) == dist[node] - 1)
                path.append(node)
            self._path_cache[key] = path
        return list(self._path_cache[key])

    def path_links(self, path: list) -> list:
        return [link_key(a, b) for a, b in zip(path[:-1], path[1:])]

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "is_nfv": n.is_nfv, "capacity": [float(c) for c in n.capacity]}
                for n in self.nodes
            ],
            "links": [
                {"endpoints": list(lk.endpoints), "bandwidth_capacity": lk.bandwidth_capacity}
                for lk in self.links.values()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicalNetwork":
        nodes = [PhysicalNode(x["id"], bool(x["is_nfv"]), np.asarray(x["capacity"], dtype=float)) for x in d["nodes"]]
        links = [PhysicalLink(link_key(*x["endpoints"]), float(x["bandwidth_capacity"])) for x in d["links"]]
        return cls(nodes, links)


def link_key(m: int, n: int) -> tuple:
    return (m, n) if m < n else (n, m)


def build_network(node_count: int = 5, nfv_count: int = 5, capacities: Optional[SubstrateConfig] = None) -> PhysicalNetwork:
    """Fully connected NFV core; forwarding-only nodes hang off two NFV nodes each."""
    cfg = capacities or SubstrateConfig(node_count=node_count, nfv_count=nfv_count)
    if nfv_count < 2:
        raise ValueError("nfv_count must be >= 2: a backup needs a node other than its active one")
    if node_count < nfv_count:
        raise ValueError("node_count must be >= nfv_count")
    cap = np.full(cfg.n_resources, float(cfg.node_capacity))
    nodes = [PhysicalNode(i, i < nfv_count, cap.copy() if i < nfv_count else np.zeros(cfg.n_resources))
             for i in range(node_count)]
    edges = set()
    for m in range(nfv_count):
        for n in range(m + 1, nfv_count):
            edges.add((m, n))
    for f in range(nfv_count, node_count):
        edges.add(link_key(f, f % nfv_count))
        edges.add(link_key(f, (f + 1) % nfv_count))
    links = [PhysicalLink(e, float(cfg.link_capacity)) for e in sorted(edges)]
    return PhysicalNetwork(nodes, links)


@dataclass
class VnfSpec:
    index: int  # global VNF id v
    sfc: int
    position: int
    demand: np.ndarray  # per-resource units, used by both the active and the backup instance
    sync_bandwidth: float
    backup_cost: float = 1.0


@dataclass
class SfcInstance:
    id: int
    vnfs: list
    max_downtime: float  # seconds
    traffic_rate: float  # packets/s


@dataclass
class NetworkState:
    """Mutable substrate occupancy: active placements, backups and sync links."""

    net: PhysicalNetwork
    vnfs: list
    sfcs: list
    placement: dict  # v -> node hosting the active instance
    backups: dict = field(default_factory=dict)  # v -> backup node
    sync_routes: dict = field(default_factory=dict)  # v -> list of link keys
    sync_bw: dict = field(default_factory=dict)  # v -> reserved Mb/s

    def __post_init__(self):
        self._node_ids = [n.id for n in self.net.nodes]
        self._cap = np.stack([n.capacity for n in self.net.nodes])
        self._link_ids = list(self.net.links)
        self._node_row = {n: i for i, n in enumerate(self._node_ids)}
        self._link_row = {lk: i for i, lk in enumerate(self._link_ids)}
        self._link_cap = np.array([self.net.links[k].bandwidth_capacity for k in self._link_ids])
        self._dirty = True

    # -- usage totals ---------------------------------------------------
    def _refresh(self) -> None:
        if not self._dirty:
            return
        P = self._cap.shape[1]
        node_used = np.zeros((len(self._node_ids), P))
        for v in sorted(self.placement):
            node_used[self._node_row[self.placement[v]]] += self.vnfs[v].demand
        for v in sorted(self.backups):
            node_used[self._node_row[self.backups[v]]] += self.vnfs[v].demand
        link_used = np.zeros(len(self._link_ids))
        for v in sorted(self.sync_routes):
            for lk in self.sync_routes[v]:
                link_used[self._link_row[lk]] += self.sync_bw[v]
        self._node_used = node_used
        self._link_used = link_used
        self._dirty = False

    def _touch(self) -> None:
        self._dirty = True

    def node_used(self, node: int) -> np.ndarray:
        self._refresh()
        return self._node_used[self._node_row[node]].copy()

    def node_residual(self, node: int) -> np.ndarray:
        self._refresh()
        i = self._node_row[node]
        return self._cap[i] - self._node_used[i]

    def link_residual(self, lk: tuple) -> float:
        self._refresh()
        i = self._link_row[lk]
        return float(self._link_cap[i] - self._link_used[i])

    def node_available_ratios(self) -> np.ndarray:
        """Available capacity fraction per node (rows) and resource (columns); forwarding nodes report 0."""
        self._refresh()
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(self._cap > 0, 1.0 - self._node_used / np.where(self._cap > 0, self._cap, 1.0), 0.0)
        return np.clip(w, 0.0, 1.0)

    def link_available_ratios(self) -> np.ndarray:
        self._refresh()
        return np.clip(1.0 - self._link_used / self._link_cap, 0.0, 1.0)

    # -- backup lifecycle ----------------------------------------------------
    def check_backup(self, v: int, node: int) -> list:
        """Validate a prospective backup; returns the sync route or raises."""
        if v in self.backups:
            raise DuplicateBackup(f"VNF {v} already has a backup on node {self.backups[v]}")
        active = self.placement[v]
        if node == active:
            raise AntiAffinityViolation(f"VNF {v} is active on node {node}; its backup must live elsewhere")
        if not self.net.nodes[self._node_row[node]].is_nfv:
            raise CapacityExceeded(f"node {node} is forwarding-only and hosts no backups")
        spec = self.vnfs[v]
        residual = self.node_residual(node)
        if np.any(spec.demand > residual + CAPACITY_TOL * self._cap[self._node_row[node]]):
            raise CapacityExceeded(f"node {node} residual {residual.tolist()} < demand {spec.demand.tolist()}")
        route = self.net.path_links(self.net.shortest_path(active, node))
        for lk in route:
            cap = self._link_cap[self._link_row[lk]]
            if spec.sync_bandwidth > self.link_residual(lk) + CAPACITY_TOL * cap:
                raise CapacityExceeded(
                    f"link {lk} residual {self.link_residual(lk):.6g} Mb/s < sync demand {spec.sync_bandwidth:.6g}",
                    constraint="link-bandwidth",
                )
        return route

    def allocate_backup(self, v: int, node: int) -> "NetworkState":
        route = self.check_backup(v, node)
        self.backups[v] = node
        self.sync_routes[v] = route
        self.sync_bw[v] = self.vnfs[v].sync_bandwidth
        self._touch()
        return self

    def release_backup(self, v: int) -> "NetworkState":
        if v not in self.backups:
            raise NoBackupPresent(f"VNF {v} has no backup to release")
        del self.backups[v]
        del self.sync_routes[v]
        del self.sync_bw[v]
        self._touch()
        return self

    def feasible_backup_nodes(self, v: int) -> list:
        out = []
        for node in self.net.nfv_nodes:
            try:
                self.check_backup(v, node)
            except ConstraintViolation:
                continue
            out.append(node)
        return out

    def best_backup_node(self, v: int) -> Optional[int]:
        """Feasible node with the most residual aggregate capacity, lowest id on ties."""
        best, best_res = None, -np.inf
        for node in self.feasible_backup_nodes(v):
            res = float(self.node_residual(node).sum())
            if res > best_res:
                best, best_res = node, res
        return best

    def grant_sync_bandwidth(self, v: int, wanted: float) -> float:
        """Raise the sync reservation toward ``wanted`` as far as the route allows; returns the grant."""
        if v not in self.sync_routes:
            raise NoBackupPresent(f"VNF {v} has no sync link")
        current = self.sync_bw[v]
        extra = max(0.0, wanted - current)
        if extra > 0:
            headroom = min(self.link_residual(lk) for lk in self.sync_routes[v])
            extra = min(extra, max(0.0, headroom))
            self.sync_bw[v] = current + extra
            self._touch()
        return self.sync_bw[v]

    def promote_backup(self, v: int) -> "NetworkState":
        """Fail over: the backup becomes the active instance and the failed one is torn down."""
        if v not in self.backups:
            raise NoBackupPresent(f"VNF {v} has no backup to promote")
        self.placement[v] = self.backups.pop(v)
        del self.sync_routes[v]
        del self.sync_bw[v]
        self._touch()
        return self

    # -- auditing / serialization -----------------------------------------
    def audit(self) -> list:
        """Scan every node, link and VNF; returns human-readable violations (empty when clean)."""
        self._refresh()
        problems = []
        over = self._node_used - self._cap * (1 + CAPACITY_TOL)
        for i, j in zip(*np.nonzero(over > 0)):
            problems.append(f"node-capacity: node {self._node_ids[i]} resource {j}")
        w = 1.0 - np.divide(self._node_used, self._cap, out=np.zeros_like(self._node_used), where=self._cap > 0)
        if np.any(w < -CAPACITY_TOL) or np.any(w > 1 + CAPACITY_TOL):
            problems.append("node availability ratio outside [0, 1]")
        for i in np.nonzero(self._link_used > self._link_cap * (1 + CAPACITY_TOL))[0]:
            problems.append(f"link-bandwidth: link {self._link_ids[i]}")
        for v, node in self.backups.items():
            if node == self.placement[v]:
                problems.append(f"anti-affinity: VNF {v} on node {node}")
            if self.sync_bw.get(v, 0.0) < self.vnfs[v].sync_bandwidth - CAPACITY_TOL:
                problems.append(f"sync bandwidth below baseline for VNF {v}")
        if set(self.backups) != set(self.sync_routes):
            problems.append("backup/sync-link mismatch")
        return problems

    def to_dict(self) -> dict:
        return {
            "network": self.net.to_dict(),
            "vnfs": [
                {"index": s.index, "sfc": s.sfc, "position": s.position,
                 "demand": [float(x) for x in s.demand], "sync_bandwidth": s.sync_bandwidth,
                 "backup_cost": s.backup_cost}
                for s in self.vnfs
            ],
            "sfcs": [
                {"id": s.id, "vnfs": list(s.vnfs), "max_downtime": s.max_downtime, "traffic_rate": s.traffic_rate}
                for s in self.sfcs
            ],
            "placement": {str(v): n for v, n in sorted(self.placement.items())},
            "backups": {str(v): n for v, n in sorted(self.backups.items())},
            "sync_routes": {str(v): [list(lk) for lk in r] for v, r in sorted(self.sync_routes.items())},
            "sync_bw": {str(v): b for v, b in sorted(self.sync_bw.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkState":
        net = PhysicalNetwork.from_dict(d["network"])
        vnfs = [VnfSpec(x["index"], x["sfc"], x["position"], np.asarray(x["demand"], dtype=float),
                        float(x["sync_bandwidth"]), float(x["backup_cost"])) for x in d["vnfs"]]
        sfcs = [SfcInstance(x["id"], list(x["vnfs"]), float(x["max_downtime"]), float(x["traffic_rate"]))
                for x in d["sfcs"]]
        return cls(
            net, vnfs, sfcs,
            placement={int(v): n for v, n in d["placement"].items()},
            backups={int(v): n for v, n in d.get("backups", {}).items()},
            sync_routes={int(v): [tuple(lk) for lk in r] for v, r in d.get("sync_routes", {}).items()},
            sync_bw={int(v): float(b) for v, b in d.get("sync_bw", {}).items()},
        )

    def copy(self) -> "NetworkState":
        return NetworkState(
            self.net, self.vnfs, self.sfcs, dict(self.placement), dict(self.backups),
            {v: list(r) for v, r in self.sync_routes.items()}, dict(self.sync_bw),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkState):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def embed_sfcs_random(net: PhysicalNetwork, n_sfcs: int, chain_length: int, rng: np.random.Generator,
                      substrate: Optional[SubstrateConfig] = None, sfc_cfg: Optional[SfcConfig] = None,
                      max_retries: int = 50) -> NetworkState:
    """Random feasible placement of ``n_sfcs`` chains of ``chain_length`` VNFs each.

    Stands in for an embedding optimizer: every VNF lands on a uniformly drawn
    NFV node that can still host it. A dead end restarts the whole draw.
    """
    sub = substrate or SubstrateConfig(node_count=len(net.nodes), nfv_count=len(net.nfv_nodes),
                                       n_resources=net.n_resources)
    sc = sfc_cfg or SfcConfig(n_sfcs=n_sfcs, chain_length=chain_length)
    P = net.n_resources
    for _ in range(max_retries):
        vnfs, sfcs, placement = [], [], {}
        cap = {n.id: n.capacity.copy() for n in net.nodes if n.is_nfv}
        ok = True
        for k in range(n_sfcs):
            members = []
            for h in range(chain_length):
                v = len(vnfs)
                demand = rng.uniform(sub.demand_low, sub.demand_high, size=P)
                hosts = [n for n in sorted(cap) if np.all(cap[n] >= demand)]
                if not hosts:
                    ok = False
                    break
                node = hosts[int(rng.integers(len(hosts)))]
                cap[node] = cap[node] - demand
                placement[v] = node
                vnfs.append(VnfSpec(v, k, h, demand, float(sub.sync_bandwidth), float(sub.backup_cost)))
                members.append(v)
            if not ok:
                break
            sfcs.append(SfcInstance(k, members, float(rng.uniform(*sc.downtime_range)),
                                    float(rng.uniform(*sc.traffic_range))))
        if ok:
            return NetworkState(net, vnfs, sfcs, placement)
    raise EmbeddingError(f"no feasible random embedding of {n_sfcs}x{chain_length} VNFs after {max_retries} retries")
