import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from pfrlab.network import (AntiAffinityViolation, CapacityExceeded, DuplicateBackup, NetworkState,
                            NoBackupPresent, SubstrateConfig, build_network, embed_sfcs_random, link_key)


def default_state(seed=0, **sub):
    cfg = SubstrateConfig(**sub)
    net = build_network(cfg.node_count, cfg.nfv_count, cfg)
    return embed_sfcs_random(net, 3, 3, np.random.default_rng(seed), cfg)


def test_default_network_is_full_nfv_mesh():
    net = build_network(5, 5)
    assert net.nfv_nodes == [0, 1, 2, 3, 4]
    assert len(net.links) == 10
    assert all(lk.bandwidth_capacity == 1000.0 for lk in net.links.values())


def test_forwarding_nodes_have_no_capacity_and_two_links():
    net = build_network(7, 5)
    for f in (5, 6):
        assert not net.nodes[f].is_nfv
        assert np.all(net.nodes[f].capacity == 0)
        assert net.graph.degree(f) == 2


@pytest.mark.parametrize("nodes,nfv", [(5, 1), (3, 4)])
def test_build_network_rejects_degenerate_sizes(nodes, nfv):
    with pytest.raises(ValueError):
        build_network(nodes, nfv)


@pytest.mark.parametrize("src,dst", [(5, 6), (6, 5), (0, 6), (7, 2)])
def test_shortest_path_is_lexicographically_smallest(src, dst):
    net = build_network(8, 5)
    expected = min(nx.all_shortest_paths(net.graph, src, dst))
    assert net.shortest_path(src, dst) == expected


def test_allocate_charges_node_and_link_then_release_restores():
    st_ = default_state()
    before = st_.to_dict()
    v = 0
    node = st_.best_backup_node(v)
    used = st_.node_used(node).copy()
    st_.allocate_backup(v, node)
    assert np.allclose(st_.node_used(node), used + st_.vnfs[v].demand)
    for lk in st_.sync_routes[v]:
        assert st_.link_residual(lk) == pytest.approx(1000.0 - st_.vnfs[v].sync_bandwidth)
    st_.release_backup(v)
    assert st_.to_dict() == before


def test_anti_affinity_and_duplicate_are_refused():
    st_ = default_state()
    v = 1
    with pytest.raises(AntiAffinityViolation):
        st_.allocate_backup(v, st_.placement[v])
    st_.allocate_backup(v, st_.best_backup_node(v))
    with pytest.raises(DuplicateBackup):
        st_.allocate_backup(v, st_.best_backup_node(v) or 0)


def test_node_capacity_violation_is_typed():
    st_ = default_state(node_capacity=40.0, demand_low=15.0, demand_high=20.0, seed=3)
    v = 0
    full = [n for n in st_.net.nfv_nodes if n != st_.placement[v]
            and np.any(st_.node_residual(n) < st_.vnfs[v].demand)]
    assert full, "fixture should leave at least one node too full"
    with pytest.raises(CapacityExceeded) as exc:
        st_.check_backup(v, full[0])
    assert exc.value.constraint == "node-capacity"


def test_link_bandwidth_violation_is_typed():
    st_ = default_state(sync_bandwidth=2000.0)
    v = 0
    other = next(n for n in st_.net.nfv_nodes if n != st_.placement[v])
    with pytest.raises(CapacityExceeded) as exc:
        st_.check_backup(v, other)
    assert exc.value.constraint == "link-bandwidth"
    assert st_.best_backup_node(v) is None


def test_release_without_backup():
    with pytest.raises(NoBackupPresent):
        default_state().release_backup(0)


def test_best_backup_node_matches_brute_force():
    for seed in range(10):
        st_ = default_state(seed)
        for v in range(len(st_.vnfs)):
            cands = st_.feasible_backup_nodes(v)
            expected = None
            if cands:
                top = max(float(st_.node_residual(n).sum()) for n in cands)
                expected = min(n for n in cands if float(st_.node_residual(n).sum()) == top)
            assert st_.best_backup_node(v) == expected


def test_grant_sync_bandwidth_never_exceeds_route_headroom():
    st_ = default_state()
    v = 2
    st_.allocate_backup(v, st_.best_backup_node(v))
    granted = st_.grant_sync_bandwidth(v, 5000.0)
    assert granted == pytest.approx(1000.0)
    assert all(st_.link_residual(lk) >= -1e-9 for lk in st_.sync_routes[v])
    assert st_.audit() == []


def test_promote_moves_active_instance():
    st_ = default_state()
    v = 4
    node = st_.best_backup_node(v)
    st_.allocate_backup(v, node)
    st_.promote_backup(v)
    assert st_.placement[v] == node and v not in st_.backups
    assert st_.audit() == []


def test_serialization_roundtrip_is_json():
    st_ = default_state(5)
    st_.allocate_backup(3, st_.best_backup_node(3))
    text = json.dumps(st_.to_dict(), sort_keys=True)
    again = NetworkState.from_dict(json.loads(text))
    assert again == st_
    assert again.audit() == []


def test_embedding_is_seeded_and_feasible():
    a, b = default_state(11), default_state(11)
    assert a == b
    assert default_state(12) != a
    assert len(a.vnfs) == 9 and len(a.sfcs) == 3
    assert a.audit() == []


@given(ops=st.lists(st.tuples(st.integers(0, 8), st.sampled_from(["alloc", "release", "grant", "promote"]),
                              st.floats(0, 3000)), max_size=40),
       seed=st.integers(0, 50))
def test_random_operation_sequences_keep_books_clean(ops, seed):
    st_ = default_state(seed)
    for v, op, x in ops:
        try:
            if op == "alloc":
                node = st_.best_backup_node(v)
                if node is not None:
                    st_.allocate_backup(v, node)
            elif op == "release":
                st_.release_backup(v)
            elif op == "grant":
                st_.grant_sync_bandwidth(v, x)
            else:
                st_.promote_backup(v)
        except (NoBackupPresent, DuplicateBackup):
            pass
        assert st_.audit() == []
        ratios = st_.node_available_ratios()
        assert np.all((ratios >= 0) & (ratios <= 1))
        assert all(st_.link_residual(lk) >= -1e-9 for lk in st_.net.links)


def test_link_key_is_order_free():
    assert link_key(3, 1) == link_key(1, 3) == (1, 3)
