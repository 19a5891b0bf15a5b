import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pfrlab.env import Action, EnvConfig, RewardConfig
from pfrlab.failure import Health
from pfrlab.metrics import (AccuracyReport, COUNT_KEYS, OraclePolicy, RandomPolicy, ReactivePolicy,
                            dwell_conditional_bp_rate, evaluate, robustness_probe, score_slots)

N, W, C = Health.NORMAL, Health.WARNING, Health.CRITICAL


def slot(kinds, actions, switched, has_backup, recovery=None):
    V = len(kinds)
    return {"true_kind": kinds, "action": actions, "switched": switched, "has_backup": has_backup,
            "recovery": recovery or [0] * V, "critical": [int(k == C) for k in kinds]}


def test_hand_counted_slots():
    infos = [
        slot([C, W, N, N], [Action.SS, Action.BP, Action.BR, Action.NOOP], [1, 0, 0, 0], [1, 0, 1, 0], [1, 0, 0, 0]),
        slot([C, W, N, N], [Action.NOOP, Action.SS, Action.NOOP, Action.BP], [0, 1, 0, 0], [0, 0, 1, 0]),
        slot([C, N, N, N], [Action.BP, Action.NOOP, Action.NOOP, Action.NOOP], [1, 0, 0, 0], [0, 0, 0, 0], [2, 0, 0, 0]),
    ]
    rep = score_slots(infos)
    assert rep.counts == {"critical": 3, "critical_correct": 2, "warning": 2, "warning_bp": 1,
                          "normal": 7, "normal_correct": 5, "pfr": 1, "rfr": 1, "false_alarms": 2}
    assert rep.csa == pytest.approx(2 / 3) and rep.wsa == 0.5 and rep.nsa == pytest.approx(5 / 7)
    assert rep.pfr_accuracy == 0.5 and rep.rfr_accuracy == 0.5


def test_empty_denominators_are_none():
    rep = score_slots([slot([N], [Action.NOOP], [0], [0])])
    assert rep.csa is None and rep.wsa is None and rep.pfr_accuracy is None and rep.rfr_accuracy is None
    assert rep.nsa == 1.0
    d = rep.to_dict()
    assert d["csa"] is None and d["counts"]["normal"] == 1


@given(st.lists(st.tuples(st.sampled_from([N, W, C]), st.integers(0, 3), st.integers(0, 1),
                          st.integers(0, 1), st.integers(0, 2)), min_size=1, max_size=60))
def test_ratios_follow_counts(records):
    infos = [slot([k], [a], [b], [has_backup], [r]) for k, a, b, has_backup, r in records]
    rep = score_slots(infos)
    c = rep.counts
    assert c["critical"] + c["warning"] + c["normal"] == len(records)
    for num, den, val in (("critical_correct", "critical", rep.csa), ("warning_bp", "warning", rep.wsa),
                          ("normal_correct", "normal", rep.nsa)):
        assert (val is None) == (c[den] == 0)
        if val is not None:
            assert 0 <= val <= 1 and val == c[num] / c[den]
    if rep.pfr_accuracy is not None:
        assert rep.pfr_accuracy + rep.rfr_accuracy == pytest.approx(1.0)
    merged = rep.merge(rep)
    assert all(merged.counts[k] == 2 * c[k] for k in COUNT_KEYS)
    assert merged.csa == rep.csa


def test_random_policy_critical_accuracy_near_half():
    rep = evaluate(RandomPolicy(), EnvConfig(), episodes=50, seed=3)
    # two of four kinds (BP, SS) resolve a critical VNF
    assert rep.counts["critical"] > 300
    assert abs(rep.csa - 0.5) < 0.05


def test_dwell_conditional_rates():
    cfg = EnvConfig()
    _, trajs = evaluate(OraclePolicy(), cfg, episodes=20, seed=1, keep_trajectories=True)
    rates = dwell_conditional_bp_rate(trajs)
    assert rates and all(r == 1.0 for r, _ in rates.values())
    _, trajs = evaluate(RandomPolicy(), cfg, episodes=40, seed=1, keep_trajectories=True, greedy=False)
    rates = dwell_conditional_bp_rate(trajs)
    hits = sum(r * n for r, n in rates.values())
    total = sum(n for _, n in rates.values())
    assert abs(hits / total - 0.25) < 0.03


def test_reactive_recoveries_are_all_reactive():
    rep = evaluate(ReactivePolicy(), EnvConfig(), episodes=20, seed=2)
    assert rep.counts["rfr"] > 0 and rep.counts["pfr"] == 0
    assert rep.rfr_accuracy == 1.0 and rep.csa == 1.0
    assert rep.wsa == 0.0


def test_counts_invariant_to_reward_rescaling():
    base = EnvConfig()
    scaled = dataclasses.replace(base, reward=RewardConfig(sla_penalty=7.0, false_alarm_penalty=0.3,
                                                           term_weights=(2.0, 5.0, 0.5), bonus_pfr=3.0))
    a = evaluate(RandomPolicy(), base, episodes=10, seed=4, greedy=False)
    b = evaluate(RandomPolicy(), scaled, episodes=10, seed=4, greedy=False)
    assert a.counts == b.counts
    assert a.mean_return != b.mean_return


def test_evaluate_is_deterministic():
    a = evaluate(RandomPolicy(), EnvConfig(), episodes=8, seed=11, greedy=False)
    b = evaluate(RandomPolicy(), EnvConfig(), episodes=8, seed=11, greedy=False)
    c = evaluate(RandomPolicy(), EnvConfig(), episodes=8, seed=12, greedy=False)
    assert a.to_dict() == b.to_dict() and a.to_dict() != c.to_dict()


def test_evaluate_refuses_schema_mismatch():
    with pytest.raises(ValueError, match="schema"):
        evaluate(RandomPolicy(), EnvConfig(), episodes=1, schema_hash="0" * 16)


@pytest.mark.parametrize("fresh", range(10))
def test_oracle_is_robust_to_fresh_regimes(fresh):
    rep = robustness_probe(OraclePolicy(), EnvConfig(), fresh_seed=1000 + fresh, episodes=5)
    assert rep.csa in (1.0, None)
    assert rep.pfr_accuracy in (1.0, None)
    assert rep.counts["false_alarms"] == 0


def test_accuracy_report_defaults():
    rep = AccuracyReport()
    assert rep.episodes == 0 and rep.csa is None and rep.mean_return is None
