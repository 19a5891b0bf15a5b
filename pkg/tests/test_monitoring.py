import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pfrlab.monitoring import (AGE_CAP, PER_VNF_FEATURES, AoiTracker, MonitoringConfig, ObservationSchema,
                               build_observation, encode_age, freshness_violations)

kinds_seq = st.lists(st.lists(st.integers(1, 3), min_size=3, max_size=3), min_size=1, max_size=60)


def reference_ages(seq, max_age, step=1.0):
    """Independent replay: report on change or when the next age would exceed max_age."""
    n = len(seq[0])
    age, last, out = [math.inf] * n, [0] * n, []
    for kinds in seq:
        sent = []
        for v, k in enumerate(kinds):
            s = k != last[v] or age[v] + step > max_age[k]
            age[v] = step if s else age[v] + step
            last[v] = k
            sent.append(s)
        out.append((list(age), sent))
    return out


@given(seq=kinds_seq)
def test_tracker_matches_reference_recurrence(seq):
    tr = AoiTracker(3, MonitoringConfig())
    max_age = {1: 2.0, 2: 2.0, 3: 1.0}
    rng = np.random.default_rng(0)
    for (ages, sent), kinds in zip(reference_ages(seq, max_age), seq):
        mask = tr.tick(kinds, rng)
        assert mask.tolist() == sent
        assert tr.age.tolist() == ages
        assert freshness_violations(tr, kinds) == 0


@given(seq=kinds_seq, loss=st.floats(0, 1), seed=st.integers(0, 1000))
def test_age_follows_report_flags_under_loss(seq, loss, seed):
    tr = AoiTracker(3, MonitoringConfig(loss_prob=loss))
    rng = np.random.default_rng(seed)
    prev = np.full(3, np.inf)
    for kinds in seq:
        sent = tr.tick(kinds, rng)
        expected = np.where(sent, 1.0, prev + 1.0)
        assert np.array_equal(tr.age, expected)
        prev = tr.age.copy()


def test_state_change_forces_report_even_when_fresh():
    tr = AoiTracker(1, MonitoringConfig(max_age_normal=10, max_age_warning=10, max_age_critical=10))
    rng = np.random.default_rng(0)
    assert tr.tick([1], rng).tolist() == [True]
    assert tr.tick([1], rng).tolist() == [False]
    assert tr.tick([2], rng).tolist() == [True]
    assert tr.reported_kind.tolist() == [2]


def test_total_loss_never_reports():
    tr = AoiTracker(2, MonitoringConfig(loss_prob=1.0))
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert not tr.tick([2, 3], rng).any()
    assert np.all(np.isinf(tr.age)) and tr.reported_kind.tolist() == [0, 0]


def test_monitoring_config_validation():
    with pytest.raises(ValueError):
        MonitoringConfig(max_age_critical=0.5).validate()
    with pytest.raises(ValueError):
        MonitoringConfig(loss_prob=1.5).validate()


def test_schema_width_and_hash():
    s = ObservationSchema(9, 5, 3)
    assert s.width == 9 * len(PER_VNF_FEATURES) + 15
    assert s.hash == ObservationSchema(9, 5, 3).hash
    assert s.hash != ObservationSchema(9, 6, 3).hash


def test_age_encoding():
    enc = encode_age(np.array([1.0, 3.0, 100.0, np.inf]))
    assert enc.tolist() == [1 / AGE_CAP, 3 / AGE_CAP, (AGE_CAP - 1) / AGE_CAP, 1.0]


def test_observation_layout():
    tr = AoiTracker(2)
    tr.tick([2, 1], np.random.default_rng(0))
    ratios = np.arange(6).reshape(2, 3) / 10
    obs = build_observation(tr, [1, 0], [0.5, 20.0], ratios)
    assert obs.shape == (ObservationSchema(2, 2, 3).width,)
    block = obs[:12].reshape(2, 6)
    assert block[0].tolist() == [0, 1, 0, 1 / AGE_CAP, 1, 0.5]
    assert block[1].tolist() == [1, 0, 0, 1 / AGE_CAP, 0, 10.0]  # backlog clipped
    assert obs[12:].tolist() == ratios.ravel().tolist()
