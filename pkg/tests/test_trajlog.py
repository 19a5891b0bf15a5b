import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pfrlab.env import EnvConfig
from pfrlab.metrics import RandomPolicy
from pfrlab.monitoring import MonitoringConfig
from pfrlab.trainers.rollout import EnvPool
from pfrlab.trajlog import LOG_VERSION, read_log, replay_aoi, write_log


def collect(n=2, length=15, seed=0, loss=0.0):
    cfg = EnvConfig(episode_length=length, monitoring=MonitoringConfig(loss_prob=loss))
    return EnvPool(cfg, n).run(RandomPolicy(), [seed + i for i in range(n)], np.random.default_rng(seed))


def test_roundtrip_preserves_slots(tmp_path):
    trajs = collect()
    write_log(tmp_path / "t.jsonl", trajs)
    eps = read_log(tmp_path / "t.jsonl")
    assert len(eps) == 2
    for ep, tr in zip(eps, trajs):
        assert ep["header"]["seed"] == tr.header["seed"]
        assert [s["action"] for s in ep["slots"]] == [i["action"] for i in tr.infos]
        assert [s["reward"]["total"] for s in ep["slots"]] == pytest.approx(list(tr.rewards), abs=1e-12)


def test_lines_are_compact_sorted_json(tmp_path):
    write_log(tmp_path / "t.jsonl", collect(1, 3))
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    first = json.loads(lines[0])
    assert first["type"] == "episode" and first["version"] == LOG_VERSION
    for line in lines:
        rec = json.loads(line)
        assert line == json.dumps(rec, sort_keys=True, separators=(",", ":"))


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000), loss=st.sampled_from([0.0, 0.3]))
def test_replayed_ages_match_log(tmp_path_factory, seed, loss):
    path = tmp_path_factory.mktemp("log") / "t.jsonl"
    write_log(path, collect(1, 25, seed, loss))
    (ep,) = read_log(path)
    assert replay_aoi(ep["slots"]) == []


def test_replay_detects_tampering(tmp_path):
    write_log(tmp_path / "t.jsonl", collect(1, 10))
    (ep,) = read_log(tmp_path / "t.jsonl")
    ep["slots"][5]["aoi"][0] = 99.0
    bad = replay_aoi(ep["slots"])
    assert bad and bad[0][:3] == (5, 0, 99.0)


def test_first_slot_age_is_unbounded(tmp_path):
    write_log(tmp_path / "t.jsonl", collect(1, 3))
    (ep,) = read_log(tmp_path / "t.jsonl")
    assert all(a is None for a in ep["slots"][0]["aoi"])
    assert replay_aoi([]) == []


@pytest.mark.parametrize("lines, msg", [
    (['{"type": "slot", "episode": 0}'], "outside"),
    (['{"type": "episode", "version": 99, "header": {}}'], "version"),
    (['{"type": "mystery"}'], "unknown"),
])
def test_read_log_validates(tmp_path, lines, msg):
    p = tmp_path / "bad.jsonl"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match=msg):
        read_log(p)
