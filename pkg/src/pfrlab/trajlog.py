"""JSON-lines trajectory log and offline replay checks."""
from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Iterable

LOG_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def episode_records(index: int, traj) -> Iterable[str]:
    yield _dumps({"type": "episode", "version": LOG_VERSION, "episode": index, "header": traj.header})
    for t, info in enumerate(traj.infos):
        rec = {"type": "slot", "episode": index, **{k: v for k, v in info.items() if k != "flags"},
               "flags": {str(k): v for k, v in info["flags"].items()},
               "reward": dataclasses.asdict(traj.breakdowns[t])}
        yield _dumps(rec)


def write_log(path, trajs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for i, tr in enumerate(trajs):
            for line in episode_records(i, tr):
                fh.write(line + "\n")
    return path


def read_log(path) -> list:
    """Return a list of episodes: {"header": ..., "slots": [...]}."""
    episodes: list = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            rec = json.loads(line)
            if rec["type"] == "episode":
                if rec.get("version") != LOG_VERSION:
                    raise ValueError(f"line {n}: unsupported log version {rec.get('version')}")
                episodes.append({"header": rec["header"], "slots": []})
            elif rec["type"] == "slot":
                if not episodes or rec["episode"] != len(episodes) - 1:
                    raise ValueError(f"line {n}: slot record outside its episode")
                episodes[-1]["slots"].append(rec)
            else:
                raise ValueError(f"line {n}: unknown record type {rec['type']!r}")
    return episodes


def replay_aoi(slots: list, slot_duration: float = 1.0) -> list:
    """Recompute ages from the logged report flags; return (slot, vnf, logged, expected) mismatches.

    Age starts unbounded, becomes ``slot_duration`` on a report and grows by ``slot_duration`` otherwise.
    """
    if not slots:
        return []
    n = len(slots[0]["aoi"])
    age = [math.inf] * n
    bad = []
    for rec in slots:
        for v in range(n):
            age[v] = slot_duration if rec["reported"][v] else age[v] + slot_duration
            logged = math.inf if rec["aoi"][v] is None else rec["aoi"][v]
            if logged != age[v]:
                bad.append((rec["slot"], v, logged, age[v]))
    return bad
