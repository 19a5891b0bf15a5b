"""Run configuration: one YAML document with a section per module, strictly validated."""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .env import EnvConfig, RewardConfig
from .failure import FailureRanges
from .monitoring import MonitoringConfig
from .network import SfcConfig, SubstrateConfig
from .trainers.loop import AgentConfig, RunSettings


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class EnvironmentSection:
    statelet_bits_per_packet: float = 100.0
    seconds_per_slot: float = 1.0
    substrate_seed: int = 0
    regenerate_substrate: bool = False
    debug_audit: bool = False


@dataclass
class RunSection(RunSettings):
    episode_length: int = 100
    output_dir: Optional[str] = None


@dataclass
class RunConfig:
    substrate: SubstrateConfig = field(default_factory=SubstrateConfig)
    sfc: SfcConfig = field(default_factory=SfcConfig)
    failure: FailureRanges = field(default_factory=FailureRanges)
    monitoring: MonitoringConfig = field(default_factory=MonitoringConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    agent: AgentConfig = field(default_factory=AgentConfig)
    run: RunSection = field(default_factory=RunSection)

    def env_config(self) -> EnvConfig:
        e = self.environment
        return EnvConfig(self.substrate, self.sfc, self.failure, self.monitoring, self.reward,
                         episode_length=self.run.episode_length, statelet_bits_per_packet=e.statelet_bits_per_packet,
                         seconds_per_slot=e.seconds_per_slot, substrate_seed=e.substrate_seed,
                         regenerate_substrate=e.regenerate_substrate, debug_audit=e.debug_audit)

    def run_settings(self) -> RunSettings:
        names = [f.name for f in dataclasses.fields(RunSettings)]
        return RunSettings(**{n: getattr(self.run, n) for n in names})

    def validate(self) -> None:
        for name in ("substrate", "sfc", "failure", "monitoring", "reward", "agent", "run"):
            try:
                getattr(self, name).validate()
            except (ValueError, TypeError) as exc:
                raise ConfigError(name, str(exc)) from None
        try:
            self.env_config().validate()
        except ValueError as exc:
            raise ConfigError("environment", str(exc)) from None

    def to_dict(self) -> dict:
        return _to_plain(dataclasses.asdict(self))


def _to_plain(x):
    if isinstance(x, dict):
        return {k: _to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_plain(v) for v in x]
    return x


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    if tp is Any:
        return value
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, path)
    if tp is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return tuple(value)
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
        return dict(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data, path: str = ""):
    """Build dataclass ``cls`` from nested mappings; unknown keys are errors."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, f"unknown key (valid keys: {', '.join(sorted(names))})")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(hints[name], value, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def load_config(path=None, overrides: Optional[list] = None) -> RunConfig:
    """Read YAML (or defaults when ``path`` is None), apply ``key.path=value`` overrides, validate."""
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("", f"cannot parse {path}: {exc}") from None
        except OSError as exc:
            raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    for item in overrides or []:
        apply_override(data, item)
    cfg = from_dict(RunConfig, data)
    cfg.validate()
    return cfg


def apply_override(data: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(item, "override must look like section.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot override inside a scalar")
    node[parts[-1]] = yaml.safe_load(raw)


def defaults_yaml() -> str:
    return yaml.safe_dump(RunConfig().to_dict(), sort_keys=False, default_flow_style=False)
