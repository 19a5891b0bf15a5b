import pytest
import yaml

from pfrlab.config import ConfigError, RunConfig, apply_override, defaults_yaml, load_config


def test_defaults_roundtrip_through_yaml(tmp_path):
    p = tmp_path / "d.yaml"
    p.write_text(defaults_yaml())
    cfg = load_config(p)
    assert cfg.to_dict() == RunConfig().to_dict()
    assert cfg.env_config().schema().hash == RunConfig().env_config().schema().hash


def test_defaults_are_block_style():
    text = defaults_yaml()
    assert "{" not in text.replace("stop_when: {}", "")
    assert yaml.safe_load(text)["agent"]["ppo"]["clip"] == 0.2


def test_unknown_key_names_its_path(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("agent:\n  ppo:\n    clipp: 0.3\n")
    with pytest.raises(ConfigError) as err:
        load_config(p)
    assert err.value.path == "agent.ppo.clipp"
    assert "clip" in str(err.value)


@pytest.mark.parametrize("override, path", [
    ("run.iterations=ten", "run.iterations"),
    ("monitoring.loss_prob=yes", "monitoring.loss_prob"),
    ("environment.debug_audit=1", "environment.debug_audit"),
    ("sfc.downtime_range=0.2", "sfc.downtime_range"),
])
def test_type_errors_name_their_path(override, path):
    with pytest.raises(ConfigError) as err:
        load_config(None, [override])
    assert err.value.path == path


@pytest.mark.parametrize("override, section", [
    ("monitoring.loss_prob=1.5", "monitoring"),
    ("agent.kind=dqn", "agent"),
    ("run.eval_every=0", "run"),
    ("agent.ppo.credit=team", "agent"),
])
def test_range_errors_name_their_section(override, section):
    with pytest.raises(ConfigError) as err:
        load_config(None, [override])
    assert err.value.path == section


def test_overrides_apply_and_parse_yaml_scalars():
    cfg = load_config(None, ["run.iterations=7", "agent.ppo.gamma=1", "run.stop_when={csa: 0.9}",
                             "sfc.downtime_range=[0.2, 0.3]"])
    assert cfg.run.iterations == 7
    assert cfg.agent.ppo.gamma == 1.0 and isinstance(cfg.agent.ppo.gamma, float)
    assert cfg.run.stop_when == {"csa": 0.9}
    assert cfg.sfc.downtime_range == (0.2, 0.3)


def test_malformed_override():
    with pytest.raises(ConfigError):
        apply_override({}, "run.iterations")


def test_unreadable_and_unparsable_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("run: [unclosed\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(p)


def test_environment_section_reaches_env_config():
    cfg = load_config(None, ["environment.substrate_seed=9", "run.episode_length=20",
                             "environment.debug_audit=true"])
    env = cfg.env_config()
    assert env.substrate_seed == 9 and env.episode_length == 20 and env.debug_audit
    assert cfg.run_settings().iterations == cfg.run.iterations
