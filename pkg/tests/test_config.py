"""Run-config schema: defaults, overrides, and rejection paths."""

import json

import pytest

from tlcl import config
from tlcl.config import ConfigError, RunConfig
from tlcl.nav import EnvSpec


def test_empty_doc_gives_defaults():
    cfg = config.loads("{}")
    assert cfg == RunConfig()
    assert cfg.mining.zeta == 0.01
    assert cfg.crl.steps == 200_000
    assert cfg.ilcl.iterations == 3
    assert cfg.env is None


def test_nested_overrides():
    cfg = config.loads('{"mining": {"zeta": 0.05}, "crl": {"steps": 1000},'
                       ' "ilcl": {"iterations": 2}, "seed": 7}')
    assert cfg.mining.zeta == 0.05
    assert cfg.crl.steps == 1000
    assert cfg.ilcl.iterations == 2
    assert cfg.seed == 7
    # untouched sections keep defaults
    assert cfg.mining.population == 64
    assert cfg.crl.alpha == 0.5


@pytest.mark.parametrize("doc,fragment", [
    ('{"minings": {}}', "minings"),
    ('{"mining": {"zeta": 0.1, "zap": 1}}', "mining.zap"),
    ('{"crl": {"alpha": 2.0}}', "alpha"),
    ('{"ilcl": {"iterations": 0}}', "iterations"),
    ('{"mining": {"population": 10}}', "population"),
    ('{"seed": "zero"}', "seed"),
    ('{"seed": true}', "seed"),
    ('{"task": 5}', "task"),
    ('{"env": {"side": 1.0}}', "env"),
    ('{"env": [1, 2]}', "env"),
    ('{"mining": 3}', "mining"),
    ('not json', "JSON"),
])
def test_rejection_paths(doc, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config.loads(doc)


def test_float_field_accepts_int():
    cfg = config.loads('{"mining": {"zeta": 0}}')
    assert cfg.mining.zeta == 0


def test_tuple_field_coerces_from_list():
    cfg = config.loads('{"mining": {"selected_dims": [0, 4, 6]}}')
    assert cfg.mining.selected_dims == (0, 4, 6)
    with pytest.raises(ConfigError, match="selected_dims"):
        config.loads('{"mining": {"selected_dims": ["a"]}}')


def test_null_for_optional_fields():
    cfg = config.loads('{"out": null, "env": null}')
    assert cfg.out is None and cfg.env is None


def test_env_section_builds_spec():
    doc = {
        "env": {
            "side": 1.5, "horizon": 50, "start": [0.1, 0.1],
            "goal": [1.2, 1.2],
            "regions": [
                {"color": "red", "center": [0.7, 0.7], "radius": 0.1}],
        }
    }
    cfg = config.loads(json.dumps(doc))
    assert isinstance(cfg.env, EnvSpec)
    assert cfg.env.side == 1.5
    assert cfg.env.regions[0].color == "red"


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "nope.json")


def test_default_doc_round_trips():
    doc = config.default_doc()
    assert config.loads(json.dumps(doc)) == RunConfig()


def test_to_doc_with_env_round_trips():
    from tlcl.nav import default_train_spec

    cfg = RunConfig(env=default_train_spec(), task="nav1", seed=4)
    again = config.loads(json.dumps(config.to_doc(cfg)))
    assert again.env == cfg.env
    assert again.seed == 4
