"""Run-config parsing, validation, hashing and the reference document."""

import dataclasses
import json

import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from eqa_forge.config import (
    ConfigError,
    DatasetConfig,
    EvalConfig,
    RunConfig,
    SEED_ENV_VAR,
    config_from_mapping,
    config_hash,
    config_to_dict,
    effective_seed,
    load_config,
    reference_toml,
)


def test_empty_mapping_gives_defaults():
    assert config_from_mapping({}) == RunConfig()


def test_reference_toml_roundtrips_to_defaults():
    cfg = config_from_mapping(tomllib.loads(reference_toml()))
    assert cfg == RunConfig()


def test_reference_toml_mentions_optional_fields():
    text = reference_toml()
    assert "# lr is optional" in text
    assert "# ratio is optional" in text


def test_dict_roundtrip_preserves_overrides():
    cfg = config_from_mapping(
        {
            "seed": 7,
            "env": {"n_rooms": 2, "density": 99.5},
            "episode": {"d0_offsets": [5, 15], "render": {"epsilon": 0.1}},
            "train": {"lr": 0.01, "weighted": False},
            "eval": {"offsets": [5], "navigators": ["random"]},
        }
    )
    assert cfg.seed == 7
    assert cfg.env.n_rooms == 2
    assert cfg.episode.d0_offsets == (5, 15)
    assert cfg.episode.render.epsilon == 0.1
    assert cfg.train.lr == 0.01
    assert cfg.eval.navigators == ("random",)
    again = config_from_mapping(json.loads(json.dumps(config_to_dict(cfg))))
    assert again == cfg


@pytest.mark.parametrize(
    "doc,needle",
    [
        ({"nope": 1}, "top level"),
        ({"env": {"rooms": 3}}, "env"),
        ({"episode": {"render": {"fov": 90}}}, "episode.render"),
    ],
)
def test_unknown_keys_rejected_with_path(doc, needle):
    with pytest.raises(ConfigError, match=needle):
        config_from_mapping(doc)


@pytest.mark.parametrize(
    "doc",
    [
        {"seed": "zero"},
        {"seed": 1.5},
        {"seed": True},
        {"env": {"density": "high"}},
        {"episode": {"d0_offsets": 10}},
        {"features": {"category_one_hot": 1}},
        {"train": {"lr": "fast"}},
        {"env": 3},
    ],
)
def test_type_mismatches_rejected(doc):
    with pytest.raises(ConfigError):
        config_from_mapping(doc)


def test_int_accepted_for_float_field():
    cfg = config_from_mapping({"env": {"density": 300}})
    assert cfg.env.density == 300.0
    assert isinstance(cfg.env.density, float)


def test_validation_errors_carry_section_path():
    with pytest.raises(ConfigError, match="episode"):
        config_from_mapping({"episode": {"entropy_threshold": 1.5}})
    with pytest.raises(ConfigError, match="eval"):
        config_from_mapping({"eval": {"navigators": ["teleport"]}})
    with pytest.raises(ConfigError, match="dataset"):
        config_from_mapping({"dataset": {"split_train": 0.9, "split_val": 0.9}})


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(offsets=())
    with pytest.raises(ValueError):
        EvalConfig(ci_level=1.0)
    with pytest.raises(ValueError):
        EvalConfig(split="holdout")
    assert DatasetConfig().split_spec == {"train": 0.6, "val": 0.2, "test": 0.2}


def test_optional_null_and_value():
    assert config_from_mapping({"train": {"lr": None}}).train.lr is None
    assert config_from_mapping({"train": {"ratio": 4}}).train.ratio == 4.0


def test_hash_stable_and_sensitive():
    base = RunConfig()
    assert config_hash(base) == config_hash(config_from_mapping({}))
    bumped = config_from_mapping({"seed": 1})
    assert config_hash(bumped) != config_hash(base)
    assert len(config_hash(base)) == 16
    int(config_hash(base), 16)  # hex digest


def test_load_config_toml_and_json(tmp_path):
    toml_path = tmp_path / "run.toml"
    toml_path.write_text('seed = 3\n[env]\nn_rooms = 2\n')
    cfg = load_config(toml_path)
    assert (cfg.seed, cfg.env.n_rooms) == (3, 2)

    json_path = tmp_path / "run.json"
    json_path.write_text(json.dumps({"seed": 4, "train": {"lr": None}}))
    cfg = load_config(json_path)
    assert cfg.seed == 4 and cfg.train.lr is None


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1")
    with pytest.raises(ConfigError):
        load_config(bad)
    other = tmp_path / "run.yaml"
    other.write_text("seed: 1")
    with pytest.raises(ConfigError, match="toml or .json"):
        load_config(other)


def test_effective_seed_env_override(monkeypatch):
    cfg = config_from_mapping({"seed": 2})
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    assert effective_seed(cfg) == 2
    monkeypatch.setenv(SEED_ENV_VAR, "11")
    assert effective_seed(cfg) == 11
    monkeypatch.setenv(SEED_ENV_VAR, "eleven")
    with pytest.raises(ConfigError):
        effective_seed(cfg)


def test_config_covers_every_module_parameter():
    # one flat document should reach every stage's dataclass
    doc = config_to_dict(RunConfig())
    assert set(doc) == {
        "seed", "env", "episode", "features", "policy", "train", "eval", "dataset",
    }
    assert {"motion", "render"} <= set(doc["episode"])
    assert "epsilon" in doc["episode"]["render"]
    assert "forward_step" in doc["episode"]["motion"]
    assert "bbox_x" in doc["episode"]
    assert "entropy_threshold" in doc["episode"]
    assert "hidden_dim" in doc["policy"]
    assert "epochs" in doc["train"]
    assert "offsets" in doc["eval"]


def test_frozen_config_rejects_mutation():
    cfg = RunConfig()
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.seed = 1
