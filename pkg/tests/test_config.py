import pytest
import yaml

from rlscale.config import (
    DEFAULT_LADDER, ExperimentConfig, config_from_dict, dump_config, load_config,
)
from rlscale.errors import ConfigError
from rlscale.grpo import FULL_SCALE_REFERENCE
from rlscale.policy import count_params

FULL_SCALE_KEYS = ("learning_rate", "batch_size", "kl_loss_coefficient", "rollout_temperature_train",
              "rollout_temperature_eval", "clip_ratio", "group_size")


def test_default_round_trip(tmp_path):
    cfg = ExperimentConfig()
    assert config_from_dict(cfg.to_dict()) == cfg
    path = tmp_path / "c.yaml"
    dump_config(cfg, path)
    assert load_config(path) == cfg


def test_full_scale_keys_present_with_reference_values(tmp_path):
    path = tmp_path / "c.yaml"
    dump_config(ExperimentConfig(), path)
    doc = yaml.safe_load(path.read_text())
    for key in FULL_SCALE_KEYS:
        assert key in doc["train"]
    ref = doc["train"]["full_scale_reference"]
    assert ref["learning_rate"] == 1.0e-6
    assert ref["batch_size"] == 512
    assert ref["kl_loss_coefficient"] == 0.001
    assert ref["rollout_temperature_train"] == 1.0
    assert ref["rollout_temperature_eval"] == 0.7
    assert ref["clip_ratio"] == 0.2
    assert ref == FULL_SCALE_REFERENCE


def test_toy_defaults_active():
    cfg = ExperimentConfig()
    assert cfg.train.learning_rate == 0.1
    assert cfg.train.kl_coeff == 0.001
    assert cfg.train.train_temperature == 1.0 and cfg.train.eval_temperature == 0.7
    assert cfg.train.clip_ratio == 0.2


def test_default_ladder_spans_100x():
    m = ExperimentConfig().model
    ns = [count_params(m.arch(w)) for w in DEFAULT_LADDER]
    assert ns == sorted(ns) and len(ns) == 5
    assert ns[-1] / ns[0] >= 100


def test_partial_config_fills_defaults():
    cfg = config_from_dict({"train": {"group_size": 4, "learning_rate": 0.05}})
    assert cfg.train.group_size == 4 and cfg.train.learning_rate == 0.05
    assert cfg.schedule == ExperimentConfig().schedule


def test_full_scale_reference_is_ignored_on_load():
    cfg = config_from_dict({"train": {"full_scale_reference": {"learning_rate": 123.0}}})
    assert cfg.train.learning_rate == 0.1


@pytest.mark.parametrize("raw,field", [
    ({"train": {"clip_ratio": 1.5}}, "train"),
    ({"train": {"lr": 0.1}}, "train.lr"),
    ({"train": {"batch_size": "8"}}, "train.batch_size"),
    ({"model": {"hidden_dim": 0}}, "hidden_dim"),
    ({"model": {"ladder": []}}, "model.ladder"),
    ({"data": {"family": "sorting"}}, "data"),
    ({"data": {"pool_size": 5}, "schedule": {"total_samples": 100, "reuse_factor": 3}}, "reuse_factor"),
    ({"run": {"replicates": 0}}, "run.replicates"),
    ({"run": {"eval_every": 0}}, "run.eval_every"),
    ({"run": {"max_flops": -1}}, "run.max_flops"),
    ({"train": {"max_response_len": 1}}, "train.max_response_len"),
    ({"model": {"context_window": 3}}, "model.context_window"),
    ({"extra": {}}, "extra"),
])
def test_field_level_errors(raw, field):
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert field in str(info.value)


def test_bad_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("train: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)
