import json

import pytest

from ieegspeech.config import PipelineConfig, default_config
from ieegspeech.errors import ConfigError


def test_defaults_build_every_module_config():
    cfg = PipelineConfig()
    assert cfg.seed == 42
    assert cfg.train_config().seed == 42 and cfg.ihpr_config().seed == 42
    assert cfg.ihpr_config().lam == 0.1 and cfg.ihpr_config().gamma == 0.01
    assert cfg.synthetic_config().duration == 20.0
    assert cfg.feature_config().theta == (4.0, 8.0)


def test_echo_round_trip(tmp_path):
    cfg = PipelineConfig({"train": {"lr": 0.01}})
    cfg.write(tmp_path / "c.json")
    again = PipelineConfig.load(tmp_path / "c.json")
    assert again.data == cfg.data
    assert json.loads(cfg.to_json())["train"]["lr"] == 0.01


def test_ints_promote_to_float():
    assert PipelineConfig({"train": {"lr": 1}}).data["train"]["lr"] == 1.0


@pytest.mark.parametrize("override,key", [
    ({"bogus": 1}, "bogus"),
    ({"train": {"lrr": 1}}, "train.lrr"),
    ({"train": {"lr": "fast"}}, "train.lr"),
    ({"train": {"batch": 1.5}}, "train.batch"),
    ({"transformer": {"use_pe": 1}}, "transformer.use_pe"),
    ({"preprocess": {"band": [1.0]}}, "preprocess.band"),
    ({"preprocess": {"band": [1.0, "x"]}}, "preprocess.band[1]"),
    ({"train": 3}, "train"),
    ({"transformer": {"n_heads": 3}}, "transformer.n_heads"),
    ({"preprocess": {"band": [10.0, 5.0]}}, "preprocess.band"),
    ({"train": {"test_fraction": 1.0}}, "train.test_fraction"),
    ({"stft": {"hop": 128}}, "stft"),
    ({"ihpr": {"lam": -1.0}}, "ihpr"),
])
def test_invalid_values_name_the_key(override, key):
    with pytest.raises(ConfigError) as e:
        PipelineConfig(override)
    assert e.value.key == key
    assert str(e.value).startswith(key + ":")


def test_corrupt_json_names_the_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"train": {"lr": }')
    with pytest.raises(ConfigError, match="bad.json: invalid JSON"):
        PipelineConfig.load(p)


def test_flag_overrides_skip_none():
    cfg = PipelineConfig().override(seed=7, synthetic__channels=4, synthetic__duration=None)
    assert cfg.seed == 7
    assert cfg.data["synthetic"]["channels"] == 4
    assert cfg.data["synthetic"]["duration"] == default_config()["synthetic"]["duration"]
    with pytest.raises(ConfigError):
        PipelineConfig().override(synthetic__chanels=4)
