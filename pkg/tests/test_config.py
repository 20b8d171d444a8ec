import json

import pytest

from bagaunet.config import echo_config, from_dict, load_run_config, resolved_dict
from bagaunet.errors import ConfigError


def test_defaults():
    cfg = load_run_config()
    assert cfg.dataset is None
    assert cfg.model.variant == "bagau"
    assert cfg.train.lr == 2e-4
    assert cfg.train.batch_size == 32
    assert cfg.train.epochs == 200
    assert cfg.phantom.n_cases == 30
    assert cfg.augment.mirror_prob == 0.5


def test_file_then_override_precedence(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "dataset": "/data/ds",
        "train": {"lr": 0.01, "epochs": 5},
        "model": {"channels": [4, 6, 8, 10, 12], "canvas": [32, 32]},
    }))
    cfg = load_run_config(path, overrides=["train.lr=0.02", "train.seed=9"])
    assert cfg.dataset == "/data/ds"
    assert cfg.train.lr == 0.02  # override beats file
    assert cfg.train.epochs == 5  # file beats default
    assert cfg.train.seed == 9
    assert cfg.model.channels == (4, 6, 8, 10, 12)


def test_override_value_parsing():
    cfg = load_run_config(overrides=[
        "model.variant=unet_flair",          # bare string
        "train.variant=unet_flair",
        "train.augment=false",               # JSON bool
        "model.channels=[8, 12, 16, 24, 32]",  # JSON list
    ])
    assert cfg.model.variant == "unet_flair"
    assert cfg.train.augment is False
    assert cfg.model.channels == (8, 12, 16, 24, 32)


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        load_run_config(overrides=["train.momentum=0.9"])
    with pytest.raises(ConfigError, match="unknown config key"):
        load_run_config(overrides=["optimizer.lr=0.1"])
    with pytest.raises(ConfigError, match="section.key"):
        load_run_config(overrides=["train.lr"])
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"warmup": 10}}))
    with pytest.raises(ConfigError, match="unknown config key train.warmup"):
        load_run_config(path)


def test_variant_consistency_enforced():
    with pytest.raises(ConfigError, match="conflicts"):
        load_run_config(overrides=["model.variant=unet_flair"])


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="malformed"):
        load_run_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_run_config(arr)


def test_null_section_tolerated():
    cfg = from_dict({"dataset": None, "out_dir": None, "model": None})
    assert cfg.model.variant == "bagau"


def test_bad_section_value(tmp_path):
    with pytest.raises(ConfigError, match="must be an object"):
        from_dict({"train": 5})


def test_echo_round_trip(tmp_path):
    cfg = load_run_config(overrides=["train.lr=0.005", "phantom.n_cases=3"])
    path = echo_config(cfg, tmp_path)
    assert path.name == "resolved_config.json"
    reloaded = load_run_config(path)
    assert resolved_dict(reloaded) == resolved_dict(cfg)
    assert reloaded.train.lr == 0.005
    assert reloaded.phantom.n_cases == 3
