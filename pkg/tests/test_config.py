import json

import pytest

from crossalign.config import ConfigError, load_config, parse_config, write_config_echo


def test_defaults():
    cfg = parse_config({})
    assert cfg.seed == 0 and cfg.num_scenes == 250
    assert cfg.train.momentum == 0.9 and cfg.train.weight_decay == 1e-4 and cfg.train.lam == 1.0
    assert cfg.jitter.enabled and cfg.jitter.copies == 2
    assert cfg.pipeline.out_size == 7 and cfg.pipeline.sampling_ratio == 2


def test_seed_propagates_to_stages():
    cfg = parse_config({"seed": 9})
    assert cfg.scene.seed == 9 and cfg.train.seed == 9
    assert parse_config({"seed": 9}, seed_override=4).scene.seed == 4
    assert cfg.jitter_config().seed != parse_config({"seed": 10}).jitter_config().seed


def test_lambda_alias_and_nested_sections():
    cfg = parse_config({"train": {"lambda": 0.5}, "scene": {"hardware_error": {"random_shift": 6}}})
    assert cfg.train.lam == 0.5
    assert cfg.scene.hardware_error.random_shift == 6


@pytest.mark.parametrize("data", [
    {"nope": 1},
    {"train": {"lr": 1}},
    {"train": {"seed": 1}},
    {"scene": {"seed": 1}},
    {"scene": {"hardware_error": {"shift": 1}}},
    {"jitter": {"copies": 0}},
    {"eval": {"iou_thresh": 1.5}},
    {"seed": -1},
    {"pipeline": []},
    [],
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_disabled_jitter():
    assert parse_config({"jitter": {"enabled": False}}).jitter_config() is None


def test_load_reports_position(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "seed": 1,\n  oops\n}')
    with pytest.raises(ConfigError, match=r"c\.json:3:"):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_env_seed(tmp_path, monkeypatch):
    p = tmp_path / "c.json"
    p.write_text('{"seed": 1}')
    monkeypatch.setenv("TSRA_SEED", "42")
    assert load_config(p).seed == 42
    monkeypatch.setenv("TSRA_SEED", "")
    assert load_config(p).seed == 1


def test_echo_round_trips(tmp_path):
    cfg = parse_config({"seed": 3, "train": {"lambda": 2.0}, "jitter": {"copies": 3}})
    write_config_echo(cfg, tmp_path / "echo.json")
    again = parse_config(json.loads((tmp_path / "echo.json").read_text()))
    assert again.to_dict() == cfg.to_dict()
