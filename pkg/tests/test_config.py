import math
import os

import pytest
import yaml
from hypothesis import given, strategies as st

from lfcombat.config import RunConfig, apply_override, from_dict, load_config, parse_float
from lfcombat.errors import ConfigError

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULTS = os.path.join(ROOT, "configs", "default.yaml")


def test_defaults_file_states_engagement_constants_verbatim():
    text = open(DEFAULTS).read()
    for line in ("wez_range: 4000", "hit_range: 300", "wez_angle: pi/4", "missile_fov: pi/4", "gamma: 0.99",
                 "gae_lambda: 0.95", "clip_epsilon: 0.2", "lr: 0.0003", "buffer_size: 3000"):
        assert line in text
    cfg = load_config(DEFAULTS)
    assert cfg.arena.wez_range == 4000.0 and cfg.arena.hit_range == 300.0
    assert cfg.arena.wez_angle == math.pi / 4 and cfg.arena.missile_fov == math.pi / 4


@pytest.mark.parametrize("text,value", [
    ("pi/4", math.pi / 4), ("2*pi", 2 * math.pi), ("-pi/6", -math.pi / 6), ("pi", math.pi), ("45deg", math.pi / 4),
    ("0.5pi", 0.5 * math.pi), ("1e3", 1000.0), (3, 3.0),
])
def test_angle_strings(text, value):
    assert parse_float(text, "x") == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("bad", ["tau", "pi/", True, None, "4 km"])
def test_unreadable_numbers_rejected(bad):
    with pytest.raises(ConfigError):
        parse_float(bad, "x")


def test_unknown_keys_are_errors_with_paths():
    with pytest.raises(ConfigError) as e:
        from_dict({"arena": {"wez_rnage": 4000}, "trian": {}})
    msgs = e.value.messages
    assert "arena.wez_rnage: unknown key" in msgs and "trian: unknown key" in msgs


def test_validation_reports_field_level_problems():
    with pytest.raises(ConfigError) as e:
        from_dict({"arena": {"team_size": 4, "group_size": 3}, "train": {"gamma": 2.0}})
    text = " ".join(e.value.messages)
    assert "arena.team_size" in text and "train.gamma" in text


def test_type_errors():
    with pytest.raises(ConfigError):
        from_dict({"train": {"epochs": 2.5}})
    with pytest.raises(ConfigError):
        from_dict({"eval": {"deterministic": "yes"}})
    with pytest.raises(ConfigError):
        from_dict({"arena": {"spawn_x": [1.0]}})


def test_overrides_and_seed(tmp_path):
    cfg = load_config(DEFAULTS, ["train.lr=0.001", "arena.wez_angle=30deg"], seed=7)
    assert cfg.train.lr == 0.001 and cfg.arena.wez_angle == pytest.approx(math.pi / 6) and cfg.run.seed == 7
    with pytest.raises(ConfigError):
        apply_override({}, "train.lr")


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "nope.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("arena: [unclosed")
    with pytest.raises(ConfigError):
        load_config(str(bad))


def test_dump_round_trips_and_hash_is_stable():
    cfg = load_config(DEFAULTS)
    again = from_dict(yaml.safe_load(cfg.dump()))
    assert again == cfg and again.hash() == cfg.hash()


def test_hash_tracks_environment_not_bookkeeping():
    base = RunConfig()
    assert from_dict({"run": {"seed": 5, "out_dir": "x"}}).hash() == base.hash()
    assert from_dict({"train": {"iters": 3, "lr": 0.1}}).hash() == base.hash()
    assert from_dict({"arena": {"hit_range": 250}}).hash() != base.hash()
    assert from_dict({"train": {"variant": "mappo"}}).hash() != base.hash()


@given(st.integers(0, 10**6))
def test_run_id_embeds_hash_and_seed(seed):
    cfg = RunConfig()
    cfg.run.seed = seed
    assert cfg.run_id == f"{cfg.hash()[:8]}-s{seed}"
