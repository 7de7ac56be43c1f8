import json

import pytest

from rgbdgaze.config import Config, load_config
from rgbdgaze.errors import BadConfig


def test_defaults():
    cfg = load_config(None)
    assert cfg.norm.virtual_focal == 960.0 and cfg.norm.norm_distance == 300.0
    assert cfg.norm.face_patch == 448 and cfg.norm.eye_patch == 112
    assert cfg.depth.erode_radius == 12 and cfg.depth.l1_weight == 10.0
    assert cfg.depth.eye_filter.region_size == 81 and cfg.depth.eye_filter.threshold == 200.0
    hp = cfg.hyper
    assert (hp.d_model, hp.d_ff, hp.n_heads, hp.n_layers, hp.n_tokens) == (1024, 2048, 8, 6, 5)
    assert hp.variant == "B2T" and hp.dropout_attn == hp.dropout_ff == 0.1
    assert cfg.training.epochs_rgbdtr == 25 and cfg.training.epochs_gan == 100


def test_partial_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"hyper": {"d_model": 16, "n_heads": 2}, "filters": {"angles": "kalman"}}))
    cfg = load_config(p)
    assert cfg.hyper.d_model == 16 and cfg.hyper.d_ff == 2048
    assert cfg.filters.angles == "kalman" and cfg.norm.norm_distance == 300.0


def test_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(Config().to_dict()))
    assert load_config(p) == Config()


@pytest.mark.parametrize("doc", [
    {"hyper": {"d_model": 10, "n_heads": 3}},
    {"norm": {"virtual_focal": -1}},
    {"norm": {"focal": 960}},
    {"nonsense": 1},
    {"depth": 5},
])
def test_bad_config(tmp_path, doc):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(BadConfig):
        load_config(p)


def test_missing_referenced_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"paths": {"parameters": str(tmp_path / "nope.bin")}}))
    with pytest.raises(BadConfig, match="nope.bin"):
        load_config(p)
    assert load_config(p, check_paths=False).paths.parameters.endswith("nope.bin")


def test_unreadable(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(BadConfig):
        load_config(tmp_path / "c.json")
    with pytest.raises(BadConfig):
        load_config(tmp_path / "absent.json")
