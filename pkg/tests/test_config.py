import pytest

from beamasr import config as cfg
from beamasr.errors import ConfigError


def test_parse_scalars():
    text = """
    # comment line
    flag = true
    off_flag = off
    count = 12
    rate = 1.5e-3
    name = hello world
    empty = none
    """
    out = cfg.parse_kv_text(text)
    assert out["flag"] is True
    assert out["off_flag"] is False
    assert out["count"] == 12
    assert out["rate"] == 1.5e-3
    assert out["name"] == "hello world"
    assert out["empty"] is None


def test_parse_tuples():
    out = cfg.parse_kv_text("snr_range = -2, 8\nmix = 1, 2.5, x\n")
    assert out["snr_range"] == (-2, 8)
    assert out["mix"] == (1, 2.5, "x")


def test_parse_errors():
    with pytest.raises(ConfigError):
        cfg.parse_kv_text("no equals sign here")
    with pytest.raises(ConfigError):
        cfg.parse_kv_text("= value without key")


def test_inline_comments_stripped():
    out = cfg.parse_kv_text("a = 3  # trailing comment")
    assert out == {"a": 3}


def test_format_parse_round_trip():
    mapping = {"a": 1, "b": 2.5, "c": "text", "d": (1, 2, 3), "e": True}
    assert cfg.parse_kv_text(cfg.format_kv(mapping)) == mapping


def test_file_round_trip(tmp_path):
    path = str(tmp_path / "run.cfg")
    cfg.write_kv_file(path, {"x": 7, "grid": (0.0, 45.0)})
    assert cfg.parse_kv_file(path) == {"x": 7, "grid": (0.0, 45.0)}


def test_missing_file_raises(tmp_path):
    with pytest.raises(ConfigError):
        cfg.parse_kv_file(str(tmp_path / "missing.cfg"))
