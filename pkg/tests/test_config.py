import pytest

from eventmvs.config import RunConfig, is_config_key, load_config
from eventmvs.event_io import ValidationError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.events_per_frame, cfg.n_depth_planes, cfg.z_min, cfg.z_max) == (1024, 100, 0.8, 2.5)
    assert (cfg.vote_mode, cfg.datapath, cfg.pipeline) == ("nearest", "float", "reformulated")


def test_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nn_depth_planes = 40\nvote_mode = bilinear\ndepth_smoothing = false\n")
    cfg = load_config(p, {"n_depth_planes": "60", "z_max": "3"})
    assert cfg.n_depth_planes == 60 and cfg.z_max == 3.0
    assert cfg.vote_mode == "bilinear" and cfg.depth_smoothing is False


def test_dump_round_trip(tmp_path):
    cfg = RunConfig(n_depth_planes=33, datapath="quantized", depth_smoothing=False)
    p = tmp_path / "c.cfg"
    p.write_text(cfg.to_text())
    assert load_config(p) == cfg


def test_base_is_kept():
    cfg = load_config(None, {"workers": "3"}, base=RunConfig(n_depth_planes=12))
    assert cfg.n_depth_planes == 12 and cfg.workers == 3


def test_unknown_key():
    assert not is_config_key("planes")
    with pytest.raises(ValidationError):
        load_config(None, {"planes": "10"})


@pytest.mark.parametrize("key, value", [("n_depth_planes", "ten"), ("depth_smoothing", "maybe"), ("z_min", "")])
def test_bad_values(key, value):
    with pytest.raises(ValidationError):
        load_config(None, {key: value})


@pytest.mark.parametrize("changes", [
    {"z_min": 3.0},
    {"z_min": 0.0},
    {"n_depth_planes": 1},
    {"events_per_frame": 0},
    {"keyframe_dist_frac": 0.0},
    {"vote_mode": "trilinear"},
    {"datapath": "quantized", "vote_mode": "bilinear"},
    {"datapath": "quantized", "pipeline": "reference"},
    {"median_window": 4},
    {"workers": 0},
    {"filter_radius": -1},
])
def test_validation(changes):
    with pytest.raises(ValidationError):
        RunConfig(**changes)
