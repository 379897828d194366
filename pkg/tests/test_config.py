import argparse

import pytest

from nullgenus.cli import build_parser, resolve_config
from nullgenus.config import DEFAULT_RAMP, PipelineConfig, from_dict, load_config
from nullgenus.errors import ConfigError


def test_defaults_validate():
    cfg = from_dict({})
    assert isinstance(cfg, PipelineConfig)
    assert cfg.surface == "sphere" and cfg.targets == ["C2"]
    assert cfg.c_ramp == DEFAULT_RAMP["sphere"]
    assert cfg.tau_complex == 1j


def test_round_trip_through_dict():
    cfg = from_dict({"surface": "sphere", "targets": ["c2", "l3"], "shifts": [[0.3, 0.2]]})
    again = from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.targets == ["C2", "L3"]


@pytest.mark.parametrize("data", [
    {"surface": "klein"},
    {"tau": [0.0, -1.0]},
    {"power": 0},
    {"targets": []},
    {"targets": ["C3"]},
    {"ramp": [0.01, 0.005]},
    {"ramp": [-0.01]},
    {"tolerances": {"residual": -1e-10}},
    {"tolerances": {"quadrature": 0}},
    {"mesh": {"resolution": 4}},
    {"certify": {"r_scan": [0.5, 1.2]}},
    {"certify": {"segments": 0}},
    {"shifts": [[1, 2, 3]]},
    {"disk": {"g": [0, 1]}},
    {"disk": {"name": "z-1", "z0": 0.1}},
    {"workers": 0},
    {"colour": "blue"},
    {"tolerances": {"speed": 1}},
])
def test_invalid_configs_are_rejected(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_load_config(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("surface: sphere\nramp: [0.005, 0.01]\nmesh:\n  resolution: 64\n")
    cfg = load_config(path)
    assert cfg.surface == "sphere" and cfg.c_ramp == [0.005, 0.01] and cfg.mesh.resolution == 64


def test_malformed_and_missing_files(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("surface: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def args_for(*argv) -> argparse.Namespace:
    return build_parser().parse_args(["solve", *argv])


def test_c_flag_truncates_the_ramp():
    cfg = resolve_config(args_for("--surface", "torus", "--c", "0.0015"))
    assert cfg.c_ramp == [0.0005, 0.001, 0.0015]
    cfg = resolve_config(args_for("--surface", "sphere", "--c", "0.01"))
    assert cfg.c_ramp == [0.005, 0.01]


def test_surface_flag_switches_the_default_ramp():
    assert resolve_config(args_for("--surface", "sphere")).c_ramp == DEFAULT_RAMP["sphere"]


def test_explicit_ramp_in_file_is_kept(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("surface: torus\nramp: [0.0004, 0.0008]\n")
    cfg = resolve_config(args_for("--config", str(path), "--surface", "sphere"))
    assert cfg.c_ramp == [0.0004, 0.0008]


def test_flag_overrides():
    cfg = resolve_config(args_for("--target", "all", "--seed", "7", "--workers", "3", "--resolution", "64",
                                  "--out", "elsewhere"))
    assert cfg.targets == ["C2", "R3", "L3"]
    assert (cfg.seed, cfg.workers, cfg.mesh.resolution, cfg.output) == (7, 3, 64, "elsewhere")


def test_nonpositive_c_flag():
    with pytest.raises(ConfigError):
        resolve_config(args_for("--c", "0"))
