import pytest
from dataclasses import replace

from cellfree.config import (ConfigError, ExperimentSpec, SystemConfig, apply_point,
                             config_hash, dbm_to_watts, dumps_config, load_config, loads_config,
                             parse_overrides)

from pathlib import Path

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.ini"))


def test_noise_power():
    assert dbm_to_watts(-94.0) == pytest.approx(3.981e-13, rel=1e-3)
    assert SystemConfig().alpha == SystemConfig().noise_w


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_round_trip(path):
    cfg, spec = load_config(path)
    text = dumps_config(cfg, spec)
    cfg2, spec2 = loads_config(text)
    assert cfg2 == cfg and spec2 == spec
    assert dumps_config(cfg2, spec2) == text


def test_table_defaults_file():
    cfg, _ = load_config(Path(__file__).parent.parent / "configs" / "baseline.ini")
    assert cfg == SystemConfig()


def _text(**exp):
    spec = ExperimentSpec("assoc_sweep", SystemConfig(), (("assoc_count", (2.0, 4.0)),))
    return dumps_config(SystemConfig(), spec)


def test_missing_key_is_named():
    text = _text().replace("pilot_len = 10\n", "")
    with pytest.raises(ConfigError, match="pilot_len"):
        loads_config(text)


def test_unknown_key_reports_line():
    text = _text().replace("num_aps = 15", "num_aps = 15\nnum_apps = 3")
    with pytest.raises(ConfigError, match=r"<string>:\d+: \[scenario\] num_apps: unknown key"):
        loads_config(text)


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        loads_config(_text() + "\n[extra]\na = 1\n")


def test_override_changes_one_key():
    base, _ = loads_config(_text())
    cfg, spec = loads_config(_text(), parse_overrides(["scenario.num_users=20", "mc_trials=7"]))
    assert cfg == replace(base, num_users=20, mc_trials=7)
    _, spec2 = loads_config(_text(), {"seeds": "3, 4"})
    assert spec2.seeds == (3, 4)


def test_bad_override():
    with pytest.raises(ConfigError):
        parse_overrides(["noequals"])
    with pytest.raises(ConfigError, match="unknown key"):
        loads_config(_text(), {"bogus": "1"})


def test_invalid_values():
    with pytest.raises(ConfigError):
        loads_config(_text(), {"num_users": "2.5"})
    with pytest.raises(ConfigError):
        SystemConfig(assoc_count=20, num_aps=15)
    with pytest.raises(ConfigError):
        SystemConfig(antennas_per_ap=0)


def test_spec_validation():
    with pytest.raises(ConfigError, match="needs a sweep"):
        ExperimentSpec("de_vs_mc_antennas")
    with pytest.raises(ConfigError, match="unknown experiment"):
        ExperimentSpec("nope")
    with pytest.raises(ConfigError, match="no values"):
        ExperimentSpec("assoc_sweep", sweep=(("assoc_count", ()),))
    with pytest.raises(ConfigError):
        # assoc_count 20 > num_aps 15 at a sweep point
        ExperimentSpec("assoc_sweep", sweep=(("assoc_count", (2.0, 20.0)),))
    with pytest.raises(ConfigError, match="gradient"):
        ExperimentSpec("gradient_check", gradient="magic")


def test_sweep_is_cartesian():
    spec = ExperimentSpec("de_vs_mc_antennas", sweep=(("num_users", (10.0, 20.0)),
                                                      ("antennas_per_ap", (16.0, 32.0, 64.0))))
    pts = spec.sweep_points()
    assert len(pts) == 6
    assert pts[0] == {"num_users": 10.0, "antennas_per_ap": 16.0}
    assert apply_point(spec.config, pts[-1]).antennas_per_ap == 64


def test_reg_scale_sets_alpha():
    cfg = apply_point(SystemConfig(), {"reg_scale": 10.0})
    assert cfg.alpha == pytest.approx(10.0 * cfg.noise_w)


def test_hash_sensitivity():
    spec = ExperimentSpec("gradient_check")
    h0 = config_hash(SystemConfig(), spec)
    assert h0 == config_hash(SystemConfig(), spec)
    for name, value in [("num_users", 41), ("noise_dbm", -93.0), ("reg_param_w", 1e-12),
                        ("rng_seed", 1), ("antenna_spacing", 0.25)]:
        assert config_hash(replace(SystemConfig(), **{name: value}), spec) != h0
    assert config_hash(SystemConfig(), replace(spec, seeds=(1,))) != h0
