import pytest

from spinshelve import ConfigError, ExperimentConfig, ParameterError, available_presets, default_config, load_config
from spinshelve.config import parse_config, resolve_preset

MINIMAL = """
[rates]
k_r = 1e7
gamma0 = 1e8
gamma1 = 2e8
kappa0 = 3e7
kappa1 = 1e7
"""


def test_shipped_presets():
    assert {"room_temperature", "cryo_4k"} <= set(available_presets())


def test_minimal_config_uses_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.k_exp == 2.7e7
    assert cfg.system.hyperfine_a is None
    assert cfg.rates.t_is == pytest.approx(25.0)


def test_overrides_apply():
    cfg = default_config({"detector.bin_width": "2", "system.hyperfine_a": "47", "laser.k_exp": "1e8"})
    assert cfg.bin_width == 2.0 and cfg.system.hyperfine_a == 47.0 and cfg.k_exp == 1e8
    with pytest.raises(ConfigError):
        default_config({"bin_width": "2"})


def test_missing_preset_names_path():
    with pytest.raises(ConfigError, match="/no/such.conf"):
        load_config("/no/such.conf")


def test_bad_values():
    with pytest.raises(ConfigError, match="rates.k_r"):
        parse_config(MINIMAL.replace("1e7\n", "fast\n", 1))
    with pytest.raises(ConfigError):
        parse_config("[system]\nd_gs = 3.5\n")
    with pytest.raises(ParameterError):
        default_config().replace(dt_sample=0)


def test_env_var_search_path(tmp_path, monkeypatch):
    (tmp_path / "mine.conf").write_text(MINIMAL)
    monkeypatch.setenv("SPINSHELVE_PRESETS", str(tmp_path))
    assert resolve_preset("mine") == tmp_path / "mine.conf"
    assert load_config("mine").rates.k_r == 1e7


def test_dict_round_trip_and_hash():
    cfg = default_config()
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert cfg.replace(seed=1).config_hash() != cfg.config_hash()


def test_detailed_balance_enforced():
    with pytest.raises((ConfigError, ParameterError)):
        parse_config(MINIMAL + "k_sl_0to1 = 1e5\nk_sl_1to0 = 1e5\n")
