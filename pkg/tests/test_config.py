import json

import pytest

from xmssca.config import (
    NTP_SERVERS,
    CaSettings,
    load_settings,
    settings_from_dict,
    settings_to_dict,
    validate_settings,
)
from xmssca.exceptions import ConfigError


def test_defaults():
    settings = load_settings()
    assert settings == CaSettings()
    assert settings.tree_height == 16
    assert settings.validity_minutes == 240
    assert settings.ntp_servers == NTP_SERVERS
    assert settings.policy().interval_minutes(240) == 238
    validate_settings(settings)


def test_load_from_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"tree_height": 4, "allow_toy_params": True, "ntp_servers": [],
                                "slew_rate_ms_per_s": 1}))
    settings = load_settings(path)
    assert settings.tree_height == 4
    assert settings.ntp_servers == ()
    assert settings.slew_rate_ms_per_s == 1.0


def test_dict_form_loads_back():
    settings = CaSettings(tree_height=10, ntp_servers=("a", "b"))
    data = settings_to_dict(settings)
    assert data["ntp_servers"] == ["a", "b"]
    assert settings_from_dict(json.loads(json.dumps(data))) == settings


@pytest.mark.parametrize("data", [
    {"tree_height": 12},
    {"tree_height": 4},
    {"validity_minutes": 2},
    {"validity_minutes": 65536},
    {"overlap_minutes": 0},
    {"dummy_threshold": 0},
    {"skew_tolerance_ms": 0},
    {"slew_rate_ms_per_s": -1},
    {"tree_height": "16"},
    {"allow_toy_params": 1},
    {"ntp_servers": "pool.ntp.org"},
    {"ca_common_name": 5},
    {"validity": 240},
])
def test_invalid_settings(data):
    with pytest.raises(ConfigError):
        settings_from_dict(data)


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        load_settings(broken)
    listed = tmp_path / "list.json"
    listed.write_text("[]")
    with pytest.raises(ConfigError):
        load_settings(listed)


def test_overrides_are_validated():
    assert CaSettings().with_overrides(tree_height=20).tree_height == 20
    with pytest.raises(ConfigError):
        CaSettings().with_overrides(overlap_minutes=300)
