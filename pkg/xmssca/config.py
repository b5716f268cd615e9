"""Configuration settings for the xmssca package."""

import json
import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Tuple, Union

from .exceptions import ConfigError
from .types import IssuancePolicy

logger = logging.getLogger(__name__)

# Tree heights the CA accepts (XMSS-SHA2_10/16/20_256)
SUPPORTED_HEIGHTS = (10, 16, 20)

# Toy height for exhaustive sweeps and simulator runs
TOY_HEIGHT = 4

# Tree height used when none is configured
DEFAULT_TREE_HEIGHT = 16

# Leaf certificate validity in minutes
DEFAULT_VALIDITY_MINUTES = 240

# Minutes by which consecutive leaves overlap
DEFAULT_OVERLAP_MINUTES = 2

# Largest gap closed with dummy signatures before a schedule update is required
DUMMY_THRESHOLD = 10

# Message tag for dummy signatures
DUMMY_TAG = b"DUMMY"

# NTP samples within this window (ms) count as agreeing
AGREEMENT_WINDOW_MS = 1000

# Consensus offsets above this (ms) need the administrator
MINOR_ADJUST_THRESHOLD_MS = 5000

# Tolerated disagreement (ms) between relative timer and absolute clock
SKEW_TOLERANCE_MS = 60_000

# SNTP query timeout in milliseconds
NTP_TIMEOUT_MS = 2000

# Simulated NTP slew rate in ms per second
SLEW_RATE_MS_PER_S = 0.5

# Default NTP endpoints, one per independent operator
NTP_SERVERS: Tuple[str, ...] = (
    "0.pool.ntp.org",
    "time.cloudflare.com",
    "ptbtime1.ptb.de",
)

# NTP port
NTP_PORT = 123

# Subject names used by the CA
CA_COMMON_NAME = "ExampleCA"
LEAF_COMMON_NAME = "ECDSACrt"
LEAF_DNS_NAME = "example.com"

# Files inside a CA home directory
KEY_STATE_FILE = "ca.xks"
CA_CERT_FILE = "ca.der"
SCHEDULE_FILE = "schedule.sched"
SCHEDULE_DIR = "schedules"
LEAF_CERT_FILE = "leaf.der"
LEAF_KEY_FILE = "leaf.key"
EVENT_LOG_FILE = "events.log"
DECISIONS_FILE = "decisions.log"
CONFIG_FILE = "config.json"

# Object identifiers used in certificates
OID_XMSS = "1.3.6.1.5.5.7.6.34"
OID_ECDSA_WITH_SHA256 = "1.2.840.10045.4.3.2"
OID_EC_PUBLIC_KEY = "1.2.840.10045.2.1"
OID_SECP256R1 = "1.2.840.10045.3.1.7"
OID_COMMON_NAME = "2.5.4.3"
OID_SUBJECT_ALT_NAME = "2.5.29.17"
OID_BASIC_CONSTRAINTS = "2.5.29.19"

# Published signature sizes (bytes) for the per-handshake comparison
SIGNATURE_SIZES: Dict[str, int] = {
    "XMSS_10": 2500,
    "XMSS_16": 2692,
    "XMSS_20": 2820,
    "ML-DSA-44": 2420,
    "ML-DSA-65": 3309,
    "ML-DSA-87": 4627,
    "SLH-DSA-128s": 7856,
    "SLH-DSA-128f": 17088,
}

# Published public key sizes (bytes)
PUBLIC_KEY_SIZES: Dict[str, int] = {
    "XMSS_10": 68,
    "XMSS_16": 68,
    "XMSS_20": 68,
    "ML-DSA-44": 1312,
    "ML-DSA-65": 1952,
    "ML-DSA-87": 2592,
    "SLH-DSA-128s": 32,
    "SLH-DSA-128f": 32,
}


@dataclass(frozen=True)
class CaSettings:
    """Tunables of one CA instance."""
    tree_height: int = DEFAULT_TREE_HEIGHT
    validity_minutes: int = DEFAULT_VALIDITY_MINUTES
    overlap_minutes: int = DEFAULT_OVERLAP_MINUTES
    dummy_threshold: int = DUMMY_THRESHOLD
    ntp_servers: Tuple[str, ...] = NTP_SERVERS
    ntp_timeout_ms: int = NTP_TIMEOUT_MS
    agreement_window_ms: int = AGREEMENT_WINDOW_MS
    minor_adjust_threshold_ms: int = MINOR_ADJUST_THRESHOLD_MS
    skew_tolerance_ms: int = SKEW_TOLERANCE_MS
    slew_rate_ms_per_s: float = SLEW_RATE_MS_PER_S
    ca_common_name: str = CA_COMMON_NAME
    leaf_common_name: str = LEAF_COMMON_NAME
    leaf_dns_name: str = LEAF_DNS_NAME
    key_state_file: str = KEY_STATE_FILE
    allow_toy_params: bool = False

    def policy(self) -> IssuancePolicy:
        """Return the issuance policy these settings describe."""
        return IssuancePolicy(overlap_minutes=self.overlap_minutes)

    def with_overrides(self, **changes: Any) -> "CaSettings":
        """Return a copy with some fields replaced, re-validated."""
        updated = replace(self, **changes)
        validate_settings(updated)
        return updated


def validate_settings(settings: CaSettings) -> None:
    """Check cross-field constraints of a settings object.

    Args:
        settings: The settings to check

    Raises:
        ConfigError: If a value is out of range
    """
    allowed = SUPPORTED_HEIGHTS + ((TOY_HEIGHT,) if settings.allow_toy_params else ())
    if settings.tree_height not in allowed:
        raise ConfigError(f"Unsupported tree height: {settings.tree_height}")
    if not 0 < settings.overlap_minutes < settings.validity_minutes < 2 ** 16:
        raise ConfigError(
            f"Need 0 < overlap ({settings.overlap_minutes}) < validity "
            f"({settings.validity_minutes}) < 65536 minutes"
        )
    if not 1 <= settings.dummy_threshold:
        raise ConfigError("dummy_threshold must be at least 1")
    for name in ("ntp_timeout_ms", "agreement_window_ms",
                 "minor_adjust_threshold_ms", "skew_tolerance_ms"):
        if getattr(settings, name) <= 0:
            raise ConfigError(f"{name} must be positive")
    if settings.slew_rate_ms_per_s < 0:
        raise ConfigError("slew_rate_ms_per_s must not be negative")


def settings_from_dict(data: Dict[str, Any]) -> CaSettings:
    """Build settings from a decoded JSON object.

    Args:
        data: Mapping of setting names to values

    Returns:
        The validated settings

    Raises:
        ConfigError: If a key is unknown or a value has the wrong type
    """
    known = {f.name: f for f in fields(CaSettings)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")

    values: Dict[str, Any] = {}
    for key, value in data.items():
        default = getattr(CaSettings, key)
        if key == "ntp_servers":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError("ntp_servers must be a list of host names")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{key} must be true or false")
        elif isinstance(default, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{key} must be a number")
            value = float(value)
        elif isinstance(default, int):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{key} must be an integer")
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{key} must be a string")
        values[key] = value

    settings = CaSettings(**values)
    validate_settings(settings)
    return settings


def load_settings(path: Union[str, Path, None] = None) -> CaSettings:
    """Load settings from a JSON config file.

    Args:
        path: Config file; None returns the defaults

    Returns:
        The validated settings

    Raises:
        ConfigError: If the file cannot be read or holds invalid values
    """
    if path is None:
        return CaSettings()
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except (OSError, ValueError) as e:
        raise ConfigError(f"Error reading config {path}: {str(e)}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    logger.debug("loaded settings from %s", path)
    return settings_from_dict(data)


def settings_to_dict(settings: CaSettings) -> Dict[str, Any]:
    """Return the JSON-serializable form of settings."""
    out: Dict[str, Any] = {}
    for f in fields(CaSettings):
        value = getattr(settings, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out
