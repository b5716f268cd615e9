"""
xmssca - An XMSS certificate authority bound to a signed time schedule.

The CA signs short-lived classical leaf certificates with a stateful
hash-based key whose index follows a published schedule, detects time
tampering and downtime, and ships a verifier, a deterministic scenario
simulator and a loopback handshake demonstration.
"""

__version__ = "0.1.0"

from .api import CertificateAuthority
from .config import CaSettings, load_settings
from .exceptions import XmssCaError
from .handshake import run_loopback_handshake
from .simulator import load_scenario, run_scenario
from .types import Format, Phase, RejectReason
from .verifier import load_trust_store, verify_leaf, verify_peer_auth

__all__ = [
    "CertificateAuthority",
    "CaSettings",
    "load_settings",
    "XmssCaError",
    "run_loopback_handshake",
    "load_scenario",
    "run_scenario",
    "Format",
    "Phase",
    "RejectReason",
    "load_trust_store",
    "verify_leaf",
    "verify_peer_auth",
]
