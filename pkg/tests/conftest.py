"""Shared fixtures: toy and h=10 keys are generated once per session."""

import hashlib
from dataclasses import dataclass
from pathlib import Path

import pytest

from xmssca.api import CertificateAuthority
from xmssca.certkit import (
    ECDSA_P256_SHA256,
    CaCertificate,
    LeafCertificate,
    build_ca_certificate,
    issue_leaf,
)
from xmssca.config import CA_COMMON_NAME, LEAF_COMMON_NAME, LEAF_DNS_NAME, CaSettings
from xmssca.keystore import KeyStore
from xmssca.schedule import Schedule, sign_schedule
from xmssca.simulator import SIMULATOR_SEED, VirtualClock
from xmssca.types import IssuancePolicy
from xmssca.xmss import ENTROPY_SIZE, N, WOTS_LEN, XmssParams, XmssPublicKey, XmssSignature, xmss_keygen

# Start of the example schedule; every timeline in the tests is relative to it
T0 = 1751720001

# Distance between issue instants under the default policy (s)
INTERVAL = 238 * 60

TOY_ENTROPY = hashlib.shake_256(b"xmssca tests toy").digest(ENTROPY_SIZE)

# Same entropy as the simulator so the cached h=10 tree is shared with scenario runs
H10_ENTROPY = hashlib.shake_256(SIMULATOR_SEED).digest(ENTROPY_SIZE)


@pytest.fixture(scope="session")
def toy_params():
    return XmssParams(4)


@pytest.fixture(scope="session")
def toy_key(toy_params):
    return xmss_keygen(toy_params, TOY_ENTROPY)


@pytest.fixture(scope="session")
def h10_key():
    return xmss_keygen(XmssParams(10), H10_ENTROPY)


@pytest.fixture
def toy_settings():
    return CaSettings(tree_height=4, allow_toy_params=True, ntp_servers=())


@pytest.fixture
def clock():
    return VirtualClock(T0 * 1000)


@pytest.fixture
def toy_ca(tmp_path: Path, toy_settings, clock):
    ca = CertificateAuthority.create(tmp_path / "ca", toy_settings, clock, TOY_ENTROPY)
    yield ca
    ca.close()


def unsigned_schedule(creation_date=T0, validity_minutes=240, start_index=2, max_index=1024,
                      height=10) -> Schedule:
    """A schedule with a blank signature, for decisions that never verify it."""
    params = XmssParams(height)
    signature = XmssSignature(params, start_index - 1, bytes(N), bytes(WOTS_LEN * N), bytes(height * N))
    return Schedule(creation_date, validity_minutes, start_index, max_index, signature)


def advance_to(ca: CertificateAuthority, clock: VirtualClock, posix_seconds: int) -> None:
    """Move the virtual clock to ``posix_seconds`` and tick once."""
    clock.advance(posix_seconds * 1000 - clock.now_ms())
    ca.step()


@dataclass(frozen=True)
class IssuedToy:
    """A toy CA certificate, schedule and leaf signed with indices 0, 1 and 2."""
    ca_key: XmssPublicKey
    ca_cert: CaCertificate
    schedule: Schedule
    leaf: LeafCertificate
    leaf_secret: bytes


@pytest.fixture(scope="session")
def issued_toy(tmp_path_factory, toy_params):
    path = tmp_path_factory.mktemp("issued") / "ca.xks"
    policy = IssuancePolicy()
    with KeyStore.create(path, toy_params, TOY_ENTROPY) as store:
        ca_cert = build_ca_certificate(store, CA_COMMON_NAME, T0, T0 + 10 * 365 * 24 * 3600)
        schedule = sign_schedule(store, T0, 240, policy)
        secret, public = ECDSA_P256_SHA256.keygen()
        index = store.reserve_index()
        leaf = issue_leaf(store, schedule, policy, index, public, T0, CA_COMMON_NAME,
                          LEAF_COMMON_NAME, LEAF_DNS_NAME)
        return IssuedToy(store.public_key, ca_cert, schedule, leaf, secret)
