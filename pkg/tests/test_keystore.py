import os
import random
import tempfile
from pathlib import Path

import pytest
from hypothesis import settings as hypothesis_settings
from hypothesis import strategies as st
from hypothesis.stateful import RuleBasedStateMachine, invariant, precondition, rule

from xmssca.exceptions import (
    DoubleSignError,
    IntegrityError,
    KeyExhaustedError,
    KeyStoreError,
    ProtocolMisuseError,
    StoreLockedError,
)
from xmssca.keystore import AesGcmStateCipher, KeyStore, decode_key_state
from xmssca.xmss import XmssParams, xmss_verify

from conftest import TOY_ENTROPY


@pytest.fixture
def store(tmp_path, toy_params):
    with KeyStore.create(tmp_path / "ca.xks", toy_params, TOY_ENTROPY) as s:
        yield s


def test_reserve_persists_before_signing(store):
    index = store.reserve_index()
    assert index == 0
    on_disk = decode_key_state(store.path.read_bytes())
    assert on_disk.next_index == 1


def test_signatures_verify_under_store_key(store):
    index = store.reserve_index()
    sig = store.sign_with_reserved(index, b"hello")
    assert xmss_verify(store.public_key, b"hello", sig)


def test_index_cannot_be_signed_twice(store):
    index = store.reserve_index()
    store.sign_with_reserved(index, b"a")
    with pytest.raises(DoubleSignError):
        store.sign_with_reserved(index, b"b")


def test_unreserved_index_is_misuse(store):
    with pytest.raises(ProtocolMisuseError):
        store.sign_with_reserved(0, b"a")


def test_exhaustion_after_all_toy_indices(store):
    for expected in range(16):
        assert store.reserve_index() == expected
    assert store.remaining_signatures() == 0
    with pytest.raises(KeyExhaustedError):
        store.reserve_index()


def test_reservation_from_previous_handle_is_abandoned(tmp_path, toy_params):
    path = tmp_path / "ca.xks"
    first = KeyStore.create(path, toy_params, TOY_ENTROPY)
    index = first.reserve_index()
    first.close()
    with KeyStore.open(path) as second:
        assert second.next_index == index + 1
        with pytest.raises(DoubleSignError):
            second.sign_with_reserved(index, b"late")


def test_second_handle_is_locked_out(store):
    with pytest.raises(StoreLockedError):
        KeyStore.open(store.path)


def test_create_refuses_existing_file(store, toy_params):
    with pytest.raises(KeyStoreError):
        KeyStore.create(store.path, toy_params, TOY_ENTROPY)


def test_corruption_is_detected(tmp_path, toy_params):
    path = tmp_path / "ca.xks"
    KeyStore.create(path, toy_params, TOY_ENTROPY).close()
    data = bytearray(path.read_bytes())
    data[20] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(IntegrityError):
        KeyStore.open(path)


def test_encrypted_state_needs_its_key(tmp_path, toy_params):
    path = tmp_path / "ca.xks"
    cipher = AesGcmStateCipher(os.urandom(32))
    with KeyStore.create(path, toy_params, TOY_ENTROPY, cipher) as s:
        public = s.public_key
        s.reserve_index()
    with pytest.raises(KeyStoreError):
        KeyStore.open(path)
    with pytest.raises(IntegrityError):
        KeyStore.open(path, AesGcmStateCipher(os.urandom(32)))
    with KeyStore.open(path, cipher) as s:
        assert s.public_key == public
        assert s.next_index == 1


def test_verify_cache_on_open(tmp_path, toy_params):
    path = tmp_path / "ca.xks"
    KeyStore.create(path, toy_params, TOY_ENTROPY).close()
    with KeyStore.open(path, verify_cache=True) as s:
        assert s.next_index == 0


class KeyStoreMachine(RuleBasedStateMachine):
    """Reserve, sign, crash and reopen in any order; no index is ever signed twice."""

    def __init__(self):
        super().__init__()
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "ca.xks"
        self.signed = []
        self.store = KeyStore.create(self.path, XmssParams(4), TOY_ENTROPY, sign_observer=self.signed.append)
        self.pending = []
        self.highest = -1

    @precondition(lambda self: self.store.remaining_signatures() > 0)
    @rule()
    def reserve(self):
        index = self.store.reserve_index()
        assert index > self.highest
        self.highest = index
        self.pending.append(index)

    @precondition(lambda self: self.pending)
    @rule(data=st.data())
    def sign(self, data):
        index = data.draw(st.sampled_from(self.pending))
        self.pending.remove(index)
        self.store.sign_with_reserved(index, b"message")

    @rule()
    def crash_and_reopen(self):
        self.store.close()
        self.pending = []
        self.store = KeyStore.open(self.path, sign_observer=self.signed.append)

    @precondition(lambda self: self.signed)
    @rule()
    def resign_is_refused(self):
        with pytest.raises((DoubleSignError, ProtocolMisuseError)):
            self.store.sign_with_reserved(self.signed[-1], b"again")

    @invariant()
    def no_index_signed_twice(self):
        assert len(self.signed) == len(set(self.signed))

    @invariant()
    def counter_on_disk_is_ahead_of_every_reservation(self):
        assert decode_key_state(self.path.read_bytes()).next_index == self.highest + 1

    def teardown(self):
        self.store.close()
        self.tmp.cleanup()


KeyStoreMachine.TestCase.settings = hypothesis_settings(max_examples=40, stateful_step_count=60, deadline=None)
TestKeyStoreMachine = KeyStoreMachine.TestCase


def test_long_random_walk_never_signs_an_index_twice(tmp_path, toy_params):
    rng = random.Random(0)
    generation = 0
    steps = 0

    def fresh():
        path = tmp_path / f"walk-{generation}.xks"
        return path, [], KeyStore.create(path, toy_params, TOY_ENTROPY, sign_observer=signed.append)

    signed = []
    path, pending, store = fresh()
    public = store.public_key
    while steps < 1200:
        steps += 1
        action = rng.choice(("reserve", "reserve", "sign", "sign", "crash"))
        if action == "reserve":
            try:
                index = store.reserve_index()
            except KeyExhaustedError:
                store.close()
                assert len(signed) == len(set(signed))
                generation += 1
                signed = []
                path, pending, store = fresh()
                continue
            assert decode_key_state(path.read_bytes()).next_index == index + 1
            pending.append(index)
        elif action == "sign" and pending:
            index = pending.pop(rng.randrange(len(pending)))
            sig = store.sign_with_reserved(index, b"walk")
            assert xmss_verify(public, b"walk", sig)
        elif action == "crash":
            burnt = store.next_index
            store.close()
            pending = []
            store = KeyStore.open(path, sign_observer=signed.append)
            assert store.next_index == burnt
            if burnt:
                with pytest.raises(DoubleSignError):
                    store.sign_with_reserved(rng.randrange(burnt), b"walk")
        assert len(signed) == len(set(signed))
    store.close()
    assert generation >= 10
