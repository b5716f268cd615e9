import hashlib
import random

import pytest

from xmssca.exceptions import IndexRangeError, ParameterError
from xmssca.config import PUBLIC_KEY_SIZES, SIGNATURE_SIZES
from xmssca.xmss import (
    ENTROPY_SIZE,
    N,
    XmssParams,
    XmssPublicKey,
    XmssSignature,
    node_cache_consistent,
    params_for_signature_size,
    xmss_keygen,
    xmss_sign,
    xmss_verify,
)

from conftest import H10_ENTROPY, TOY_ENTROPY


@pytest.mark.parametrize("height,size", [(10, 2500), (16, 2692), (20, 2820)])
def test_signature_sizes_match_published_table(height, size):
    params = XmssParams(height)
    assert params.signature_size == size
    assert SIGNATURE_SIZES[f"XMSS_{height}"] == size
    assert params_for_signature_size(size) == params


def test_public_key_is_68_bytes(toy_key):
    public, _ = toy_key
    encoded = public.to_bytes()
    assert len(encoded) == 68 == PUBLIC_KEY_SIZES["XMSS_16"]
    assert XmssPublicKey.from_bytes(encoded) == public


def test_unsupported_height():
    with pytest.raises(ParameterError):
        XmssParams(12)


def test_keygen_needs_full_entropy(toy_params):
    with pytest.raises(ParameterError):
        xmss_keygen(toy_params, bytes(ENTROPY_SIZE - 1))


def test_keygen_is_deterministic(toy_params, toy_key):
    public, secret = xmss_keygen(toy_params, TOY_ENTROPY)
    assert public == toy_key[0]
    assert secret.root == toy_key[1].root
    assert node_cache_consistent(secret)


def test_every_toy_index_signs_and_verifies(toy_key):
    public, secret = toy_key
    for index in range(16):
        message = f"message {index}".encode()
        sig = xmss_sign(secret, index, message)
        assert sig.index == index
        assert len(sig.to_bytes()) == secret.params.signature_size
        assert xmss_verify(public, message, sig)
        assert xmss_verify(public, message, sig.to_bytes())


def test_index_outside_tree(toy_key):
    _, secret = toy_key
    with pytest.raises(IndexRangeError):
        xmss_sign(secret, 16, b"m")


def test_tampering_is_rejected(toy_key):
    public, secret = toy_key
    sig = xmss_sign(secret, 5, b"original")
    assert not xmss_verify(public, b"altered", sig)

    raw = bytearray(sig.to_bytes())
    raw[100] ^= 0x01
    assert not xmss_verify(public, b"original", bytes(raw))

    # Same signature presented under a different index
    moved = XmssSignature(sig.params, 6, sig.r, sig.wots_sig, sig.auth_path)
    assert not xmss_verify(public, b"original", moved)


def test_malformed_signature_bytes_are_rejected_not_raised(toy_key):
    public, _ = toy_key
    assert not xmss_verify(public, b"m", b"short")
    with pytest.raises(ParameterError):
        XmssSignature.from_bytes(b"\x00" * 17)


def test_h10_signature(h10_key):
    public, secret = h10_key
    sig = xmss_sign(secret, 1023, b"last leaf")
    assert len(sig.to_bytes()) == 2500
    assert xmss_verify(public, b"last leaf", sig)


def test_single_bit_flips_are_rejected(toy_key):
    public, secret = toy_key
    rng = random.Random(0)
    raw = xmss_sign(secret, 9, b"flip me").to_bytes()
    for bit in rng.sample(range(len(raw) * 8), 100):
        mutated = bytearray(raw)
        mutated[bit // 8] ^= 1 << (bit % 8)
        assert not xmss_verify(public, b"flip me", bytes(mutated)), bit


def test_random_blobs_never_verify(toy_key):
    public, _ = toy_key
    rng = random.Random(1)
    size = public.params.signature_size
    for _ in range(10_000):
        blob = rng.randrange(16).to_bytes(4, "big") + rng.randbytes(size - 4)
        assert not xmss_verify(public, b"m", blob)


def test_random_h16_blobs_never_verify():
    rng = random.Random(2)
    params = XmssParams(16)
    public = XmssPublicKey(params, rng.randbytes(N), rng.randbytes(N))
    for _ in range(50):
        blob = rng.randrange(params.leaves).to_bytes(4, "big") + rng.randbytes(2692 - 4)
        assert len(blob) == params.signature_size
        assert not xmss_verify(public, b"m", blob)


# Stand-alone RFC 8391 treehash over hashlib, sharing no code with xmssca.xmss.
# WOTS+ secrets follow the package's seed expansion: PRF(PRF(sk_seed, i), j).

def _oracle_hash(pad: int, key: bytes, data: bytes) -> bytes:
    return hashlib.sha256(pad.to_bytes(32, "big") + key + data).digest()


def _oracle_address(kind: int, a: int, b: int, c: int, key_and_mask: int) -> bytes:
    words = (kind, a, b, c, key_and_mask)
    return bytes(12) + b"".join(w.to_bytes(4, "big") for w in words)


def _oracle_h(pub_seed: bytes, kind: int, a: int, height: int, index: int,
              left: bytes, right: bytes) -> bytes:
    key = _oracle_hash(3, pub_seed, _oracle_address(kind, a, height, index, 0))
    bm0 = _oracle_hash(3, pub_seed, _oracle_address(kind, a, height, index, 1))
    bm1 = _oracle_hash(3, pub_seed, _oracle_address(kind, a, height, index, 2))
    masked = bytes(x ^ y for x, y in zip(left, bm0)) + bytes(x ^ y for x, y in zip(right, bm1))
    return _oracle_hash(1, key, masked)


def _oracle_leaf(sk_seed: bytes, pub_seed: bytes, leaf: int) -> bytes:
    ots_seed = _oracle_hash(3, sk_seed, leaf.to_bytes(32, "big"))
    pk = []
    for chain in range(67):
        x = _oracle_hash(3, ots_seed, chain.to_bytes(32, "big"))
        for step in range(15):
            key = _oracle_hash(3, pub_seed, _oracle_address(0, leaf, chain, step, 0))
            mask = _oracle_hash(3, pub_seed, _oracle_address(0, leaf, chain, step, 1))
            x = _oracle_hash(0, key, bytes(p ^ q for p, q in zip(x, mask)))
        pk.append(x)
    height = 0
    while len(pk) > 1:
        paired = [_oracle_h(pub_seed, 1, leaf, height, i, pk[2 * i], pk[2 * i + 1])
                  for i in range(len(pk) // 2)]
        pk = paired + pk[len(pk) - len(pk) % 2:]
        height += 1
    return pk[0]


def _oracle_root(entropy: bytes, height: int) -> bytes:
    sk_seed, pub_seed = entropy[:32], entropy[64:]
    stack = []
    for leaf in range(1 << height):
        node, level, index = _oracle_leaf(sk_seed, pub_seed, leaf), 0, leaf
        while stack and stack[-1][1] == level:
            left, _ = stack.pop()
            index >>= 1
            node = _oracle_h(pub_seed, 2, 0, level, index, left, node)
            level += 1
        stack.append((node, level))
    assert len(stack) == 1
    return stack[0][0]


def test_toy_root_matches_independent_treehash(toy_key):
    assert toy_key[0].root == _oracle_root(TOY_ENTROPY, 4)


def test_h10_root_matches_independent_treehash(h10_key):
    assert h10_key[0].root == _oracle_root(H10_ENTROPY, 10)
