"""
XMSS hash-based signatures.

Single-tree XMSS with SHA-256 (n = 32, w = 16) following RFC 8391: WOTS+
one-time keys, L-tree compression of WOTS+ public keys and a binary hash
tree whose root is the long-term public key. The signing index is supplied
by the caller; index bookkeeping belongs to :mod:`xmssca.keystore`.

The secret keeps the complete node cache (2^(h+1) - 1 hashes) so that an
authentication path is a lookup.
"""

import hashlib
import hmac
import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Sequence, Tuple, Union

from .exceptions import IndexRangeError, ParameterError

logger = logging.getLogger(__name__)

N = 32
W = 16
LOG_W = 4
LEN_1 = 64
LEN_2 = 3
WOTS_LEN = LEN_1 + LEN_2
ENTROPY_SIZE = 3 * N
PUBLIC_KEY_SIZE = 4 + 2 * N

# Parameter identifiers; 0 marks the non-standard toy tree
OID_BY_HEIGHT: Dict[int, int] = {10: 0x00000001, 16: 0x00000002, 20: 0x00000003, 4: 0x00000000}
HEIGHT_BY_OID: Dict[int, int] = {oid: h for h, oid in OID_BY_HEIGHT.items()}

_PAD_F = (0).to_bytes(N, "big")
_PAD_H = (1).to_bytes(N, "big")
_PAD_HMSG = (2).to_bytes(N, "big")
_PAD_PRF = (3).to_bytes(N, "big")

_ADRS_OTS = 0
_ADRS_LTREE = 1
_ADRS_HASH_TREE = 2
_ADRS = struct.Struct(">IQIIIII")


@dataclass(frozen=True)
class XmssParams:
    """An XMSS-SHA2_h_256 parameter set."""
    tree_height: int
    n: int = N
    w: int = W
    wots_len: int = WOTS_LEN

    def __post_init__(self) -> None:
        if self.tree_height not in OID_BY_HEIGHT:
            raise ParameterError(f"Unsupported tree height: {self.tree_height}")
        if (self.n, self.w, self.wots_len) != (N, W, WOTS_LEN):
            raise ParameterError("Only n=32, w=16 is supported")

    @property
    def oid(self) -> int:
        return OID_BY_HEIGHT[self.tree_height]

    @property
    def leaves(self) -> int:
        return 1 << self.tree_height

    @property
    def signature_size(self) -> int:
        return 4 + self.n + self.wots_len * self.n + self.tree_height * self.n

    @property
    def name(self) -> str:
        return f"XMSS-SHA2_{self.tree_height}_256"

    @classmethod
    def from_oid(cls, oid: int) -> "XmssParams":
        try:
            return cls(HEIGHT_BY_OID[oid])
        except KeyError:
            raise ParameterError(f"Unknown XMSS parameter identifier: {oid:#010x}") from None


def params_for_signature_size(size: int) -> XmssParams:
    """Return the parameter set whose signatures are ``size`` bytes long.

    Raises:
        ParameterError: If no supported parameter set has that size
    """
    for height in OID_BY_HEIGHT:
        params = XmssParams(height)
        if params.signature_size == size:
            return params
    raise ParameterError(f"No XMSS parameter set has {size}-byte signatures")


@dataclass(frozen=True)
class XmssPublicKey:
    """XMSS public key: parameter OID, tree root and public seed."""
    params: XmssParams
    root: bytes
    pub_seed: bytes

    def to_bytes(self) -> bytes:
        return self.params.oid.to_bytes(4, "big") + self.root + self.pub_seed

    @classmethod
    def from_bytes(cls, data: bytes) -> "XmssPublicKey":
        if len(data) != PUBLIC_KEY_SIZE:
            raise ParameterError(f"XMSS public key must be {PUBLIC_KEY_SIZE} bytes, got {len(data)}")
        params = XmssParams.from_oid(int.from_bytes(data[:4], "big"))
        return cls(params, bytes(data[4:4 + N]), bytes(data[4 + N:]))


@dataclass(frozen=True)
class XmssSecret:
    """XMSS secret key with the full tree node cache.

    ``nodes`` holds all tree nodes level by level, leaves first, so the last
    entry is the root.
    """
    params: XmssParams
    sk_seed: bytes = field(repr=False)
    sk_prf: bytes = field(repr=False)
    pub_seed: bytes
    root: bytes
    nodes: Tuple[bytes, ...] = field(repr=False)

    def node(self, level: int, index: int) -> bytes:
        h = self.params.tree_height
        if not (0 <= level <= h and 0 <= index < (1 << (h - level))):
            raise IndexRangeError(f"No tree node at level {level}, index {index}")
        offset = (2 << h) - (2 << (h - level))
        return self.nodes[offset + index]

    def auth_path(self, index: int) -> bytes:
        return b"".join(
            self.node(level, (index >> level) ^ 1)
            for level in range(self.params.tree_height)
        )

    def public_key(self) -> XmssPublicKey:
        return XmssPublicKey(self.params, self.root, self.pub_seed)


@dataclass(frozen=True)
class XmssSignature:
    """Serialized as index(4) || r || wots_sig || auth_path."""
    params: XmssParams
    index: int
    r: bytes
    wots_sig: bytes
    auth_path: bytes

    def to_bytes(self) -> bytes:
        return self.index.to_bytes(4, "big") + self.r + self.wots_sig + self.auth_path

    @classmethod
    def from_bytes(cls, data: bytes, params: Union[XmssParams, None] = None) -> "XmssSignature":
        """Decode a signature; the parameter set is inferred from the length if omitted.

        Raises:
            ParameterError: If the length fits no (or not the given) parameter set
            IndexRangeError: If the embedded index exceeds the tree
        """
        data = bytes(data)
        if params is None:
            params = params_for_signature_size(len(data))
        elif len(data) != params.signature_size:
            raise ParameterError(
                f"{params.name} signatures are {params.signature_size} bytes, got {len(data)}"
            )
        index = int.from_bytes(data[:4], "big")
        if index >= params.leaves:
            raise IndexRangeError(f"Signature index {index} outside a tree of height {params.tree_height}")
        wots_end = 4 + N + WOTS_LEN * N
        return cls(params, index, data[4:4 + N], data[4 + N:wots_end], data[wots_end:])


def _prf(key: bytes, message: bytes) -> bytes:
    return hashlib.sha256(_PAD_PRF + key + message).digest()


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(N, "big")


def _adrs(kind: int, word4: int, word5: int, word6: int, key_and_mask: int) -> bytes:
    # layer and tree address are always 0 for a single tree
    return _ADRS.pack(0, 0, kind, word4, word5, word6, key_and_mask)


def _chain(x: bytes, start: int, steps: int, pub_seed: bytes, ots: int, chain: int) -> bytes:
    for j in range(start, start + steps):
        key = _prf(pub_seed, _adrs(_ADRS_OTS, ots, chain, j, 0))
        mask = _prf(pub_seed, _adrs(_ADRS_OTS, ots, chain, j, 1))
        x = hashlib.sha256(_PAD_F + key + _xor(x, mask)).digest()
    return x


def _rand_hash(left: bytes, right: bytes, pub_seed: bytes, kind: int,
               word4: int, height: int, index: int) -> bytes:
    key = _prf(pub_seed, _adrs(kind, word4, height, index, 0))
    mask_left = _prf(pub_seed, _adrs(kind, word4, height, index, 1))
    mask_right = _prf(pub_seed, _adrs(kind, word4, height, index, 2))
    return hashlib.sha256(_PAD_H + key + _xor(left, mask_left) + _xor(right, mask_right)).digest()


def hash_children(left: bytes, right: bytes, pub_seed: bytes, height: int, index: int) -> bytes:
    """Parent of two hash-tree nodes; ``height`` is the children's level."""
    return _rand_hash(left, right, pub_seed, _ADRS_HASH_TREE, 0, height, index)


def _ltree(pk: Sequence[bytes], pub_seed: bytes, address: int) -> bytes:
    nodes = list(pk)
    height = 0
    while len(nodes) > 1:
        merged = [
            _rand_hash(nodes[2 * i], nodes[2 * i + 1], pub_seed, _ADRS_LTREE, address, height, i)
            for i in range(len(nodes) // 2)
        ]
        if len(nodes) % 2:
            merged.append(nodes[-1])
        nodes = merged
        height += 1
    return nodes[0]


def _base_w(data: bytes, out_len: int) -> List[int]:
    digits: List[int] = []
    for byte in data:
        digits.append(byte >> 4)
        digits.append(byte & 0x0F)
    return digits[:out_len]


def _wots_digits(digest: bytes) -> List[int]:
    digits = _base_w(digest, LEN_1)
    checksum = sum(W - 1 - d for d in digits)
    checksum <<= 8 - (LEN_2 * LOG_W) % 8
    return digits + _base_w(checksum.to_bytes(2, "big"), LEN_2)


def _wots_secret(sk_seed: bytes, index: int) -> List[bytes]:
    ots_seed = _prf(sk_seed, index.to_bytes(N, "big"))
    return [_prf(ots_seed, i.to_bytes(N, "big")) for i in range(WOTS_LEN)]


def _h_msg(r: bytes, root: bytes, index: int, message: bytes) -> bytes:
    return hashlib.sha256(_PAD_HMSG + r + root + index.to_bytes(N, "big") + message).digest()


def compute_leaf(sk_seed: bytes, pub_seed: bytes, index: int) -> bytes:
    """L-tree compression of the WOTS+ public key of leaf ``index``."""
    secret = _wots_secret(sk_seed, index)
    pk = [_chain(secret[i], 0, W - 1, pub_seed, index, i) for i in range(WOTS_LEN)]
    return _ltree(pk, pub_seed, index)


@lru_cache(maxsize=4)
def _build_nodes(height: int, sk_seed: bytes, pub_seed: bytes) -> Tuple[bytes, ...]:
    level = [compute_leaf(sk_seed, pub_seed, i) for i in range(1 << height)]
    nodes = list(level)
    for k in range(height):
        level = [
            hash_children(level[2 * j], level[2 * j + 1], pub_seed, k, j)
            for j in range(len(level) // 2)
        ]
        nodes.extend(level)
    return tuple(nodes)


def xmss_keygen(params: XmssParams, entropy: bytes) -> Tuple[XmssPublicKey, XmssSecret]:
    """Generate a key pair deterministically from 96 bytes of entropy.

    Args:
        params: The parameter set
        entropy: sk_seed || sk_prf || pub_seed

    Returns:
        The public key and the secret with a fully populated node cache

    Raises:
        ParameterError: If the entropy has the wrong length
    """
    if not isinstance(params, XmssParams):
        raise ParameterError(f"Expected XmssParams, got {type(params).__name__}")
    if len(entropy) != ENTROPY_SIZE:
        raise ParameterError(f"Key generation needs {ENTROPY_SIZE} bytes of entropy, got {len(entropy)}")
    entropy = bytes(entropy)
    sk_seed, sk_prf, pub_seed = entropy[:N], entropy[N:2 * N], entropy[2 * N:]

    logger.info("building %s tree (%d leaves)", params.name, params.leaves)
    nodes = _build_nodes(params.tree_height, sk_seed, pub_seed)
    secret = XmssSecret(params, sk_seed, sk_prf, pub_seed, nodes[-1], nodes)
    return secret.public_key(), secret


def node_cache_consistent(secret: XmssSecret) -> bool:
    """Recompute every internal node from the cached leaves and compare."""
    h = secret.params.tree_height
    expected = (2 << h) - 1
    if len(secret.nodes) != expected:
        return False
    for k in range(h):
        for j in range(1 << (h - k - 1)):
            parent = hash_children(secret.node(k, 2 * j), secret.node(k, 2 * j + 1),
                                   secret.pub_seed, k, j)
            if parent != secret.node(k + 1, j):
                return False
    return secret.root == secret.node(h, 0)


def xmss_sign(secret: XmssSecret, index: int, message: bytes) -> XmssSignature:
    """Sign ``message`` with the one-time key ``index``.

    Raises:
        IndexRangeError: If ``index`` is outside the tree
    """
    params = secret.params
    if not 0 <= index < params.leaves:
        raise IndexRangeError(f"Index {index} outside a tree of height {params.tree_height}")
    r = _prf(secret.sk_prf, index.to_bytes(N, "big"))
    digits = _wots_digits(_h_msg(r, secret.root, index, message))
    wots_secret = _wots_secret(secret.sk_seed, index)
    wots_sig = b"".join(
        _chain(wots_secret[i], 0, digits[i], secret.pub_seed, index, i)
        for i in range(WOTS_LEN)
    )
    return XmssSignature(params, index, r, wots_sig, secret.auth_path(index))


def root_from_signature(pub_seed: bytes, message: bytes, sig: XmssSignature, root: bytes) -> bytes:
    """Recompute the tree root a signature commits to."""
    digits = _wots_digits(_h_msg(sig.r, root, sig.index, message))
    pk = [
        _chain(sig.wots_sig[i * N:(i + 1) * N], digits[i], W - 1 - digits[i], pub_seed, sig.index, i)
        for i in range(WOTS_LEN)
    ]
    node = _ltree(pk, pub_seed, sig.index)
    for k in range(sig.params.tree_height):
        sibling = sig.auth_path[k * N:(k + 1) * N]
        parent = sig.index >> (k + 1)
        if (sig.index >> k) & 1:
            node = hash_children(sibling, node, pub_seed, k, parent)
        else:
            node = hash_children(node, sibling, pub_seed, k, parent)
    return node


def xmss_verify(pk: XmssPublicKey, message: bytes, sig: Union[XmssSignature, bytes]) -> bool:
    """Check a signature; malformed input is a rejection, never an exception."""
    if not isinstance(sig, XmssSignature):
        try:
            sig = XmssSignature.from_bytes(bytes(sig), pk.params)
        except (ParameterError, IndexRangeError, TypeError, ValueError):
            return False
    if sig.params != pk.params or not 0 <= sig.index < pk.params.leaves:
        return False
    if len(sig.r) != N or len(sig.wots_sig) != WOTS_LEN * N or len(sig.auth_path) != sig.params.tree_height * N:
        return False
    return hmac.compare_digest(root_from_signature(pk.pub_seed, message, sig, pk.root), pk.root)
