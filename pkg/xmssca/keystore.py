"""
Persistent XMSS key state with single-use index enforcement.

A ``.xks`` file holds the whole secret (seeds, root and node cache) plus the
next unused index. Signing follows reserve-then-sign: the incremented
counter is durably written before the reserved index is handed out, so a
crash can waste an index but never reuse one.

File layout (big-endian)::

    magic "XKSF" | version u16 | oid u32 | height u8 | next_index u32 |
    flags u8 | secret_len u32 | secret | sha256 over all prior bytes
"""

import fcntl
import hashlib
import hmac
import logging
import os
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Set, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .exceptions import (
    DoubleSignError,
    IntegrityError,
    KeyExhaustedError,
    KeyStoreError,
    ParameterError,
    ProtocolMisuseError,
    StorageError,
    StoreLockedError,
)
from .utils import atomic_write
from .xmss import (
    ENTROPY_SIZE,
    N,
    XmssParams,
    XmssPublicKey,
    XmssSecret,
    XmssSignature,
    xmss_keygen,
    xmss_sign,
    node_cache_consistent,
)

logger = logging.getLogger(__name__)

MAGIC = b"XKSF"
VERSION = 1
FLAG_ENCRYPTED = 0x01
TAG_SIZE = 32
_HEADER = struct.Struct(">4sHIBIBI")

SignObserver = Callable[[int], None]


class StateCipher(ABC):
    """At-rest protection hook for the secret part of the key state."""

    flags = 0

    @abstractmethod
    def encrypt(self, plaintext: bytes) -> bytes:
        pass

    @abstractmethod
    def decrypt(self, ciphertext: bytes) -> bytes:
        pass


class PassThroughCipher(StateCipher):
    """Stores the secret unencrypted."""

    def encrypt(self, plaintext: bytes) -> bytes:
        return plaintext

    def decrypt(self, ciphertext: bytes) -> bytes:
        return ciphertext


class AesGcmStateCipher(StateCipher):
    """AES-256-GCM with a caller-provided key; nonce is prepended."""

    flags = FLAG_ENCRYPTED

    def __init__(self, key: bytes):
        if len(key) != 32:
            raise KeyStoreError("AES-GCM state key must be 32 bytes")
        self._aead = AESGCM(key)

    def encrypt(self, plaintext: bytes) -> bytes:
        nonce = os.urandom(12)
        return nonce + self._aead.encrypt(nonce, plaintext, MAGIC)

    def decrypt(self, ciphertext: bytes) -> bytes:
        try:
            return self._aead.decrypt(ciphertext[:12], ciphertext[12:], MAGIC)
        except InvalidTag as e:
            raise IntegrityError("Key state secret failed authenticated decryption") from e


@dataclass(frozen=True)
class KeyState:
    """Decoded contents of a key-state file."""
    params: XmssParams
    next_index: int
    secret: XmssSecret


def _secret_blob(secret: XmssSecret) -> bytes:
    return b"".join((secret.sk_seed, secret.sk_prf, secret.pub_seed, secret.root) + secret.nodes)


def encode_key_state(state: KeyState, cipher: Optional[StateCipher] = None) -> bytes:
    """Serialize a key state, tag included."""
    cipher = cipher or PassThroughCipher()
    blob = cipher.encrypt(_secret_blob(state.secret))
    header = _HEADER.pack(MAGIC, VERSION, state.params.oid, state.params.tree_height,
                          state.next_index, cipher.flags, len(blob))
    body = header + blob
    return body + hashlib.sha256(body).digest()


def decode_key_state(data: bytes, cipher: Optional[StateCipher] = None) -> KeyState:
    """Parse and check a key-state file.

    Args:
        data: File contents
        cipher: Cipher for encrypted files

    Returns:
        The decoded state

    Raises:
        IntegrityError: If the tag, layout or tree cache does not check out
        KeyStoreError: If the file is encrypted and no cipher was given
    """
    if len(data) < _HEADER.size + TAG_SIZE:
        raise IntegrityError(f"Key state file too short ({len(data)} bytes)")
    body, tag = data[:-TAG_SIZE], data[-TAG_SIZE:]
    if not hmac.compare_digest(hashlib.sha256(body).digest(), tag):
        raise IntegrityError("Key state integrity tag mismatch")

    magic, version, oid, height, next_index, flags, blob_len = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise IntegrityError(f"Bad key state magic {magic!r}")
    if version != VERSION:
        raise IntegrityError(f"Unsupported key state version {version}")
    try:
        params = XmssParams.from_oid(oid)
    except ParameterError as e:
        raise IntegrityError(str(e)) from e
    if params.tree_height != height:
        raise IntegrityError(f"Height {height} does not match parameter identifier {oid:#x}")
    if next_index > params.leaves:
        raise IntegrityError(f"next_index {next_index} beyond {params.leaves} leaves")
    blob = body[_HEADER.size:]
    if len(blob) != blob_len:
        raise IntegrityError("Key state secret length mismatch")

    if flags & FLAG_ENCRYPTED:
        if cipher is None or not cipher.flags & FLAG_ENCRYPTED:
            raise KeyStoreError("Key state is encrypted; a state key is required")
        plain = cipher.decrypt(blob)
    else:
        plain = blob

    node_count = (2 << height) - 1
    if len(plain) != (4 + node_count) * N:
        raise IntegrityError("Key state secret has the wrong size for its tree height")
    words = [plain[i:i + N] for i in range(0, len(plain), N)]
    sk_seed, sk_prf, pub_seed, root = words[:4]
    nodes = tuple(words[4:])
    if nodes[-1] != root:
        raise IntegrityError("Root does not match the top of the node cache")
    secret = XmssSecret(params, sk_seed, sk_prf, pub_seed, root, nodes)
    return KeyState(params, next_index, secret)


def _acquire_lock(path: Path) -> int:
    lock_path = path.with_name(path.name + ".lock")
    fd = os.open(str(lock_path), os.O_RDWR | os.O_CREAT, 0o600)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except OSError as e:
        os.close(fd)
        raise StoreLockedError(f"Key state {path} is locked by another handle") from e
    return fd


class KeyStore:
    """Exclusive handle on one key-state file."""

    def __init__(self, path: Path, state: KeyState, lock_fd: int,
                 cipher: Optional[StateCipher] = None,
                 sign_observer: Optional[SignObserver] = None):
        self._path = path
        self._state = state
        self._lock_fd: Optional[int] = lock_fd
        self._cipher = cipher
        self._reserved: Set[int] = set()
        self.sign_observer = sign_observer

    @classmethod
    def create(cls, path: Union[str, Path], params: XmssParams,
               entropy: Optional[bytes] = None,
               cipher: Optional[StateCipher] = None,
               sign_observer: Optional[SignObserver] = None) -> "KeyStore":
        """Generate a key and write a fresh store.

        Raises:
            KeyStoreError: If the file already exists
        """
        path = Path(path)
        if path.exists():
            raise KeyStoreError(f"Refusing to overwrite existing key state {path}")
        if entropy is None:
            entropy = os.urandom(ENTROPY_SIZE)
        _, secret = xmss_keygen(params, entropy)
        state = KeyState(params, 0, secret)
        lock_fd = _acquire_lock(path)
        try:
            atomic_write(path, encode_key_state(state, cipher))
        except StorageError:
            os.close(lock_fd)
            raise
        logger.info("created key state %s (%s)", path, params.name)
        return cls(path, state, lock_fd, cipher, sign_observer)

    @classmethod
    def open(cls, path: Union[str, Path], cipher: Optional[StateCipher] = None,
             sign_observer: Optional[SignObserver] = None,
             verify_cache: bool = False) -> "KeyStore":
        """Lock and load an existing store.

        Args:
            path: The ``.xks`` file
            cipher: Cipher for encrypted stores
            sign_observer: Called with every index just before it is signed
            verify_cache: Recompute the whole node cache on load

        Raises:
            StoreLockedError: If another handle holds the lock
            IntegrityError: If the file fails its checks
        """
        path = Path(path)
        lock_fd = _acquire_lock(path)
        try:
            with open(path, "rb") as handle:
                state = decode_key_state(handle.read(), cipher)
            if verify_cache and not node_cache_consistent(state.secret):
                raise IntegrityError(f"Node cache of {path} is inconsistent")
        except OSError as e:
            os.close(lock_fd)
            raise KeyStoreError(f"Error reading key state {path}: {str(e)}") from e
        except KeyStoreError:
            os.close(lock_fd)
            logger.error("refusing key state %s", path)
            raise
        logger.info("opened key state %s at index %d", path, state.next_index)
        return cls(path, state, lock_fd, cipher, sign_observer)

    @property
    def path(self) -> Path:
        return self._path

    @property
    def params(self) -> XmssParams:
        return self._state.params

    @property
    def next_index(self) -> int:
        return self._state.next_index

    @property
    def public_key(self) -> XmssPublicKey:
        return self._state.secret.public_key()

    @property
    def closed(self) -> bool:
        return self._lock_fd is None

    def remaining_signatures(self) -> int:
        return self.params.leaves - self._state.next_index

    def reserve_index(self) -> int:
        """Durably advance the counter and hand out the previous value.

        Raises:
            KeyExhaustedError: If every index is used
            StorageError: If the new counter could not be persisted
        """
        self._check_open()
        index = self._state.next_index
        if index >= self.params.leaves:
            raise KeyExhaustedError(f"All {self.params.leaves} one-time keys are used")
        updated = replace(self._state, next_index=index + 1)
        atomic_write(self._path, encode_key_state(updated, self._cipher))
        self._state = updated
        self._reserved.add(index)
        logger.info("reserved index %d (%d left)", index, self.remaining_signatures())
        return index

    def sign_with_reserved(self, index: int, message: bytes) -> XmssSignature:
        """Sign with an index this handle reserved and has not used.

        Raises:
            ProtocolMisuseError: If ``index`` was never reserved
            DoubleSignError: If ``index`` was already consumed
        """
        self._check_open()
        if index >= self._state.next_index:
            raise ProtocolMisuseError(f"Index {index} was never reserved")
        if index not in self._reserved:
            raise DoubleSignError(f"Index {index} is already consumed")
        self._reserved.discard(index)
        if self.sign_observer is not None:
            self.sign_observer(index)
        return xmss_sign(self._state.secret, index, message)

    def close(self) -> None:
        """Release the lock; reserved but unsigned indices are abandoned."""
        if self._lock_fd is None:
            return
        if self._reserved:
            logger.warning("abandoning reserved indices %s", sorted(self._reserved))
        self._reserved.clear()
        try:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
        finally:
            os.close(self._lock_fd)
            self._lock_fd = None

    def _check_open(self) -> None:
        if self._lock_fd is None:
            raise KeyStoreError(f"Key state {self._path} is closed")

    def __enter__(self) -> "KeyStore":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()
