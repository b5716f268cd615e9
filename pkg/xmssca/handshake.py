"""
Loopback handshake authentication between two peers.

The initiator owns a CA home directory (current leaf and its classical
secret); the responder owns a trust bundle (CA certificate and schedules).
Each round the initiator signs a fresh transcript with the leaf key and
sends leaf and signature; the responder validates both.
"""

import logging
import random
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

from .certkit import ECDSA_P256_SHA256, ClassicalSuite, authenticate_handshake, parse_cert
from .config import LEAF_CERT_FILE, LEAF_KEY_FILE, SIGNATURE_SIZES
from .exceptions import CertificateParseError, StorageError
from .types import IssuancePolicy
from .verifier import load_trust_store, verify_peer_auth

logger = logging.getLogger(__name__)

# Length of the random handshake transcript signed per round (bytes)
TRANSCRIPT_SIZE = 64


@dataclass(frozen=True)
class HandshakeReport:
    """Outcome of a loopback run."""
    rounds: int
    accepted: int
    rejections: Dict[str, int]
    leaf_bytes: int
    classical_signature_bytes: int
    xmss_signature_bytes: int
    xmss_parameter_set: str
    comparison: Dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.rounds > 0 and self.accepted == self.rounds

    @property
    def bytes_on_wire(self) -> int:
        """Bytes sent per authentication: leaf certificate plus classical signature."""
        return self.leaf_bytes + self.classical_signature_bytes


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise StorageError(f"Error reading {path}: {str(e)}") from e


def run_loopback_handshake(initiator_dir: Union[str, Path], responder_dir: Union[str, Path],
                           n_rounds: int = 100, now: Optional[int] = None,
                           policy: Optional[IssuancePolicy] = None,
                           suite: ClassicalSuite = ECDSA_P256_SHA256,
                           seed: int = 0) -> HandshakeReport:
    """Authenticate the initiator to the responder ``n_rounds`` times.

    Args:
        initiator_dir: CA home holding the current leaf and its secret
        responder_dir: Directory holding the CA certificate and schedules
        n_rounds: Number of authentications
        now: Verification time (POSIX seconds); the system clock when None
        policy: Issuance policy shared by the peers
        suite: Classical suite of the leaf key
        seed: Seed of the transcript generator

    Returns:
        The report; rejections are counted by reason, never raised

    Raises:
        StorageError: If the initiator's leaf files cannot be read
        TrustAnchorError: If the responder has no usable CA certificate
    """
    initiator_dir, responder_dir = Path(initiator_dir), Path(responder_dir)
    leaf_bytes = _read(initiator_dir / LEAF_CERT_FILE)
    leaf_secret = _read(initiator_dir / LEAF_KEY_FILE)
    try:
        leaf = parse_cert(leaf_bytes)
    except CertificateParseError as e:
        raise StorageError(f"Initiator leaf is unreadable: {str(e)}") from e
    trust = load_trust_store(responder_dir, policy)
    now = int(time.time()) if now is None else now

    transcripts = random.Random(seed)
    rejections: "Counter[str]" = Counter()
    accepted = 0
    signature_bytes = 0
    for _ in range(n_rounds):
        transcript = bytes(transcripts.getrandbits(8) for _ in range(TRANSCRIPT_SIZE))
        signature = authenticate_handshake(leaf_secret, transcript, suite)
        signature_bytes = max(signature_bytes, len(signature))
        result = verify_peer_auth(trust, leaf_bytes, transcript, signature, now, suite)
        if result.accepted:
            accepted += 1
        else:
            reason = result.reason.value if result.reason else "unknown"
            rejections[reason] += 1
            logger.debug("round rejected: %s (%s)", reason, result.detail)

    height = leaf.xmss_signature.params.tree_height
    label = f"XMSS_{height}"
    comparison = dict(SIGNATURE_SIZES)
    comparison.setdefault(label, leaf.xmss_signature.params.signature_size)
    if rejections:
        logger.warning("%d of %d handshakes rejected: %s", sum(rejections.values()), n_rounds, dict(rejections))
    return HandshakeReport(
        rounds=n_rounds,
        accepted=accepted,
        rejections=dict(sorted(rejections.items())),
        leaf_bytes=len(leaf_bytes),
        classical_signature_bytes=signature_bytes,
        xmss_signature_bytes=len(leaf.xmss_signature.to_bytes()),
        xmss_parameter_set=label,
        comparison=comparison,
    )
