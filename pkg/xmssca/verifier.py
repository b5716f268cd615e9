"""
Peer-side validation of XMSS-signed leaves.

A peer trusts one CA certificate and the schedules that CA distributed out
of band. A leaf is accepted only when its XMSS index is exactly the one its
schedule assigns to the leaf's validity window, so certificates generated
ahead of time are refused once a schedule update re-anchors the CA.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

from .certkit import (
    ECDSA_P256_SHA256,
    CaCertificate,
    ClassicalSuite,
    LeafCertificate,
    parse_cert,
    verify_certificate_signature,
    verify_handshake,
)
from .config import CA_CERT_FILE, SCHEDULE_DIR, SCHEDULE_FILE
from .exceptions import (
    CertificateParseError,
    ScheduleFormatError,
    ScheduleRejectedError,
    TrustAnchorError,
)
from .schedule import Schedule, decode_schedule, index_for_time, issue_time_for_index, verify_schedule
from .types import IssuancePolicy, RejectReason, VerificationResult
from .xmss import XmssPublicKey

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrustStore:
    """CA anchor and the schedules received so far, ordered by signing index."""
    ca: CaCertificate
    policy: IssuancePolicy
    schedules: Tuple[Schedule, ...] = ()

    @property
    def ca_key(self) -> XmssPublicKey:
        return self.ca.xmss_public_key

    @property
    def newest(self) -> Optional[Schedule]:
        return self.schedules[-1] if self.schedules else None


def trust_store_for(ca_bytes: bytes, policy: Optional[IssuancePolicy] = None) -> TrustStore:
    """Build an empty trust store around a self-signed CA certificate.

    Raises:
        TrustAnchorError: If the certificate is malformed, not a CA or not self-signed
    """
    try:
        ca = parse_cert(ca_bytes)
    except CertificateParseError as e:
        raise TrustAnchorError(f"Malformed CA certificate: {str(e)}") from e
    if not isinstance(ca, CaCertificate):
        raise TrustAnchorError("Certificate is not a CA certificate")
    if not verify_certificate_signature(ca, ca.xmss_public_key):
        raise TrustAnchorError("CA certificate is not self-signed by its key")
    return TrustStore(ca, policy or IssuancePolicy())


def ingest_schedule(ts: TrustStore, data: bytes) -> TrustStore:
    """Add a distributed schedule; returns a new store.

    Raises:
        ScheduleRejectedError: If the schedule is malformed, badly signed or not newer
    """
    try:
        schedule = decode_schedule(data, ts.policy)
    except ScheduleFormatError as e:
        raise ScheduleRejectedError(f"Malformed schedule: {str(e)}", "malformed") from e
    if not verify_schedule(schedule, ts.ca_key):
        raise ScheduleRejectedError("Schedule signature does not verify under the CA key", "bad-signature")
    newest = ts.newest
    if newest is not None and schedule.signing_index <= newest.signing_index:
        raise ScheduleRejectedError(
            f"Schedule signed with index {schedule.signing_index} is not newer than {newest.signing_index}",
            "replay",
        )
    logger.info("trusting schedule signed at index %d (start %d)", schedule.signing_index, schedule.start_index)
    return replace(ts, schedules=ts.schedules + (schedule,))


def _reject(reason: RejectReason, detail: str) -> VerificationResult:
    return VerificationResult(False, reason, detail)


def _check_leaf(ts: TrustStore, leaf_bytes: bytes, now: int) -> Tuple[VerificationResult, Optional[LeafCertificate]]:
    if not ts.schedules:
        return _reject(RejectReason.NO_SCHEDULE, "no schedule received"), None
    try:
        leaf = parse_cert(leaf_bytes)
    except CertificateParseError as e:
        return _reject(RejectReason.MALFORMED, str(e)), None
    if not isinstance(leaf, LeafCertificate):
        return _reject(RejectReason.MALFORMED, "not a leaf certificate"), None
    if leaf.issuer_cn != ts.ca.subject_cn:
        return _reject(RejectReason.WRONG_ISSUER, f"issuer {leaf.issuer_cn!r}"), None
    if not verify_certificate_signature(leaf, ts.ca_key):
        return _reject(RejectReason.BAD_SIGNATURE, "XMSS signature does not verify"), None
    if now < leaf.not_before:
        return _reject(RejectReason.NOT_YET_VALID, f"valid from {leaf.not_before}"), None
    if now > leaf.not_after:
        return _reject(RejectReason.EXPIRED, f"expired at {leaf.not_after}"), None

    index = leaf.xmss_index
    if leaf.serial != index:
        return _reject(RejectReason.SCHEDULE_MISMATCH, f"serial {leaf.serial} differs from index {index}"), None
    earlier = [s for s in ts.schedules if s.signing_index < index]
    if not earlier:
        return _reject(RejectReason.NO_SCHEDULE, f"no schedule signed before index {index}"), None
    applicable = earlier[-1]

    # A newer schedule that existed before this leaf was due makes the leaf premature
    issued_at = leaf.not_before - ts.policy.overlap_seconds
    for later in ts.schedules[len(earlier):]:
        if later.creation_date < issued_at:
            return _reject(RejectReason.SCHEDULE_MISMATCH,
                           f"index {index} superseded by the schedule signed at {later.signing_index}"), None

    expected = index_for_time(applicable, ts.policy, leaf.not_before)
    if expected != index:
        return _reject(RejectReason.SCHEDULE_MISMATCH,
                       f"index {index} but schedule assigns {expected} to {leaf.not_before}"), None
    if leaf.not_before != issue_time_for_index(applicable, ts.policy, index):
        return _reject(RejectReason.SCHEDULE_MISMATCH, "validity does not start at its slot"), None
    if leaf.not_after - leaf.not_before != applicable.validity_minutes * 60:
        return _reject(RejectReason.SCHEDULE_MISMATCH, "validity span differs from the schedule"), None
    return VerificationResult(True), leaf


def verify_leaf(ts: TrustStore, leaf_bytes: bytes, now: int) -> VerificationResult:
    """Validate a leaf at POSIX time ``now``; never raises."""
    result, _ = _check_leaf(ts, leaf_bytes, now)
    return result


def verify_peer_auth(ts: TrustStore, leaf_bytes: bytes, transcript: bytes, signature: bytes, now: int,
                     suite: ClassicalSuite = ECDSA_P256_SHA256) -> VerificationResult:
    """Validate a leaf and the handshake signature made with its key."""
    result, leaf = _check_leaf(ts, leaf_bytes, now)
    if leaf is None:
        return result
    return verify_handshake(leaf, transcript, signature, now, suite)


def load_trust_store(directory: Union[str, Path], policy: Optional[IssuancePolicy] = None) -> TrustStore:
    """Trust store from a directory holding ``ca.der`` and schedules.

    Schedules under ``schedules/`` are ingested oldest first; without that
    directory the single ``schedule.sched`` is used. Schedules that are
    rejected are skipped with a warning.

    Raises:
        TrustAnchorError: If the CA certificate is missing or unusable
    """
    directory = Path(directory)
    try:
        ca_bytes = (directory / CA_CERT_FILE).read_bytes()
    except OSError as e:
        raise TrustAnchorError(f"Error reading {directory / CA_CERT_FILE}: {str(e)}") from e
    ts = trust_store_for(ca_bytes, policy)

    history = directory / SCHEDULE_DIR
    if history.is_dir():
        paths = sorted(history.glob("*.sched"), key=lambda p: int(p.stem) if p.stem.isdigit() else -1)
    else:
        paths = [directory / SCHEDULE_FILE]
    for path in paths:
        try:
            ts = ingest_schedule(ts, path.read_bytes())
        except (OSError, ScheduleRejectedError) as e:
            logger.warning("skipping schedule %s: %s", path, e)
    return ts
