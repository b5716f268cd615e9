"""
XMSS-signed X.509 certificates.

The model covers exactly what the CA emits: a self-signed CA certificate
carrying the XMSS public key, and short-lived leaf certificates carrying a
classical (ECDSA P-256) key. Fields appear in a fixed order; anything else
is rejected on parse. The TBS signature-algorithm field names the classical
suite of the leaf, while the outer algorithm identifier names XMSS.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec

from . import der
from .config import (
    OID_BASIC_CONSTRAINTS,
    OID_COMMON_NAME,
    OID_EC_PUBLIC_KEY,
    OID_ECDSA_WITH_SHA256,
    OID_SECP256R1,
    OID_SUBJECT_ALT_NAME,
    OID_XMSS,
)
from .exceptions import (
    CertificateParseError,
    IndexRangeError,
    ParameterError,
    ScheduleMismatchError,
)
from .keystore import KeyStore
from .schedule import Schedule, due_index, issue_time_for_index
from .types import IssuancePolicy, KeyPair, RejectReason, VerificationResult
from .xmss import XmssPublicKey, XmssSignature, xmss_verify

logger = logging.getLogger(__name__)

OID_NAMES: Dict[str, str] = {
    OID_XMSS: "id-alg-xmss-hashsig",
    OID_ECDSA_WITH_SHA256: "ecdsaWithSHA256",
    OID_EC_PUBLIC_KEY: "Elliptic Curve",
    OID_SECP256R1: "secp256r1",
}

_DNS_NAME_TAG = der.context_tag(2, constructed=False)
_EXTENSIONS_TAG = der.context_tag(3)
_VERSION_TAG = der.context_tag(0)
_X509_V3 = 2


@dataclass(frozen=True)
class ClassicalSuite:
    """A classical signature scheme used for leaf keys."""
    suite_id: str
    signature_oid: str
    keygen: Callable[[], KeyPair]
    sign: Callable[[bytes, bytes], bytes]
    verify: Callable[[bytes, bytes, bytes], bool]


def _p256_keygen() -> KeyPair:
    key = ec.generate_private_key(ec.SECP256R1())
    secret = key.private_bytes(
        serialization.Encoding.DER,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )
    public = key.public_key().public_bytes(
        serialization.Encoding.X962,
        serialization.PublicFormat.UncompressedPoint,
    )
    return secret, public


def _p256_sign(secret: bytes, message: bytes) -> bytes:
    key = serialization.load_der_private_key(secret, password=None)
    if not isinstance(key, ec.EllipticCurvePrivateKey):
        raise ValueError("Leaf secret is not an EC key")
    return key.sign(message, ec.ECDSA(hashes.SHA256()))


def _p256_verify(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        key = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), public)
        key.verify(signature, message, ec.ECDSA(hashes.SHA256()))
        return True
    except (InvalidSignature, ValueError):
        return False


ECDSA_P256_SHA256 = ClassicalSuite(
    suite_id="ecdsa-p256-sha256",
    signature_oid=OID_ECDSA_WITH_SHA256,
    keygen=_p256_keygen,
    sign=_p256_sign,
    verify=_p256_verify,
)

SUITES: Dict[str, ClassicalSuite] = {ECDSA_P256_SHA256.suite_id: ECDSA_P256_SHA256}


@dataclass(frozen=True)
class SubjectPublicKeyInfo:
    """Algorithm, curve (None means NULL parameters) and key bytes."""
    algorithm_oid: str
    parameters_oid: Optional[str]
    key: bytes


@dataclass(frozen=True)
class TbsCertificate:
    """The signed part of a certificate."""
    serial: int
    issuer_cn: str
    subject_cn: str
    not_before: int
    not_after: int
    signature_oid: str
    spki: SubjectPublicKeyInfo
    san_dns: Optional[str] = None
    is_ca: bool = False


@dataclass(frozen=True)
class Certificate:
    """A TBS section with its XMSS signature."""
    tbs: TbsCertificate
    xmss_signature: XmssSignature
    xmss_alg_oid: str = OID_XMSS

    @property
    def serial(self) -> int:
        return self.tbs.serial

    @property
    def issuer_cn(self) -> str:
        return self.tbs.issuer_cn

    @property
    def subject_cn(self) -> str:
        return self.tbs.subject_cn

    @property
    def not_before(self) -> int:
        return self.tbs.not_before

    @property
    def not_after(self) -> int:
        return self.tbs.not_after

    @property
    def spki(self) -> SubjectPublicKeyInfo:
        return self.tbs.spki

    @property
    def san_dns(self) -> Optional[str]:
        return self.tbs.san_dns

    @property
    def xmss_index(self) -> int:
        return self.xmss_signature.index

    def tbs_bytes(self) -> bytes:
        return encode_tbs(self.tbs)


@dataclass(frozen=True)
class LeafCertificate(Certificate):
    """Short-lived certificate for a classical handshake key."""


@dataclass(frozen=True)
class CaCertificate(Certificate):
    """Self-signed certificate for the XMSS public key."""

    @property
    def xmss_public_key(self) -> XmssPublicKey:
        return XmssPublicKey.from_bytes(self.spki.key)


@dataclass(frozen=True)
class MismatchReport:
    """Why a leaf could not be issued for an index."""
    index: int
    due_index: Optional[int]
    reserved_index: int
    now: int

    def describe(self) -> str:
        due = "out of schedule" if self.due_index is None else str(self.due_index)
        return (f"index {self.index} does not match schedule (due {due}) "
                f"or reservation ({self.reserved_index}) at {self.now}")


def _algorithm_identifier(oid: str) -> bytes:
    enc = der.DerEncoder()
    enc.enter(der.SEQUENCE)
    enc.write_oid(oid)
    if oid == OID_XMSS:
        enc.write_null()
    enc.leave()
    return enc.getvalue()


def _name(common_name: str) -> bytes:
    enc = der.DerEncoder()
    enc.enter(der.SEQUENCE)
    enc.enter(der.SET)
    enc.enter(der.SEQUENCE)
    enc.write_oid(OID_COMMON_NAME)
    enc.write_utf8(common_name)
    enc.leave()
    enc.leave()
    enc.leave()
    return enc.getvalue()


def _spki(info: SubjectPublicKeyInfo) -> bytes:
    enc = der.DerEncoder()
    enc.enter(der.SEQUENCE)
    enc.enter(der.SEQUENCE)
    enc.write_oid(info.algorithm_oid)
    if info.parameters_oid is None:
        enc.write_null()
    else:
        enc.write_oid(info.parameters_oid)
    enc.leave()
    enc.write_bit_string(info.key)
    enc.leave()
    return enc.getvalue()


def _extensions(tbs: TbsCertificate) -> bytes:
    if not tbs.is_ca and tbs.san_dns is None:
        return b""
    enc = der.DerEncoder()
    enc.enter(_EXTENSIONS_TAG)
    enc.enter(der.SEQUENCE)
    if tbs.is_ca:
        enc.enter(der.SEQUENCE)
        enc.write_oid(OID_BASIC_CONSTRAINTS)
        enc.write_boolean(True)
        enc.write_octet_string(der.encode_tlv(der.SEQUENCE, der.encode_tlv(der.BOOLEAN, b"\xff")))
        enc.leave()
    if tbs.san_dns is not None:
        names = der.encode_tlv(der.SEQUENCE, der.encode_tlv(_DNS_NAME_TAG, tbs.san_dns.encode("ascii")))
        enc.enter(der.SEQUENCE)
        enc.write_oid(OID_SUBJECT_ALT_NAME)
        enc.write_octet_string(names)
        enc.leave()
    enc.leave()
    enc.leave()
    return enc.getvalue()


def encode_tbs(tbs: TbsCertificate) -> bytes:
    """DER of the to-be-signed section."""
    enc = der.DerEncoder()
    enc.enter(der.SEQUENCE)
    enc.enter(_VERSION_TAG)
    enc.write_integer(_X509_V3)
    enc.leave()
    enc.write_integer(tbs.serial)
    enc.write_raw(_algorithm_identifier(tbs.signature_oid))
    enc.write_raw(_name(tbs.issuer_cn))
    enc.enter(der.SEQUENCE)
    enc.write_generalized_time(tbs.not_before)
    enc.write_generalized_time(tbs.not_after)
    enc.leave()
    enc.write_raw(_name(tbs.subject_cn))
    enc.write_raw(_spki(tbs.spki))
    enc.write_raw(_extensions(tbs))
    enc.leave()
    return enc.getvalue()


def encode_cert(cert: Certificate) -> bytes:
    """DER of a complete certificate."""
    enc = der.DerEncoder()
    enc.enter(der.SEQUENCE)
    enc.write_raw(cert.tbs_bytes())
    enc.write_raw(_algorithm_identifier(cert.xmss_alg_oid))
    enc.write_bit_string(cert.xmss_signature.to_bytes())
    enc.leave()
    return enc.getvalue()


def _read_name(dec: der.DerDecoder) -> str:
    dec.enter(der.SEQUENCE)
    dec.enter(der.SET)
    dec.enter(der.SEQUENCE)
    position = dec.position
    if dec.read_oid() != OID_COMMON_NAME:
        raise dec.fail("Only commonName attributes are supported", position)
    value = dec.read_utf8()
    dec.leave()
    dec.leave()
    dec.leave()
    return value


def _read_algorithm(dec: der.DerDecoder, allowed: Tuple[str, ...]) -> str:
    dec.enter(der.SEQUENCE)
    position = dec.position
    oid = dec.read_oid()
    if oid not in allowed:
        raise dec.fail(f"Unknown algorithm OID {oid}", position)
    if oid == OID_XMSS:
        dec.read_null()
    dec.leave()
    return oid


def _read_spki(dec: der.DerDecoder) -> SubjectPublicKeyInfo:
    dec.enter(der.SEQUENCE)
    dec.enter(der.SEQUENCE)
    position = dec.position
    algorithm = dec.read_oid()
    if algorithm == OID_EC_PUBLIC_KEY:
        curve_position = dec.position
        parameters: Optional[str] = dec.read_oid()
        if parameters != OID_SECP256R1:
            raise dec.fail(f"Unsupported curve {parameters}", curve_position)
    elif algorithm == OID_XMSS:
        dec.read_null()
        parameters = None
    else:
        raise dec.fail(f"Unknown public key algorithm OID {algorithm}", position)
    dec.leave()
    key_position = dec.position
    key = dec.read_bit_string()
    dec.leave()
    if algorithm == OID_EC_PUBLIC_KEY and (len(key) != 65 or key[0] != 0x04):
        raise dec.fail("EC key must be an uncompressed P-256 point", key_position)
    if algorithm == OID_XMSS:
        try:
            XmssPublicKey.from_bytes(key)
        except ParameterError as e:
            raise dec.fail(str(e), key_position) from e
    return SubjectPublicKeyInfo(algorithm, parameters, key)


def _read_extensions(dec: der.DerDecoder) -> Tuple[Optional[str], bool]:
    san_dns: Optional[str] = None
    is_ca = False
    if dec.peek_tag() != _EXTENSIONS_TAG:
        return san_dns, is_ca
    dec.enter(_EXTENSIONS_TAG)
    dec.enter(der.SEQUENCE)
    seen: List[str] = []
    while not dec.eof():
        dec.enter(der.SEQUENCE)
        position = dec.position
        oid = dec.read_oid()
        if oid == OID_BASIC_CONSTRAINTS and not seen:
            if not dec.read_boolean():
                raise dec.fail("basicConstraints must be critical", position)
            inner = der.DerDecoder(dec.read_octet_string())
            inner.enter(der.SEQUENCE)
            if not inner.read_boolean():
                raise dec.fail("basicConstraints without cA", position)
            inner.leave()
            is_ca = True
        elif oid == OID_SUBJECT_ALT_NAME and OID_SUBJECT_ALT_NAME not in seen:
            inner = der.DerDecoder(dec.read_octet_string())
            inner.enter(der.SEQUENCE)
            raw = inner.read_content(_DNS_NAME_TAG)
            inner.leave()
            try:
                san_dns = raw.decode("ascii")
            except UnicodeDecodeError as e:
                raise dec.fail("dNSName is not ASCII", position) from e
        else:
            raise dec.fail(f"Unsupported or misplaced extension {oid}", position)
        seen.append(oid)
        dec.leave()
    dec.leave()
    dec.leave()
    if not seen:
        raise dec.fail("Empty extensions block")
    return san_dns, is_ca


def _parse_tbs(dec: der.DerDecoder) -> TbsCertificate:
    dec.enter(der.SEQUENCE)
    dec.enter(_VERSION_TAG)
    position = dec.position
    if dec.read_integer() != _X509_V3:
        raise dec.fail("Only X.509 v3 is supported", position)
    dec.leave()
    serial = dec.read_integer()
    signature_oid = _read_algorithm(dec, (OID_ECDSA_WITH_SHA256, OID_XMSS))
    issuer_cn = _read_name(dec)
    dec.enter(der.SEQUENCE)
    not_before = dec.read_generalized_time()
    not_after = dec.read_generalized_time()
    dec.leave()
    subject_cn = _read_name(dec)
    spki = _read_spki(dec)
    san_dns, is_ca = _read_extensions(dec)
    dec.leave()
    return TbsCertificate(serial, issuer_cn, subject_cn, not_before, not_after,
                          signature_oid, spki, san_dns, is_ca)


def parse_cert(data: bytes) -> Certificate:
    """Parse DER into a CaCertificate or LeafCertificate.

    Args:
        data: Certificate bytes

    Returns:
        The parsed certificate; its signature is not verified

    Raises:
        CertificateParseError: For any malformed, non-canonical or unsupported input
    """
    dec = der.DerDecoder(data)
    try:
        dec.enter(der.SEQUENCE)
        tbs_start = dec.position
        tbs_der = dec.read_element(der.SEQUENCE)
        _read_algorithm(dec, (OID_XMSS,))
        signature_position = dec.position
        raw_signature = dec.read_bit_string()
        dec.leave()
        if not dec.eof():
            raise dec.fail("Trailing data after certificate")
        try:
            signature = XmssSignature.from_bytes(raw_signature)
        except (ParameterError, IndexRangeError) as e:
            raise dec.fail(str(e), signature_position) from e

        tbs = _parse_tbs(der.DerDecoder(data, tbs_start, tbs_start + len(tbs_der)))
        if encode_tbs(tbs) != tbs_der:
            raise dec.fail("Non-canonical TBS encoding", tbs_start)
    except CertificateParseError:
        raise
    except (ValueError, OverflowError, IndexError, UnicodeError) as e:
        raise CertificateParseError(f"Malformed certificate: {str(e)}", dec.position) from e

    cls = CaCertificate if tbs.is_ca else LeafCertificate
    return cls(tbs, signature)


def build_ca_certificate(store: KeyStore, common_name: str, now: int, not_after: int) -> CaCertificate:
    """Self-sign the CA public key with the next reserved index (0 on a fresh store)."""
    index = store.reserve_index()
    spki = SubjectPublicKeyInfo(OID_XMSS, None, store.public_key.to_bytes())
    tbs = TbsCertificate(index, common_name, common_name, now, not_after,
                         OID_XMSS, spki, None, True)
    signature = store.sign_with_reserved(index, encode_tbs(tbs))
    logger.info("self-signed CA certificate with index %d", index)
    return CaCertificate(tbs, signature)


def issue_leaf(store: KeyStore, schedule: Schedule, policy: IssuancePolicy, index: int,
               leaf_public_key: bytes, now: int, issuer_cn: str, subject_cn: str,
               san_dns: Optional[str], suite: ClassicalSuite = ECDSA_P256_SHA256) -> LeafCertificate:
    """Sign the leaf certificate for a reserved, scheduled index.

    Args:
        store: Key store that reserved ``index``
        schedule: Newest schedule
        policy: Issuance policy
        index: The reserved index
        leaf_public_key: Uncompressed classical public key
        now: Issuance time (POSIX seconds)
        issuer_cn: CA common name
        subject_cn: Leaf common name
        san_dns: DNS name for the SAN extension
        suite: Classical suite of the leaf key

    Returns:
        The signed leaf, valid from its scheduled slot start

    Raises:
        ScheduleMismatchError: If the index is not the one due now or not the reserved one
    """
    due = due_index(schedule, policy, now)
    reserved = store.next_index - 1
    if index != due or index != reserved or index < schedule.start_index:
        report = MismatchReport(index, due, reserved, now)
        logger.warning("refusing issuance: %s", report.describe())
        raise ScheduleMismatchError(report.describe(), report)

    not_before = issue_time_for_index(schedule, policy, index)
    spki = SubjectPublicKeyInfo(OID_EC_PUBLIC_KEY, OID_SECP256R1, leaf_public_key)
    tbs = TbsCertificate(index, issuer_cn, subject_cn, not_before,
                         not_before + schedule.validity_minutes * 60,
                         suite.signature_oid, spki, san_dns, False)
    signature = store.sign_with_reserved(index, encode_tbs(tbs))
    logger.info("issued leaf %d valid %d..%d", index, tbs.not_before, tbs.not_after)
    return LeafCertificate(tbs, signature)


def verify_certificate_signature(cert: Certificate, ca_key: XmssPublicKey) -> bool:
    """True iff the XMSS signature covers the TBS bytes under ``ca_key``."""
    return xmss_verify(ca_key, cert.tbs_bytes(), cert.xmss_signature)


def authenticate_handshake(leaf_secret: bytes, transcript: bytes,
                           suite: ClassicalSuite = ECDSA_P256_SHA256) -> bytes:
    """Sign a handshake transcript with the leaf's classical key."""
    return suite.sign(leaf_secret, transcript)


def verify_handshake(leaf: LeafCertificate, transcript: bytes, signature: bytes, now: int,
                     suite: ClassicalSuite = ECDSA_P256_SHA256) -> VerificationResult:
    """Check a handshake signature against a leaf valid at ``now``."""
    if now < leaf.not_before:
        return VerificationResult(False, RejectReason.NOT_YET_VALID, f"valid from {leaf.not_before}")
    if now > leaf.not_after:
        return VerificationResult(False, RejectReason.EXPIRED, f"expired at {leaf.not_after}")
    if not suite.verify(leaf.spki.key, transcript, signature):
        return VerificationResult(False, RejectReason.BAD_SIGNATURE, "handshake signature invalid")
    return VerificationResult(True)


def _content_length(tlv: bytes) -> int:
    start, end = der.DerDecoder(tlv).read_tlv(tlv[0])
    return end - start


def _first_child_content_length(tlv: bytes) -> int:
    dec = der.DerDecoder(tlv)
    dec.enter(tlv[0])
    child = dec.peek_tag()
    if child is None:
        return 0
    start, end = dec.read_tlv(child)
    return end - start


def certificate_fields(cert: Certificate) -> List[Tuple[str, str, int]]:
    """Rows of (field, value, content bytes) in certificate order."""
    tbs = cert.tbs
    rows: List[Tuple[str, str, int]] = [
        ("Version", "3", _content_length(der.encode_tlv(_VERSION_TAG, der.encode_tlv(der.INTEGER, b"\x02")))),
        ("Serial Number", f"{tbs.serial:02x}", len(der.encode_integer(tbs.serial))),
        ("Signature Algorithm", OID_NAMES.get(tbs.signature_oid, tbs.signature_oid),
         _content_length(_algorithm_identifier(tbs.signature_oid))),
    ]
    for label, cn in (("Issuer", tbs.issuer_cn), ("Subject", tbs.subject_cn)):
        rows.append((label, f"CN={cn}", _first_child_content_length(_name(cn))))
        if label == "Issuer":
            for bound, value in (("Validity Not Before", tbs.not_before), ("Validity Not After", tbs.not_after)):
                rows.append((bound, der.encode_generalized_time(value).decode("ascii"),
                             len(der.encode_generalized_time(value))))
    rows.append(("Public Key Algorithm", OID_NAMES.get(tbs.spki.algorithm_oid, tbs.spki.algorithm_oid),
                 len(der.encode_oid(tbs.spki.algorithm_oid))))
    if tbs.spki.parameters_oid is not None:
        rows.append(("Key Parameters", OID_NAMES.get(tbs.spki.parameters_oid, tbs.spki.parameters_oid),
                     len(der.encode_oid(tbs.spki.parameters_oid))))
    rows.append(("Public Key", "BIT STRING", len(tbs.spki.key) + 1))
    extensions = _extensions(tbs)
    if extensions:
        names = []
        if tbs.is_ca:
            names.append("Basic Constraints")
        if tbs.san_dns is not None:
            names.append("Subject Alternative Name")
        rows.append(("Extensions", ", ".join(names), _first_child_content_length(extensions)))
        if tbs.san_dns is not None:
            general_names = der.encode_tlv(der.SEQUENCE, der.encode_tlv(_DNS_NAME_TAG, tbs.san_dns.encode("ascii")))
            rows.append(("DNS", tbs.san_dns, _content_length(general_names)))
    rows.append(("Algorithm ID", cert.xmss_alg_oid, _content_length(_algorithm_identifier(cert.xmss_alg_oid))))
    rows.append(("Signature", "BIT STRING", len(cert.xmss_signature.to_bytes()) + 1))
    return rows
