import hashlib
import string
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmssca.certkit import (
    ECDSA_P256_SHA256,
    CaCertificate,
    LeafCertificate,
    SubjectPublicKeyInfo,
    TbsCertificate,
    authenticate_handshake,
    build_ca_certificate,
    certificate_fields,
    encode_cert,
    issue_leaf,
    parse_cert,
    verify_certificate_signature,
    verify_handshake,
)
from xmssca.config import OID_EC_PUBLIC_KEY, OID_ECDSA_WITH_SHA256, OID_SECP256R1, OID_XMSS
from xmssca.exceptions import CertificateParseError, ScheduleMismatchError
from xmssca.keystore import KeyStore
from xmssca.schedule import sign_schedule
from xmssca.types import IssuancePolicy, RejectReason
from xmssca.xmss import ENTROPY_SIZE, N, WOTS_LEN, XmssParams, XmssSignature, xmss_keygen

from conftest import INTERVAL, T0, TOY_ENTROPY

POLICY = IssuancePolicy()


def test_ca_certificate_carries_the_xmss_key(issued_toy):
    cert = parse_cert(encode_cert(issued_toy.ca_cert))
    assert isinstance(cert, CaCertificate)
    assert cert.xmss_index == 0
    assert cert.issuer_cn == cert.subject_cn == "ExampleCA"
    assert cert.xmss_public_key == issued_toy.ca_key
    assert verify_certificate_signature(cert, issued_toy.ca_key)


def test_leaf_fields(issued_toy):
    leaf = parse_cert(encode_cert(issued_toy.leaf))
    assert isinstance(leaf, LeafCertificate)
    assert leaf.serial == leaf.xmss_index == 2
    assert leaf.issuer_cn == "ExampleCA"
    assert leaf.subject_cn == "ECDSACrt"
    assert leaf.san_dns == "example.com"
    assert leaf.not_before == T0
    assert leaf.not_after == T0 + 240 * 60
    assert len(leaf.spki.key) == 65
    assert verify_certificate_signature(leaf, issued_toy.ca_key)


def test_leaf_does_not_verify_under_another_key(issued_toy, toy_params):
    other, _ = xmss_keygen(toy_params, hashlib.shake_256(b"other").digest(ENTROPY_SIZE))
    assert not verify_certificate_signature(issued_toy.leaf, other)


def test_leaf_rejects_trailing_data(issued_toy):
    with pytest.raises(CertificateParseError):
        parse_cert(encode_cert(issued_toy.leaf) + b"\x00")


def test_field_table(issued_toy):
    rows = certificate_fields(issued_toy.leaf)
    names = [name for name, _, _ in rows]
    assert names == [
        "Version", "Serial Number", "Signature Algorithm", "Issuer",
        "Validity Not Before", "Validity Not After", "Subject",
        "Public Key Algorithm", "Key Parameters", "Public Key",
        "Extensions", "DNS", "Algorithm ID", "Signature",
    ]
    table = {name: (value, size) for name, value, size in rows}
    assert table["Signature Algorithm"][0] == "ecdsaWithSHA256"
    assert table["Public Key"][1] == 66
    assert table["Signature"][1] == 2308 + 1
    assert table["DNS"][0] == "example.com"


@pytest.fixture
def fresh_store(tmp_path, toy_params):
    with KeyStore.create(tmp_path / "ca.xks", toy_params, TOY_ENTROPY) as store:
        build_ca_certificate(store, "ExampleCA", T0, T0 + 10 ** 8)
        yield store, sign_schedule(store, T0, 240, POLICY)


def test_issue_refuses_an_index_that_is_not_due(fresh_store):
    store, schedule = fresh_store
    _, public = ECDSA_P256_SHA256.keygen()
    index = store.reserve_index()
    with pytest.raises(ScheduleMismatchError) as info:
        issue_leaf(store, schedule, POLICY, index, public, T0 + INTERVAL, "ExampleCA", "ECDSACrt", None)
    assert info.value.report.due_index == 3
    assert info.value.report.reserved_index == 2


def test_issue_refuses_a_stale_reservation(fresh_store):
    store, schedule = fresh_store
    _, public = ECDSA_P256_SHA256.keygen()
    store.reserve_index()
    store.reserve_index()
    with pytest.raises(ScheduleMismatchError):
        issue_leaf(store, schedule, POLICY, 2, public, T0, "ExampleCA", "ECDSACrt", None)


def test_issue_within_the_overlap_is_valid_from_the_slot(fresh_store):
    store, schedule = fresh_store
    _, public = ECDSA_P256_SHA256.keygen()
    store.reserve_index()
    index = store.reserve_index()
    leaf = issue_leaf(store, schedule, POLICY, index, public, T0 + INTERVAL - 120, "ExampleCA", "ECDSACrt", None)
    assert leaf.not_before == T0 + INTERVAL
    assert leaf.san_dns is None


def test_handshake_signature(issued_toy):
    transcript = b"client hello | server hello"
    signature = authenticate_handshake(issued_toy.leaf_secret, transcript)
    leaf = issued_toy.leaf
    assert verify_handshake(leaf, transcript, signature, T0 + 60).accepted
    assert verify_handshake(leaf, b"other", signature, T0 + 60).reason is RejectReason.BAD_SIGNATURE
    assert verify_handshake(leaf, transcript, signature, T0 - 1).reason is RejectReason.NOT_YET_VALID
    assert verify_handshake(leaf, transcript, signature, leaf.not_after + 1).reason is RejectReason.EXPIRED


_names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=300)
_instants = st.integers(min_value=0, max_value=253402300799)


@st.composite
def certificates(draw):
    is_ca = draw(st.booleans())
    if is_ca:
        spki = SubjectPublicKeyInfo(OID_XMSS, None, b"\x00\x00\x00\x00" + draw(st.binary(min_size=64, max_size=64)))
    else:
        spki = SubjectPublicKeyInfo(OID_EC_PUBLIC_KEY, OID_SECP256R1,
                                    b"\x04" + draw(st.binary(min_size=64, max_size=64)))
    san = draw(st.none() | st.text(string.ascii_letters + string.digits + ".-", min_size=1, max_size=300))
    tbs = TbsCertificate(
        serial=draw(st.integers(min_value=0, max_value=2**159)),
        issuer_cn=draw(_names),
        subject_cn=draw(_names),
        not_before=draw(_instants),
        not_after=draw(_instants),
        signature_oid=draw(st.sampled_from([OID_XMSS, OID_ECDSA_WITH_SHA256])),
        spki=spki,
        san_dns=san,
        is_ca=is_ca,
    )
    params = XmssParams(4)
    signature = XmssSignature(
        params,
        draw(st.integers(min_value=0, max_value=params.leaves - 1)),
        draw(st.binary(min_size=N, max_size=N)),
        draw(st.binary(min_size=WOTS_LEN * N, max_size=WOTS_LEN * N)),
        draw(st.binary(min_size=4 * N, max_size=4 * N)),
    )
    cls = CaCertificate if is_ca else LeafCertificate
    return cls(tbs, signature)


@settings(max_examples=1000, deadline=None)
@given(certificates())
def test_any_certificate_parses_back_unchanged(cert):
    data = encode_cert(cert)
    parsed = parse_cert(data)
    assert parsed == cert
    assert type(parsed) is type(cert)
    fields = {name: value for name, value, _ in certificate_fields(parsed)}
    assert fields["Subject"] == f"CN={cert.subject_cn}"


def test_field_sizes_with_long_form_lengths(issued_toy):
    tbs = replace(issued_toy.leaf.tbs, issuer_cn="I" * 200, san_dns="d" * 300)
    rows = certificate_fields(LeafCertificate(tbs, issued_toy.leaf.xmss_signature))
    table = {name: size for name, _, size in rows}
    # SET { SEQUENCE { OID(5) UTF8String(3 + 200) } }
    assert table["Issuer"] == 3 + 5 + 203
    # GeneralNames: SEQUENCE { [2] 300 bytes }
    assert table["DNS"] == 4 + 300
    # Extension: SEQUENCE { OID(5) OCTET STRING(4 + 308) }
    assert table["Extensions"] == 4 + 5 + 4 + 308
