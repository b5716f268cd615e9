import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmssca import der
from xmssca.certkit import encode_cert, parse_cert
from xmssca.exceptions import CertificateParseError, ScheduleFormatError
from xmssca.schedule import decode_schedule, encode_schedule

from conftest import T0


def test_oid_encoding():
    assert der.encode_oid("1.2.840.10045.4.3.2") == bytes.fromhex("2a8648ce3d040302")
    assert der.DerDecoder(bytes.fromhex("06082a8648ce3d040302")).read_oid() == "1.2.840.10045.4.3.2"


def test_long_form_lengths():
    assert der.encode_length(0x7F) == b"\x7f"
    assert der.encode_length(0x80) == b"\x81\x80"
    assert der.encode_length(2500) == b"\x82\x09\xc4"


def test_integers_are_minimal():
    assert der.encode_integer(0) == b"\x00"
    assert der.encode_integer(128) == b"\x00\x80"
    assert der.DerDecoder(der.encode_tlv(der.INTEGER, b"\x00\x80")).read_integer() == 128


def test_generalized_time():
    encoded = der.encode_generalized_time(T0)
    assert encoded == b"20250705125321Z"
    assert der.DerDecoder(der.encode_tlv(der.GENERALIZED_TIME, encoded)).read_generalized_time() == T0


def test_encoder_nests_constructed_values():
    enc = der.DerEncoder()
    enc.enter(der.SEQUENCE)
    enc.write_integer(5)
    enc.write_boolean(True)
    enc.leave()
    assert enc.getvalue() == bytes.fromhex("3006020105" "0101ff")


def test_encoder_refuses_open_sequences():
    enc = der.DerEncoder()
    enc.enter(der.SEQUENCE)
    with pytest.raises(ValueError):
        enc.getvalue()


@pytest.mark.parametrize("data, reader", [
    (b"\x30\x80\x00\x00", "enter"),
    (b"\x04\x81\x05hello", "octet"),
    (b"\x04\x82\x00\x05hello", "octet"),
    (b"\x04\x06hello", "octet"),
    (b"\x02\x02\x00\x01", "integer"),
    (b"\x02\x01\x80", "integer"),
    (b"\x02\x00", "integer"),
    (b"\x01\x01\x01", "boolean"),
    (b"\x05\x01\x00", "null"),
    (b"\x06\x02\x2a\x86", "oid"),
    (b"\x06\x02\x80\x01", "oid"),
    (b"\x03\x02\x01\xff", "bits"),
    (b"\x18\x0d2025070512532", "time"),
    (b"\x18\x0f20251305125321Z", "time"),
    (b"\x0c\x02\xc3\x28", "utf8"),
    (b"\x04\x05hello", "integer"),
])
def test_decoder_rejects_non_der(data, reader):
    dec = der.DerDecoder(data)
    read = {
        "enter": lambda: dec.enter(der.SEQUENCE),
        "octet": dec.read_octet_string,
        "integer": dec.read_integer,
        "boolean": dec.read_boolean,
        "null": dec.read_null,
        "oid": dec.read_oid,
        "bits": dec.read_bit_string,
        "time": dec.read_generalized_time,
        "utf8": dec.read_utf8,
    }[reader]
    with pytest.raises(CertificateParseError):
        read()


def test_leave_rejects_trailing_bytes():
    dec = der.DerDecoder(bytes.fromhex("3006020105020106"))
    dec.enter(der.SEQUENCE)
    dec.read_integer()
    with pytest.raises(CertificateParseError):
        dec.leave()


def test_parse_error_reports_position():
    with pytest.raises(CertificateParseError) as info:
        der.DerDecoder(b"\x02\x01\x01\x05\x01\x00", start=3).read_null()
    assert info.value.position == 3


@settings(max_examples=300)
@given(position=st.integers(min_value=0), flip=st.integers(min_value=1, max_value=255))
def test_mutated_certificates_fail_cleanly(issued_toy, position, flip):
    data = bytearray(encode_cert(issued_toy.leaf))
    data[position % len(data)] ^= flip
    try:
        cert = parse_cert(bytes(data))
    except CertificateParseError:
        return
    assert encode_cert(cert) == bytes(data)


@settings(max_examples=300)
@given(st.binary(max_size=400))
def test_arbitrary_bytes_never_crash_the_parser(data):
    with pytest.raises(CertificateParseError):
        parse_cert(data)


@settings(max_examples=200)
@given(position=st.integers(min_value=0, max_value=40), flip=st.integers(min_value=1, max_value=255),
       cut=st.integers(min_value=0, max_value=3000))
def test_mutated_schedules_fail_cleanly(issued_toy, position, flip, cut):
    data = bytearray(encode_schedule(issued_toy.schedule))
    data[position % len(data)] ^= flip
    try:
        decode_schedule(bytes(data[:cut]))
    except ScheduleFormatError:
        pass


def _mutate(rng, original):
    data = bytearray(original)
    kind = rng.randrange(4)
    if kind != 1:
        for _ in range(rng.randint(1, 3)):
            data[rng.randrange(len(data))] ^= rng.randint(1, 255)
    if kind == 1 or kind == 3:
        del data[rng.randrange(len(data)):]
    if kind == 2:
        data.insert(rng.randrange(len(data) + 1), rng.randrange(256))
    return bytes(data)


def test_bulk_certificate_mutations(issued_toy):
    rng = random.Random(0)
    originals = [encode_cert(issued_toy.leaf), encode_cert(issued_toy.ca_cert)]
    for case in range(100_000):
        data = _mutate(rng, originals[case % 2])
        try:
            cert = parse_cert(data)
        except CertificateParseError:
            continue
        assert encode_cert(cert) == data


def test_bulk_schedule_mutations(issued_toy):
    rng = random.Random(1)
    original = encode_schedule(issued_toy.schedule)
    for _ in range(100_000):
        data = _mutate(rng, original)
        try:
            schedule = decode_schedule(data)
        except ScheduleFormatError:
            continue
        assert encode_schedule(schedule) == data
