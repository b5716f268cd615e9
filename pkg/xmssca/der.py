"""
Minimal DER encoder and decoder.

Covers the universal types the certificate model needs (INTEGER, BOOLEAN,
BIT STRING, OCTET STRING, NULL, OBJECT IDENTIFIER, UTF8String,
GeneralizedTime, SEQUENCE, SET) and low-numbered context tags. The decoder
only accepts canonical DER and reports failures with the byte offset.
"""

import calendar
import io
import re
import time
from typing import List, Optional, Tuple

from .exceptions import CertificateParseError

BOOLEAN = 0x01
INTEGER = 0x02
BIT_STRING = 0x03
OCTET_STRING = 0x04
NULL = 0x05
OBJECT_IDENTIFIER = 0x06
UTF8_STRING = 0x0C
GENERALIZED_TIME = 0x18
SEQUENCE = 0x30
SET = 0x31

# 9999-12-31T23:59:59Z, the last instant a four-digit year can express
MAX_GENERALIZED_TIME = 253402300799

_TIME_FORMAT = re.compile(rb"^\d{14}Z$")
_MAX_LENGTH_OCTETS = 4


def context_tag(number: int, constructed: bool = True) -> int:
    """Single-byte tag of a context-specific ``[number]``."""
    if not 0 <= number < 31:
        raise ValueError(f"Context tag {number} needs the long form")
    return (0xA0 if constructed else 0x80) | number


def encode_length(length: int) -> bytes:
    if length < 0x80:
        return bytes([length])
    body = length.to_bytes((length.bit_length() + 7) // 8, "big")
    return bytes([0x80 | len(body)]) + body


def encode_tlv(tag: int, content: bytes) -> bytes:
    return bytes([tag]) + encode_length(len(content)) + content


def encode_oid(dotted: str) -> bytes:
    """Content octets of an OBJECT IDENTIFIER given in dotted form."""
    arcs = [int(part) for part in dotted.split(".")]
    if len(arcs) < 2 or arcs[0] > 2 or (arcs[0] < 2 and arcs[1] >= 40):
        raise ValueError(f"Invalid OID {dotted}")
    out = bytearray()
    for arc in [arcs[0] * 40 + arcs[1]] + arcs[2:]:
        chunk = [arc & 0x7F]
        arc >>= 7
        while arc:
            chunk.append((arc & 0x7F) | 0x80)
            arc >>= 7
        out.extend(reversed(chunk))
    return bytes(out)


def encode_integer(value: int) -> bytes:
    """Content octets of a non-negative INTEGER."""
    if value < 0:
        raise ValueError("Only non-negative integers are modeled")
    return value.to_bytes(value.bit_length() // 8 + 1, "big")


def encode_generalized_time(posix_seconds: int) -> bytes:
    return time.strftime("%Y%m%d%H%M%SZ", time.gmtime(posix_seconds)).encode("ascii")


class DerEncoder:
    """Accumulates DER; constructed values are bracketed by enter()/leave()."""

    def __init__(self) -> None:
        self._stack: List[Tuple[int, io.BytesIO]] = []
        self._fragments = io.BytesIO()

    def getvalue(self) -> bytes:
        if self._stack:
            raise ValueError("Unclosed constructed type")
        return self._fragments.getvalue()

    def enter(self, tag: int) -> None:
        self._stack.append((tag, self._fragments))
        self._fragments = io.BytesIO()

    def leave(self) -> None:
        if not self._stack:
            raise ValueError("Tag stack is empty")
        content = self._fragments.getvalue()
        tag, self._fragments = self._stack.pop()
        self._fragments.write(encode_tlv(tag, content))

    def write_raw(self, der: bytes) -> None:
        self._fragments.write(der)

    def write_tlv(self, tag: int, content: bytes) -> None:
        self._fragments.write(encode_tlv(tag, content))

    def write_integer(self, value: int) -> None:
        self.write_tlv(INTEGER, encode_integer(value))

    def write_boolean(self, value: bool) -> None:
        self.write_tlv(BOOLEAN, b"\xff" if value else b"\x00")

    def write_null(self) -> None:
        self.write_tlv(NULL, b"")

    def write_oid(self, dotted: str) -> None:
        self.write_tlv(OBJECT_IDENTIFIER, encode_oid(dotted))

    def write_utf8(self, text: str) -> None:
        self.write_tlv(UTF8_STRING, text.encode("utf-8"))

    def write_generalized_time(self, posix_seconds: int) -> None:
        self.write_tlv(GENERALIZED_TIME, encode_generalized_time(posix_seconds))

    def write_bit_string(self, data: bytes) -> None:
        self.write_tlv(BIT_STRING, b"\x00" + data)

    def write_octet_string(self, data: bytes) -> None:
        self.write_tlv(OCTET_STRING, data)


class DerDecoder:
    """Strict reader over a DER buffer."""

    def __init__(self, data: bytes, start: int = 0, end: Optional[int] = None) -> None:
        self.data = bytes(data)
        self._position = start
        self._end = len(self.data) if end is None else end
        self._stack: List[int] = []

    @property
    def position(self) -> int:
        return self._position

    def fail(self, message: str, position: Optional[int] = None) -> "CertificateParseError":
        return CertificateParseError(message, self._position if position is None else position)

    def eof(self) -> bool:
        return self._position >= self._end

    def peek_tag(self) -> Optional[int]:
        return None if self.eof() else self.data[self._position]

    def _read_header(self, expected: int) -> Tuple[int, int]:
        start = self._position
        if self.eof():
            raise self.fail(f"Expected tag {expected:#04x}, found end of data")
        tag = self.data[start]
        if tag != expected:
            raise self.fail(f"Expected tag {expected:#04x}, found {tag:#04x}")
        pos = start + 1
        if pos >= self._end:
            raise self.fail("Truncated length", pos)
        first = self.data[pos]
        pos += 1
        if first < 0x80:
            length = first
        else:
            count = first & 0x7F
            if count == 0:
                raise self.fail("Indefinite length is not DER", pos - 1)
            if count > _MAX_LENGTH_OCTETS or pos + count > self._end:
                raise self.fail("Unsupported or truncated long-form length", pos - 1)
            body = self.data[pos:pos + count]
            if body[0] == 0:
                raise self.fail("Non-minimal length encoding", pos)
            length = int.from_bytes(body, "big")
            if length < 0x80:
                raise self.fail("Long-form length for a short value", pos)
            pos += count
        if pos + length > self._end:
            raise self.fail(f"Value extends {pos + length - self._end} bytes past its container", pos)
        return pos, pos + length

    def read_tlv(self, tag: int) -> Tuple[int, int]:
        """Consume one element and return the span of its content octets."""
        content_start, content_end = self._read_header(tag)
        self._position = content_end
        return content_start, content_end

    def read_element(self, tag: int) -> bytes:
        """Consume one element and return its complete encoding."""
        start = self._position
        self.read_tlv(tag)
        return self.data[start:self._position]

    def read_content(self, tag: int) -> bytes:
        start, end = self.read_tlv(tag)
        return self.data[start:end]

    def enter(self, tag: int) -> None:
        content_start, content_end = self._read_header(tag)
        self._stack.append(self._end)
        self._position = content_start
        self._end = content_end

    def leave(self) -> None:
        if not self._stack:
            raise ValueError("Tag stack is empty")
        if self._position != self._end:
            raise self.fail(f"{self._end - self._position} unexpected trailing bytes")
        self._end = self._stack.pop()

    def read_integer(self) -> int:
        start = self._position
        content = self.read_content(INTEGER)
        if not content:
            raise self.fail("Empty INTEGER", start)
        if content[0] & 0x80:
            raise self.fail("Negative INTEGER", start)
        if len(content) > 1 and content[0] == 0 and not content[1] & 0x80:
            raise self.fail("Non-minimal INTEGER", start)
        return int.from_bytes(content, "big")

    def read_boolean(self) -> bool:
        start = self._position
        content = self.read_content(BOOLEAN)
        if content not in (b"\x00", b"\xff"):
            raise self.fail("Non-canonical BOOLEAN", start)
        return content == b"\xff"

    def read_null(self) -> None:
        start = self._position
        if self.read_content(NULL):
            raise self.fail("NULL with content", start)

    def read_oid(self) -> str:
        start = self._position
        content = self.read_content(OBJECT_IDENTIFIER)
        if not content or content[-1] & 0x80:
            raise self.fail("Truncated OBJECT IDENTIFIER", start)
        arcs: List[int] = []
        value = 0
        fresh = True
        for byte in content:
            if fresh and byte == 0x80:
                raise self.fail("Non-minimal OBJECT IDENTIFIER arc", start)
            value = (value << 7) | (byte & 0x7F)
            fresh = not byte & 0x80
            if fresh:
                arcs.append(value)
                value = 0
        first = arcs[0]
        head = [min(first // 40, 2), first - 40 * min(first // 40, 2)]
        return ".".join(str(arc) for arc in head + arcs[1:])

    def read_utf8(self) -> str:
        start = self._position
        try:
            return self.read_content(UTF8_STRING).decode("utf-8")
        except UnicodeDecodeError as e:
            raise self.fail(f"Invalid UTF-8: {str(e)}", start) from e

    def read_generalized_time(self) -> int:
        start = self._position
        content = self.read_content(GENERALIZED_TIME)
        if not _TIME_FORMAT.match(content):
            raise self.fail("GeneralizedTime must be YYYYMMDDHHMMSSZ", start)
        try:
            parsed = time.strptime(content.decode("ascii"), "%Y%m%d%H%M%SZ")
        except (ValueError, OverflowError) as e:
            raise self.fail(f"Invalid GeneralizedTime: {str(e)}", start) from e
        return calendar.timegm(parsed)

    def read_bit_string(self) -> bytes:
        start = self._position
        content = self.read_content(BIT_STRING)
        if not content or content[0] != 0:
            raise self.fail("Only octet-aligned BIT STRINGs are supported", start)
        return content[1:]

    def read_octet_string(self) -> bytes:
        return self.read_content(OCTET_STRING)
