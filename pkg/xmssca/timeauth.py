"""
Trusted time for the CA.

Time comes from a pluggable clock plus a set of SNTP sources that are voted
on like a triple-modular-redundant system: a majority of samples agreeing
within a window yields the consensus time, taken from the agreeing server
with the smallest round-trip delay. A separate cross-check compares the
monotonic timer armed at the last issuance with the absolute time.
"""

import logging
import socket
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import ntplib

from .config import NTP_PORT, CaSettings
from .exceptions import TimeSourceError
from .types import CrossCheckResult, NtpSample, TimeVerdict, VerdictStatus

logger = logging.getLogger(__name__)

NTP_VERSION = 4
MODE_CLIENT = 3
MODE_SERVER = 4
PACKET_SIZE = 48
# Accepted distance between request transmit time and echoed origin (s)
_ORIGIN_TOLERANCE = 1e-6


class ClockSource(ABC):
    """Wall clock and monotonic clock of the signing device."""

    @abstractmethod
    def now_ms(self) -> int:
        """POSIX time in milliseconds."""
        pass

    @abstractmethod
    def monotonic_ms(self) -> int:
        """Milliseconds on a clock that never goes backwards."""
        pass

    @abstractmethod
    def correct(self, wall_ms: int) -> None:
        """Set the wall clock to ``wall_ms``."""
        pass


class SystemClock(ClockSource):
    """Operating-system clocks with a correction kept in-process."""

    def __init__(self) -> None:
        self._offset_ms = 0
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            return time.time_ns() // 1_000_000 + self._offset_ms

    def monotonic_ms(self) -> int:
        return time.monotonic_ns() // 1_000_000

    def correct(self, wall_ms: int) -> None:
        with self._lock:
            self._offset_ms = wall_ms - time.time_ns() // 1_000_000
        logger.warning("wall clock corrected by %d ms", self._offset_ms)


class NtpTransport(ABC):
    """Carries one SNTP request to an endpoint and returns the reply."""

    @abstractmethod
    def exchange(self, endpoint: str, request: bytes, timeout_ms: int) -> bytes:
        """Send ``request`` and return the reply bytes.

        Raises:
            TimeSourceError: On timeout or network failure
        """
        pass


class UdpTransport(NtpTransport):
    """SNTP over UDP."""

    def __init__(self, port: int = NTP_PORT):
        self.port = port

    def exchange(self, endpoint: str, request: bytes, timeout_ms: int) -> bytes:
        try:
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
                sock.settimeout(timeout_ms / 1000)
                sock.sendto(request, (endpoint, self.port))
                data, _ = sock.recvfrom(1024)
        except socket.timeout as e:
            raise TimeSourceError(f"{endpoint}: no reply within {timeout_ms} ms") from e
        except OSError as e:
            raise TimeSourceError(f"{endpoint}: {str(e)}") from e
        return data


def build_request(wall_ms: int) -> bytes:
    """48-byte client packet carrying ``wall_ms`` as transmit timestamp."""
    packet = ntplib.NTPPacket(version=NTP_VERSION, mode=MODE_CLIENT,
                              tx_timestamp=ntplib.system_to_ntp_time(wall_ms / 1000))
    return packet.to_data()


def build_reply(request: bytes, server_ms: int, stratum: int = 2) -> bytes:
    """Server packet answering ``request`` at server time ``server_ms``.

    Raises:
        TimeSourceError: If the request is not a client packet
    """
    try:
        query = ntplib.NTPPacket()
        query.from_data(request)
    except ntplib.NTPException as e:
        raise TimeSourceError(f"Malformed request: {str(e)}") from e
    if query.mode != MODE_CLIENT:
        raise TimeSourceError(f"Expected a client packet, got mode {query.mode}")
    stamp = ntplib.system_to_ntp_time(server_ms / 1000)
    reply = ntplib.NTPPacket(version=NTP_VERSION, mode=MODE_SERVER, tx_timestamp=stamp)
    reply.stratum = stratum
    reply.recv_timestamp = stamp
    reply.ref_timestamp = stamp
    reply.orig_timestamp = query.tx_timestamp
    return reply.to_data()


def parse_reply(data: bytes, request: bytes) -> int:
    """Server transmit time in POSIX ms.

    Raises:
        TimeSourceError: If the reply is malformed or does not answer ``request``
    """
    if len(data) < PACKET_SIZE:
        raise TimeSourceError(f"Reply of {len(data)} bytes is shorter than {PACKET_SIZE}")
    try:
        query = ntplib.NTPPacket()
        query.from_data(request)
        reply = ntplib.NTPPacket()
        reply.from_data(data[:PACKET_SIZE])
    except ntplib.NTPException as e:
        raise TimeSourceError(f"Malformed reply: {str(e)}") from e
    if reply.mode != MODE_SERVER:
        raise TimeSourceError(f"Reply has mode {reply.mode}, expected {MODE_SERVER}")
    if reply.stratum == 0 or reply.stratum > 15:
        raise TimeSourceError(f"Unsynchronized server (stratum {reply.stratum})")
    if abs(reply.orig_timestamp - query.tx_timestamp) > _ORIGIN_TOLERANCE:
        raise TimeSourceError("Reply does not echo our transmit timestamp")
    return round(ntplib.ntp_to_system_time(reply.tx_timestamp) * 1000)


def query_sntp(endpoint: str, transport: NtpTransport, clock: ClockSource,
               timeout_ms: int) -> NtpSample:
    """One client/server exchange; failures come back as an error sample.

    The reported time is the server transmit time plus half the round trip,
    which is measured on the monotonic clock.
    """
    request = build_request(clock.now_ms())
    sent = clock.monotonic_ms()
    try:
        data = transport.exchange(endpoint, request, timeout_ms)
        received = clock.monotonic_ms()
        server_ms = parse_reply(data, request)
    except TimeSourceError as e:
        logger.warning("time source %s failed: %s", endpoint, e)
        return NtpSample(endpoint, error=str(e))
    delay = max(0, received - sent)
    if delay > timeout_ms:
        return NtpSample(endpoint, error=f"reply after {delay} ms exceeds the {timeout_ms} ms timeout")
    return NtpSample(endpoint, server_ms + delay // 2, delay)


class TimeSource(ABC):
    """A named source of time samples; authenticated sources plug in here."""

    name: str

    @abstractmethod
    def sample(self, clock: ClockSource, timeout_ms: int) -> NtpSample:
        pass


class SntpSource(TimeSource):
    """Unauthenticated SNTP server."""

    def __init__(self, endpoint: str, transport: Optional[NtpTransport] = None):
        self.name = endpoint
        self.transport = transport or UdpTransport()

    def sample(self, clock: ClockSource, timeout_ms: int) -> NtpSample:
        return query_sntp(self.name, self.transport, clock, timeout_ms)


def _best(members: Sequence[NtpSample]) -> NtpSample:
    return min(members, key=lambda s: (s.round_trip_delay_ms, s.server, s.reported_time_ms))


def consensus(samples: Sequence[NtpSample], local_ms: int, settings: CaSettings) -> TimeVerdict:
    """Majority vote over time samples.

    Args:
        samples: One sample per configured server, failed ones included
        local_ms: Local wall clock at the time of voting
        settings: Agreement window and minor-adjust threshold

    Returns:
        The verdict; never raises
    """
    good = sorted((s for s in samples if s.ok), key=lambda s: (s.reported_time_ms, s.server))
    if not good:
        return TimeVerdict(VerdictStatus.UNAVAILABLE, local_ms, 0, "no time source answered")

    majority = len(samples) // 2 + 1
    clusters: List[Tuple[NtpSample, ...]] = []
    for i, anchor in enumerate(good):
        clusters.append(tuple(s for s in good[i:]
                              if s.reported_time_ms - anchor.reported_time_ms <= settings.agreement_window_ms))
    # Largest cluster; ties go to the one holding the fastest server
    best_cluster = min(clusters, key=lambda c: (-len(c), _best(c).round_trip_delay_ms,
                                                _best(c).server, _best(c).reported_time_ms))

    if len(best_cluster) < majority:
        spread = ", ".join(f"{s.server}={s.reported_time_ms}" for s in good)
        return TimeVerdict(VerdictStatus.NO_CONSENSUS, local_ms, 0,
                           f"no {majority} of {len(samples)} time sources agree ({spread})")

    chosen = _best(best_cluster)
    offset = chosen.reported_time_ms - local_ms
    if abs(offset) <= settings.minor_adjust_threshold_ms:
        return TimeVerdict(VerdictStatus.TRUSTED, chosen.reported_time_ms, offset)
    direction = "behind" if offset > 0 else "ahead of"
    return TimeVerdict(VerdictStatus.ADJUSTED, chosen.reported_time_ms, offset,
                       f"local clock {abs(offset) // 1000} s {direction} consensus from {chosen.server}")


def local_verdict(local_ms: int) -> TimeVerdict:
    """Verdict for a CA configured without time servers."""
    return TimeVerdict(VerdictStatus.TRUSTED, local_ms, 0)


def cross_check(relative_elapsed_ms: int, expected_interval_ms: int, absolute_now_ms: int,
                expected_absolute_ms: int, tolerance_ms: int) -> CrossCheckResult:
    """Compare the monotonic timer with the absolute clock."""
    findings: List[str] = []
    skew = absolute_now_ms - expected_absolute_ms
    if abs(skew) > tolerance_ms:
        findings.append(f"absolute {'ahead' if skew > 0 else 'behind'} {abs(skew) // 1000} s")
    drift = relative_elapsed_ms - expected_interval_ms
    if abs(drift) > tolerance_ms:
        findings.append(f"relative timer off by {int(drift / 1000)} s")
    return CrossCheckResult(not findings, "; ".join(findings))


class TimeAuthority:
    """Gathers samples from every source and votes on them."""

    def __init__(self, sources: Sequence[TimeSource], settings: CaSettings,
                 concurrent: bool = False):
        self.sources = list(sources)
        self.settings = settings
        self.concurrent = concurrent

    @classmethod
    def from_settings(cls, settings: CaSettings, concurrent: bool = True) -> "TimeAuthority":
        """Authority over real UDP SNTP servers from the settings."""
        transport = UdpTransport()
        return cls([SntpSource(host, transport) for host in settings.ntp_servers],
                   settings, concurrent)

    def collect(self, clock: ClockSource) -> List[NtpSample]:
        """Query every source; answers are aged to the moment collection ends."""
        timeout = self.settings.ntp_timeout_ms

        def timed(source: TimeSource) -> Tuple[NtpSample, int]:
            sample = source.sample(clock, timeout)
            return sample, clock.monotonic_ms()

        if self.concurrent and len(self.sources) > 1:
            with ThreadPoolExecutor(max_workers=len(self.sources)) as pool:
                answers = list(pool.map(timed, self.sources))
        else:
            answers = [timed(source) for source in self.sources]
        done = clock.monotonic_ms()
        return [
            replace(sample, reported_time_ms=sample.reported_time_ms + done - received)
            if sample.ok else sample
            for sample, received in answers
        ]

    def acquire(self, clock: ClockSource) -> TimeVerdict:
        """Vote on fresh samples; small offsets are applied to ``clock``."""
        if not self.sources:
            return local_verdict(clock.now_ms())
        samples = self.collect(clock)
        verdict = consensus(samples, clock.now_ms(), self.settings)
        if verdict.status is VerdictStatus.TRUSTED and verdict.applied_offset_ms:
            clock.correct(clock.now_ms() + verdict.applied_offset_ms)
        elif not verdict.trusted:
            logger.warning("time verdict %s: %s", verdict.status.value, verdict.alert)
        logger.debug("time verdict %s at %d", verdict.status.value, verdict.consensus_time_ms)
        return verdict
