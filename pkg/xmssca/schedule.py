"""
Signed issuance schedule.

A schedule binds wall-clock issuance slots to XMSS indices. On disk it is an
18-byte big-endian header followed by the XMSS signature over that header::

    creation_date u64 | validity_minutes u16 | start_index u32 | max_index u32

The signature is made with index start_index - 1, so a schedule update at
index i always starts at i + 1.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Optional

from .exceptions import (
    IndexRangeError,
    KeyExhaustedError,
    ParameterError,
    ScheduleFormatError,
)
from .keystore import KeyStore
from .types import IssuancePolicy
from .xmss import XmssPublicKey, XmssSignature, xmss_verify

logger = logging.getLogger(__name__)

HEADER = struct.Struct(">QHII")
HEADER_SIZE = HEADER.size
SECONDS_PER_YEAR = 365 * 24 * 3600


@dataclass(frozen=True)
class Schedule:
    """A decoded schedule record."""
    creation_date: int
    validity_minutes: int
    start_index: int
    max_index: int
    signature: XmssSignature

    def header_bytes(self) -> bytes:
        return schedule_header(self.creation_date, self.validity_minutes,
                               self.start_index, self.max_index)

    @property
    def signing_index(self) -> int:
        return self.signature.index

    def interval_seconds(self, policy: IssuancePolicy) -> int:
        return policy.interval_minutes(self.validity_minutes) * 60


def schedule_header(creation_date: int, validity_minutes: int, start_index: int, max_index: int) -> bytes:
    """Pack the 18-byte header.

    Raises:
        ScheduleFormatError: If a field does not fit its width
    """
    try:
        return HEADER.pack(creation_date, validity_minutes, start_index, max_index)
    except struct.error as e:
        raise ScheduleFormatError(f"Schedule field out of range: {str(e)}") from e


def check_schedule(schedule: Schedule, policy: IssuancePolicy) -> None:
    """Check the structural invariants of a schedule.

    Raises:
        ScheduleFormatError: If an invariant is violated
    """
    leaves = schedule.signature.params.leaves
    if not schedule.start_index < schedule.max_index <= leaves:
        raise ScheduleFormatError(
            f"Need start_index ({schedule.start_index}) < max_index ({schedule.max_index}) <= {leaves}"
        )
    if schedule.validity_minutes <= policy.overlap_minutes:
        raise ScheduleFormatError(
            f"Validity {schedule.validity_minutes} min does not exceed the {policy.overlap_minutes} min overlap"
        )
    if schedule.signature.index != schedule.start_index - 1:
        raise ScheduleFormatError(
            f"Signed with index {schedule.signature.index}, expected {schedule.start_index - 1}"
        )


def encode_schedule(schedule: Schedule) -> bytes:
    """Serialize a schedule as header followed by signature."""
    return schedule.header_bytes() + schedule.signature.to_bytes()


def decode_schedule(data: bytes, policy: Optional[IssuancePolicy] = None) -> Schedule:
    """Parse a ``.sched`` file.

    Args:
        data: File contents
        policy: Policy whose overlap the validity must exceed

    Returns:
        The schedule (its signature is not verified here)

    Raises:
        ScheduleFormatError: If the length or an invariant is wrong
    """
    policy = policy or IssuancePolicy()
    if len(data) < HEADER_SIZE:
        raise ScheduleFormatError(f"Schedule needs an {HEADER_SIZE}-byte header, got {len(data)} bytes")
    creation_date, validity, start_index, max_index = HEADER.unpack_from(data)
    try:
        signature = XmssSignature.from_bytes(data[HEADER_SIZE:])
    except (ParameterError, IndexRangeError) as e:
        raise ScheduleFormatError(f"Bad schedule signature field: {str(e)}") from e
    schedule = Schedule(creation_date, validity, start_index, max_index, signature)
    check_schedule(schedule, policy)
    return schedule


def verify_schedule(schedule: Schedule, ca_key: XmssPublicKey) -> bool:
    """True iff the signature covers the header under ``ca_key`` with index start_index - 1."""
    if schedule.signature.index != schedule.start_index - 1:
        return False
    return xmss_verify(ca_key, schedule.header_bytes(), schedule.signature)


def index_for_time(schedule: Schedule, policy: IssuancePolicy, t: int) -> Optional[int]:
    """Index whose slot contains POSIX time ``t``; None when out of schedule."""
    if t < schedule.creation_date:
        return None
    index = schedule.start_index + (t - schedule.creation_date) // schedule.interval_seconds(policy)
    return index if index < schedule.max_index else None


def due_index(schedule: Schedule, policy: IssuancePolicy, t: int) -> Optional[int]:
    """Index whose issue instant (slot start minus overlap) is the latest at or before ``t``."""
    return index_for_time(schedule, policy, t + policy.overlap_seconds)


def issue_time_for_index(schedule: Schedule, policy: IssuancePolicy, index: int) -> int:
    """Start of the slot of ``index``.

    Raises:
        IndexRangeError: If ``index`` is not in [start_index, max_index)
    """
    if not schedule.start_index <= index < schedule.max_index:
        raise IndexRangeError(
            f"Index {index} outside schedule range [{schedule.start_index}, {schedule.max_index})"
        )
    return schedule.creation_date + (index - schedule.start_index) * schedule.interval_seconds(policy)


def issue_instant(schedule: Schedule, policy: IssuancePolicy, index: int) -> int:
    """Moment the leaf for ``index`` may be issued."""
    return issue_time_for_index(schedule, policy, index) - policy.overlap_seconds


def sign_schedule(store: KeyStore, now: int, validity_minutes: int,
                  policy: IssuancePolicy) -> Schedule:
    """Reserve the next index and sign a schedule starting right after it.

    Raises:
        KeyExhaustedError: If fewer than two indices remain
        ScheduleFormatError: If the validity does not fit the policy
    """
    if store.remaining_signatures() < 2:
        raise KeyExhaustedError("No index left to sign a schedule that covers a leaf")
    if validity_minutes <= policy.overlap_minutes or validity_minutes >= 2 ** 16:
        raise ScheduleFormatError(f"Invalid validity of {validity_minutes} minutes")
    index = store.reserve_index()
    header = schedule_header(now, validity_minutes, index + 1, store.params.leaves)
    signature = store.sign_with_reserved(index, header)
    schedule = Schedule(now, validity_minutes, index + 1, store.params.leaves, signature)
    logger.info("signed schedule at index %d: start %d, validity %d min",
                index, schedule.start_index, validity_minutes)
    return schedule


def update_schedule(store: KeyStore, old: Schedule, now: int, new_validity_minutes: int,
                    policy: IssuancePolicy) -> Schedule:
    """Re-anchor the schedule at ``now`` and the current index; supersedes ``old``."""
    schedule = sign_schedule(store, now, new_validity_minutes, policy)
    logger.info("schedule signed at %d supersedes the one signed at %d",
                schedule.signing_index, old.signing_index)
    return schedule


def lifetime_years(certificates: int, validity_minutes: int) -> float:
    """Nominal span of ``certificates`` back-to-back validity windows in 365-day years."""
    return certificates * validity_minutes * 60 / SECONDS_PER_YEAR
