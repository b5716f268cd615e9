"""Type definitions shared across the xmssca package."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

from typing_extensions import TypedDict

class Format(Enum):
    """Output format enumeration."""
    PLAIN = "plain"
    JSON = "json"

class Phase(Enum):
    """Phases of the CA state machine."""
    RUNNING = "running"
    HALTED = "halted_awaiting_admin"
    EXHAUSTED = "exhausted"

class EventKind(Enum):
    """Kinds of records in the CA event log."""
    SETUP_COMPLETE = "setup_complete"
    ISSUED = "issued"
    HALTED = "halted"
    ADMIN_ALERT = "admin_alert"
    ADMIN_DECISION = "admin_decision"
    DUMMY_SIGNED = "dummy_signed"
    SCHEDULE_UPDATED = "schedule_updated"
    RESUMED = "resumed"
    EXHAUSTED = "exhausted"

class VerdictStatus(Enum):
    """Outcome classes of NTP consensus."""
    TRUSTED = "trusted"
    ADJUSTED = "adjusted"
    NO_CONSENSUS = "no-consensus"
    UNAVAILABLE = "unavailable"

class PlanAction(Enum):
    """Recovery actions the engine can propose."""
    RESUME = "resume"
    DUMMY_SIGN = "dummy_sign"
    SCHEDULE_UPDATE = "schedule_update"
    HALT = "halt"
    EXHAUSTED = "exhausted"

class DecisionKind(Enum):
    """Administrator decisions."""
    ACCEPT_TIME = "accept_time"
    CORRECT_TIME = "correct_time"
    EXECUTE_PLAN = "execute_plan"
    UPDATE_SCHEDULE = "update_schedule"

class TickKind(Enum):
    """Actions a tick can request."""
    NONE = "none"
    ISSUE = "issue"
    HALT = "halt"
    EXHAUSTED = "exhausted"

class RejectReason(Enum):
    """Distinguishable verifier rejection reasons."""
    MALFORMED = "malformed"
    WRONG_ISSUER = "wrong-issuer"
    BAD_SIGNATURE = "bad-signature"
    NOT_YET_VALID = "not-yet-valid"
    EXPIRED = "expired"
    SCHEDULE_MISMATCH = "schedule-mismatch"
    NO_SCHEDULE = "no-schedule"

@dataclass(frozen=True)
class IssuancePolicy:
    """Issuance cadence shared out-of-band between CA and peers."""
    overlap_minutes: int = 2

    def interval_minutes(self, validity_minutes: int) -> int:
        """Issue interval for a given leaf validity."""
        return validity_minutes - self.overlap_minutes

    @property
    def overlap_seconds(self) -> int:
        return self.overlap_minutes * 60

@dataclass(frozen=True)
class NtpSample:
    """One answer (or failure) from a time server."""
    server: str
    reported_time_ms: int = 0
    round_trip_delay_ms: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

@dataclass(frozen=True)
class TimeVerdict:
    """Result of acquiring trusted time."""
    status: VerdictStatus
    consensus_time_ms: int
    applied_offset_ms: int = 0
    alert: Optional[str] = None

    @property
    def trusted(self) -> bool:
        return self.status is VerdictStatus.TRUSTED

@dataclass(frozen=True)
class CrossCheckResult:
    """Outcome of comparing the relative timer with the absolute clock."""
    ok: bool
    description: str = ""

@dataclass(frozen=True)
class IssuedRecord:
    """Index and validity window of the newest issued leaf."""
    index: int
    not_before: int
    not_after: int

@dataclass(frozen=True)
class RelativeTimer:
    """Monotonic timer armed at the last issuance."""
    armed_at_monotonic_ms: int
    armed_at_wall_ms: int
    interval_ms: int

@dataclass(frozen=True)
class RecoveryPlan:
    """What the engine proposes to get back into schedule."""
    action: PlanAction
    rationale: str
    count: int = 0

    def describe(self) -> str:
        if self.action is PlanAction.DUMMY_SIGN:
            return f"dummy_sign({self.count}): {self.rationale}"
        return f"{self.action.value}: {self.rationale}"

@dataclass(frozen=True)
class AdminDecision:
    """An administrator decision delivered through the decisions inbox."""
    kind: DecisionKind
    time_ms: Optional[int] = None
    validity_minutes: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "time_ms": self.time_ms,
            "validity_minutes": self.validity_minutes,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AdminDecision":
        return cls(
            kind=DecisionKind(data["kind"]),
            time_ms=data.get("time_ms"),
            validity_minutes=data.get("validity_minutes"),
        )

@dataclass(frozen=True)
class EngineEvent:
    """One append-only record of the CA event log."""
    kind: EventKind
    at: int
    detail: Dict[str, Any] = field(default_factory=dict)

@dataclass(frozen=True)
class EngineState:
    """State reconstructed from the event log plus the in-memory timer."""
    phase: Phase = Phase.RUNNING
    last_issued: Optional[IssuedRecord] = None
    last_signed_index: Optional[int] = None
    armed_relative_timer: Optional[RelativeTimer] = None
    anomaly: Optional[str] = None
    setup_done: bool = False

@dataclass(frozen=True)
class TickAction:
    """What a tick asks the CA to do."""
    kind: TickKind
    index: Optional[int] = None
    report: Optional[str] = None

    @classmethod
    def none(cls) -> "TickAction":
        return cls(TickKind.NONE)

@dataclass(frozen=True)
class VerificationResult:
    """Verifier answer; ``reason`` is None on accept."""
    accepted: bool
    reason: Optional[RejectReason] = None
    detail: str = ""

class IssuedDetail(TypedDict):
    """Type definition for the detail of an ``issued`` event."""
    index: int
    not_before: int
    not_after: int

class ScheduleUpdatedDetail(TypedDict):
    """Type definition for the detail of a ``schedule_updated`` event."""
    signing_index: int
    start_index: int
    creation_date: int
    validity_minutes: int

# Type aliases
KeyPair = Tuple[bytes, bytes]
