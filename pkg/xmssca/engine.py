"""
CA state machine decisions.

Everything here is a pure function of its inputs: ``tick`` decides what the
CA should do at a given trusted time, ``plan_recovery`` proposes how to get
back into schedule after a halt, and ``replay`` rebuilds the engine state
from the append-only event log. Executing decisions against the key store
and files is the job of :class:`xmssca.api.CertificateAuthority`.
"""

import fcntl
import json
import logging
import os
import struct
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from typing_extensions import Protocol

from .config import CaSettings
from .exceptions import StorageError
from .schedule import Schedule, due_index, issue_instant
from .timeauth import cross_check
from .types import (
    AdminDecision,
    EngineEvent,
    EngineState,
    EventKind,
    IssuedRecord,
    Phase,
    PlanAction,
    RecoveryPlan,
    TickAction,
    TickKind,
    TimeVerdict,
)
from .utils import fsync_directory

logger = logging.getLogger(__name__)

_LENGTH = struct.Struct(">I")

ROLLBACK_REPORT = "key state behind last issued certificate"


class IndexCounter(Protocol):
    """The part of a key store the decisions look at."""

    @property
    def next_index(self) -> int: ...

    def remaining_signatures(self) -> int: ...


def schedule_end_instant(schedule: Schedule, settings: CaSettings) -> int:
    """Instant at which the slot after the last scheduled index would start issuing."""
    policy = settings.policy()
    span = (schedule.max_index - schedule.start_index) * schedule.interval_seconds(policy)
    return schedule.creation_date + span - policy.overlap_seconds


def next_issue_instant(schedule: Schedule, settings: CaSettings, next_index: int) -> Optional[int]:
    """When the leaf for ``next_index`` may be issued.

    For ``max_index`` this is the end of the schedule; None outside it.
    """
    if next_index == schedule.max_index:
        return schedule_end_instant(schedule, settings)
    if next_index < schedule.start_index or next_index > schedule.max_index:
        return None
    return issue_instant(schedule, settings.policy(), next_index)


def index_relation(schedule: Schedule, settings: CaSettings, next_index: int, now: int) -> Optional[str]:
    """Describe how the key state disagrees with the schedule at ``now``; None if it agrees.

    The key state agrees when its next index is the one due now (issue) or
    one past it (the current slot is already served).
    """
    due = due_index(schedule, settings.policy(), now)
    if due is None:
        if now + settings.policy().overlap_seconds < schedule.creation_date:
            return "time before schedule creation"
        return "time beyond schedule end"
    if next_index < due:
        return f"index behind schedule by {due - next_index} slots"
    if next_index > due + 1:
        return f"index ahead of schedule by {next_index - due - 1} slots"
    return None


def tick(state: EngineState, schedule: Schedule, verdict: TimeVerdict, monotonic_ms: int,
         keystore: IndexCounter, settings: CaSettings) -> TickAction:
    """Decide what to do at the verdict's time.

    Args:
        state: Current engine state (timer included)
        schedule: Newest schedule
        verdict: Time verdict; its consensus time is the engine's "now"
        monotonic_ms: Current monotonic clock reading
        keystore: Source of the next unused index
        settings: Thresholds and policy

    Returns:
        none, issue(index), halt(report) or exhausted
    """
    if state.phase is not Phase.RUNNING:
        return TickAction.none()

    now_ms = verdict.consensus_time_ms
    now = now_ms // 1000
    if keystore.remaining_signatures() == 0 and verdict.trusted:
        if now >= schedule_end_instant(schedule, settings):
            return TickAction(TickKind.EXHAUSTED, report="all one-time keys are used")
        return TickAction.none()

    findings: List[str] = []
    if not verdict.trusted:
        findings.append(f"time verdict {verdict.status.value}: {verdict.alert}")

    timer = state.armed_relative_timer
    if timer is not None:
        # Wall-clock advance since arming must match the monotonic advance
        elapsed = monotonic_ms - timer.armed_at_monotonic_ms
        check = cross_check(elapsed, elapsed, now_ms, timer.armed_at_wall_ms + elapsed,
                            settings.skew_tolerance_ms)
        if not check.ok:
            findings.append(check.description)

    relation = index_relation(schedule, settings, keystore.next_index, now)
    if relation is not None:
        findings.append(relation)

    if findings:
        return TickAction(TickKind.HALT, report="; ".join(findings))
    if keystore.next_index == due_index(schedule, settings.policy(), now):
        return TickAction(TickKind.ISSUE, index=keystore.next_index)
    return TickAction.none()


def plan_recovery(state: EngineState, schedule: Schedule, keystore: IndexCounter,
                  trusted_now: int, settings: CaSettings) -> RecoveryPlan:
    """Propose how to bring the key state back into schedule at ``trusted_now``.

    Args:
        state: Engine state; its last signed index guards against rollback
        schedule: Newest schedule
        keystore: Source of the next unused index
        trusted_now: Administrator-confirmed POSIX time
        settings: Dummy threshold and policy

    Returns:
        The plan; execution is up to the caller
    """
    actual = keystore.next_index
    remaining = keystore.remaining_signatures()
    if state.last_signed_index is not None and actual <= state.last_signed_index:
        return RecoveryPlan(PlanAction.HALT,
                            f"{ROLLBACK_REPORT}: next index {actual}, last signed {state.last_signed_index}")
    if remaining == 0:
        return RecoveryPlan(PlanAction.EXHAUSTED, "all one-time keys are used")

    due = due_index(schedule, settings.policy(), trusted_now)
    if due is None:
        reason = index_relation(schedule, settings, actual, trusted_now) or "time out of schedule"
        return RecoveryPlan(PlanAction.HALT, f"{reason}; an update_schedule decision is required")
    if actual in (due, due + 1):
        return RecoveryPlan(PlanAction.RESUME, f"next index {actual} matches due index {due}")
    if actual < due and due - actual <= settings.dummy_threshold:
        gap = due - actual
        if gap + 1 > remaining:
            return RecoveryPlan(PlanAction.EXHAUSTED, f"{gap} dummies would leave no key for a leaf")
        return RecoveryPlan(PlanAction.DUMMY_SIGN, f"index behind schedule by {gap} slots", gap)
    if remaining < 2:
        return RecoveryPlan(PlanAction.EXHAUSTED, "too few keys left for a schedule update")
    if actual < due:
        rationale = f"index behind schedule by {due - actual} slots (threshold {settings.dummy_threshold})"
    else:
        rationale = f"index ahead of schedule by {actual - due - 1} slots"
    return RecoveryPlan(PlanAction.SCHEDULE_UPDATE, rationale)


def assess_restart(state: EngineState, schedule: Schedule, keystore: IndexCounter,
                   now: int, settings: CaSettings) -> RecoveryPlan:
    """Check a freshly started instance; its relative timer is gone.

    Returns:
        A resume plan when the key state fits both the log and the schedule
    """
    plan = plan_recovery(state, schedule, keystore, now, settings)
    if plan.action is not PlanAction.RESUME:
        logger.warning("restart check failed: %s", plan.describe())
    return plan


def apply_event(state: EngineState, event: EngineEvent) -> EngineState:
    """Fold one logged event into the state."""
    detail = event.detail
    kind = event.kind
    if kind is EventKind.SETUP_COMPLETE:
        leaf = detail["leaf"]
        return EngineState(
            phase=Phase.RUNNING,
            last_issued=IssuedRecord(leaf["index"], leaf["not_before"], leaf["not_after"]),
            last_signed_index=leaf["index"],
            setup_done=True,
        )
    if kind is EventKind.ISSUED:
        record = IssuedRecord(detail["index"], detail["not_before"], detail["not_after"])
        return replace(state, last_issued=record, last_signed_index=record.index)
    if kind is EventKind.DUMMY_SIGNED:
        return replace(state, last_signed_index=detail["index"])
    if kind is EventKind.SCHEDULE_UPDATED:
        return replace(state, last_signed_index=detail["signing_index"])
    if kind is EventKind.HALTED:
        return replace(state, phase=Phase.HALTED, anomaly=detail.get("report"),
                        armed_relative_timer=None)
    if kind is EventKind.RESUMED:
        return replace(state, phase=Phase.RUNNING, anomaly=None)
    if kind is EventKind.EXHAUSTED:
        return replace(state, phase=Phase.EXHAUSTED, armed_relative_timer=None)
    return state


def replay(events: Iterable[EngineEvent]) -> EngineState:
    """Rebuild the engine state from a log."""
    state = EngineState()
    for event in events:
        state = apply_event(state, event)
    return state


def encode_event(event: EngineEvent) -> bytes:
    body = json.dumps({"kind": event.kind.value, "at": event.at, "detail": event.detail},
                      sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _LENGTH.pack(len(body)) + body


def decode_event(body: bytes) -> EngineEvent:
    data = json.loads(body.decode("utf-8"))
    return EngineEvent(EventKind(data["kind"]), int(data["at"]), dict(data["detail"]))


class EventLog:
    """Append-only, length-prefixed event records; every append is fsynced."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def append(self, event: EngineEvent) -> None:
        record = encode_event(event)
        try:
            with open(self.path, "ab") as handle:
                handle.write(record)
                handle.flush()
                os.fsync(handle.fileno())
        except OSError as e:
            raise StorageError(f"Error appending to {self.path}: {str(e)}") from e
        logger.debug("event %s at %d", event.kind.value, event.at)

    def read(self) -> List[EngineEvent]:
        """All complete records; a torn trailing record is dropped."""
        try:
            with open(self.path, "rb") as handle:
                data = handle.read()
        except FileNotFoundError:
            return []
        except OSError as e:
            raise StorageError(f"Error reading {self.path}: {str(e)}") from e

        events: List[EngineEvent] = []
        offset = 0
        while offset + _LENGTH.size <= len(data):
            (length,) = _LENGTH.unpack_from(data, offset)
            end = offset + _LENGTH.size + length
            if end > len(data):
                break
            try:
                events.append(decode_event(data[offset + _LENGTH.size:end]))
            except (ValueError, KeyError, TypeError) as e:
                raise StorageError(f"Corrupt event record at byte {offset} of {self.path}: {str(e)}") from e
            offset = end
        if offset != len(data):
            logger.warning("dropping %d trailing bytes of a torn record in %s", len(data) - offset, self.path)
        return events

    def raw(self) -> bytes:
        try:
            with open(self.path, "rb") as handle:
                return handle.read()
        except FileNotFoundError:
            return b""


def _read_decision_lines(path: Path) -> List[str]:
    """Lines of an inbox file, read once no submitter holds it."""
    with open(path, "r", encoding="utf-8") as handle:
        fcntl.flock(handle.fileno(), fcntl.LOCK_EX)
        return handle.read().splitlines()


class AdminInbox:
    """Decisions queued for a running CA, one JSON object per line.

    ``drain`` moves the inbox aside before reading it, so decisions submitted
    while a drain is running land in a fresh inbox for the next one.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.draining = self.path.with_name(self.path.name + ".draining")

    def submit(self, decision: AdminDecision) -> None:
        line = json.dumps(decision.to_dict(), sort_keys=True) + "\n"
        try:
            with open(self.path, "a", encoding="utf-8") as handle:
                fcntl.flock(handle.fileno(), fcntl.LOCK_EX)
                handle.write(line)
                handle.flush()
                os.fsync(handle.fileno())
            fsync_directory(self.path.parent)
        except OSError as e:
            raise StorageError(f"Error writing {self.path}: {str(e)}") from e
        logger.info("queued admin decision %s", decision.kind.value)

    def drain(self) -> List[AdminDecision]:
        """Take every queued decision; a batch left by an interrupted drain comes first."""
        lines: List[str] = []
        try:
            if self.draining.exists():
                lines += self._take()
            os.replace(self.path, self.draining)
        except FileNotFoundError:
            pass
        except OSError as e:
            raise StorageError(f"Error moving {self.path} aside: {str(e)}") from e
        else:
            lines += self._take()

        decisions: List[AdminDecision] = []
        for line in lines:
            if not line.strip():
                continue
            try:
                decisions.append(AdminDecision.from_dict(json.loads(line)))
            except (ValueError, KeyError) as e:
                logger.error("skipping malformed admin decision %r: %s", line, e)
        return decisions

    def _take(self) -> List[str]:
        try:
            lines = _read_decision_lines(self.draining)
            os.unlink(self.draining)
            fsync_directory(self.draining.parent)
        except OSError as e:
            raise StorageError(f"Error reading {self.draining}: {str(e)}") from e
        return lines


def event_detail(**values: Any) -> Dict[str, Any]:
    """Event payload with None values dropped."""
    return {key: value for key, value in values.items() if value is not None}


def pending_alerts(events: Iterable[EngineEvent]) -> List[EngineEvent]:
    """Alerts raised since the engine last resumed (or was set up)."""
    alerts: List[EngineEvent] = []
    for event in events:
        if event.kind in (EventKind.RESUMED, EventKind.SETUP_COMPLETE):
            alerts = []
        elif event.kind is EventKind.ADMIN_ALERT:
            alerts.append(event)
    return alerts
