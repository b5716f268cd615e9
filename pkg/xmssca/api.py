"""
Main API for the xmssca library.

This module provides :class:`CertificateAuthority`, one CA instance working
over a home directory: it runs setup, drives the issuance state machine,
applies administrator decisions and keeps every artifact on disk so that a
restarted instance carries on where the previous one stopped.
"""

import json
import logging
import shutil
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Union

from . import der
from .certkit import (
    ECDSA_P256_SHA256,
    CaCertificate,
    ClassicalSuite,
    LeafCertificate,
    build_ca_certificate,
    encode_cert,
    issue_leaf,
    parse_cert,
)
from .config import (
    CA_CERT_FILE,
    CONFIG_FILE,
    DECISIONS_FILE,
    DUMMY_TAG,
    EVENT_LOG_FILE,
    LEAF_CERT_FILE,
    LEAF_KEY_FILE,
    SCHEDULE_DIR,
    SCHEDULE_FILE,
    TOY_HEIGHT,
    CaSettings,
    load_settings,
    settings_to_dict,
    validate_settings,
)
from .engine import (
    AdminInbox,
    EventLog,
    assess_restart,
    event_detail,
    next_issue_instant,
    pending_alerts,
    plan_recovery,
    replay,
    apply_event,
    tick,
)
from .exceptions import (
    CertificateParseError,
    ConfigError,
    EngineStateError,
    IntegrityError,
    KeyExhaustedError,
    ScheduleFormatError,
    ScheduleMismatchError,
    StorageError,
)
from .keystore import KeyStore, SignObserver, StateCipher
from .schedule import (
    Schedule,
    decode_schedule,
    encode_schedule,
    sign_schedule,
    update_schedule,
    verify_schedule,
)
from .timeauth import ClockSource, SystemClock, TimeAuthority
from .types import (
    AdminDecision,
    DecisionKind,
    EngineEvent,
    EngineState,
    EventKind,
    IssuedDetail,
    Phase,
    PlanAction,
    RecoveryPlan,
    RelativeTimer,
    ScheduleUpdatedDetail,
    TickAction,
    TickKind,
    TimeVerdict,
)
from .utils import atomic_write
from .xmss import XmssParams, XmssPublicKey

logger = logging.getLogger(__name__)

IssueCallback = Callable[[LeafCertificate, bytes], None]


def _read_file(path: Path) -> bytes:
    try:
        with open(path, "rb") as handle:
            return handle.read()
    except OSError as e:
        raise StorageError(f"Error reading {path}: {str(e)}") from e


def dummy_message(index: int) -> bytes:
    """Message signed to burn ``index`` during catch-up."""
    return DUMMY_TAG + index.to_bytes(4, "big")


class CertificateAuthority:
    """One CA instance over a home directory.

    Use :meth:`create` for setup on an empty directory and :meth:`open` to
    continue an existing CA. The instance holds the key-store lock until
    :meth:`close`.
    """

    def __init__(self, home: Path, settings: CaSettings, store: KeyStore, ca_certificate: CaCertificate,
                 schedule: Schedule, state: EngineState, clock: ClockSource,
                 time_authority: TimeAuthority, suite: ClassicalSuite = ECDSA_P256_SHA256):
        self.home = home
        self.settings = settings
        self.store = store
        self.ca_certificate = ca_certificate
        self.schedule = schedule
        self.clock = clock
        self.time_authority = time_authority
        self.suite = suite
        self.events = EventLog(home / EVENT_LOG_FILE)
        self.inbox = AdminInbox(home / DECISIONS_FILE)
        self.on_issue: Optional[IssueCallback] = None
        self.last_verdict: Optional[TimeVerdict] = None
        self._state = state
        self._needs_restart_check = False
        self._sink: Optional[List[EngineEvent]] = None

    # ---- lifecycle -------------------------------------------------------

    @classmethod
    def create(cls, home: Union[str, Path], settings: Optional[CaSettings] = None,
               clock: Optional[ClockSource] = None, entropy: Optional[bytes] = None,
               time_authority: Optional[TimeAuthority] = None,
               sign_observer: Optional[SignObserver] = None,
               cipher: Optional[StateCipher] = None,
               suite: ClassicalSuite = ECDSA_P256_SHA256) -> "CertificateAuthority":
        """Set up a new CA: index 0 self-signs, 1 signs the schedule, 2 the first leaf.

        Args:
            home: Empty (or missing) directory for all CA files
            settings: CA settings; defaults when None
            clock: Device clock; the system clock when None
            entropy: 96 bytes of key-generation entropy; random when None
            time_authority: Trusted-time source; local clock when None
            sign_observer: Called with every index just before it is signed
            cipher: At-rest cipher for the key state
            suite: Classical suite of leaf keys

        Returns:
            The running instance

        Raises:
            EngineStateError: If the home directory is not fresh or time is untrusted
            KeyStoreError: If key generation or persistence fails
        """
        home = Path(home)
        settings = settings or CaSettings()
        validate_settings(settings)
        clock = clock or SystemClock()
        time_authority = time_authority or TimeAuthority([], settings)
        home.mkdir(parents=True, exist_ok=True)
        if any(home.iterdir()):
            raise EngineStateError(f"Refusing setup: {home} is not empty")

        verdict = time_authority.acquire(clock)
        if not verdict.trusted:
            raise EngineStateError(f"Refusing setup on untrusted time ({verdict.status.value}: {verdict.alert})")
        now_ms = verdict.consensus_time_ms
        now = now_ms // 1000
        policy = settings.policy()

        atomic_write(home / CONFIG_FILE, json.dumps(settings_to_dict(settings), indent=2).encode("utf-8"))
        params = XmssParams(settings.tree_height)
        store = KeyStore.create(home / settings.key_state_file, params, entropy, cipher, sign_observer)
        try:
            interval = policy.interval_minutes(settings.validity_minutes) * 60
            ca_not_after = min(now + (params.leaves - 2) * interval + settings.validity_minutes * 60,
                               der.MAX_GENERALIZED_TIME)
            ca_cert = build_ca_certificate(store, settings.ca_common_name, now, ca_not_after)
            schedule = sign_schedule(store, now, settings.validity_minutes, policy)
            index = store.reserve_index()
            leaf_secret, leaf_public = suite.keygen()
            leaf = issue_leaf(store, schedule, policy, index, leaf_public, now,
                              settings.ca_common_name, settings.leaf_common_name,
                              settings.leaf_dns_name, suite)
        except Exception:
            logger.error("setup of %s aborted at index %d", home, store.next_index)
            store.close()
            raise

        ca = cls(home, settings, store, ca_cert, schedule, EngineState(), clock, time_authority, suite)
        atomic_write(home / CA_CERT_FILE, encode_cert(ca_cert))
        ca._write_schedule(schedule)
        ca._write_leaf(leaf, leaf_secret)
        ca._append(EngineEvent(EventKind.SETUP_COMPLETE, now, {
            "ca_index": ca_cert.xmss_index,
            "schedule_index": schedule.signing_index,
            "start_index": schedule.start_index,
            "creation_date": schedule.creation_date,
            "validity_minutes": schedule.validity_minutes,
            "leaf": {"index": leaf.serial, "not_before": leaf.not_before, "not_after": leaf.not_after},
        }))
        ca._arm_timer(leaf.serial, now_ms)
        logger.info("CA set up in %s (%s)", home, params.name)
        return ca

    @classmethod
    def open(cls, home: Union[str, Path], settings: Optional[CaSettings] = None,
             clock: Optional[ClockSource] = None,
             time_authority: Optional[TimeAuthority] = None,
             sign_observer: Optional[SignObserver] = None,
             cipher: Optional[StateCipher] = None,
             suite: ClassicalSuite = ECDSA_P256_SHA256) -> "CertificateAuthority":
        """Continue an existing CA; its first step runs the restart check.

        Raises:
            EngineStateError: If setup never completed in ``home``
            IntegrityError: If the certificate or schedule does not match the key
            StoreLockedError: If another instance holds the key store
        """
        home = Path(home)
        settings = settings or load_settings(home / CONFIG_FILE)
        clock = clock or SystemClock()
        time_authority = time_authority or TimeAuthority([], settings)
        store = KeyStore.open(home / settings.key_state_file, cipher, sign_observer)
        try:
            if store.params.tree_height == TOY_HEIGHT and not settings.allow_toy_params:
                raise ConfigError("Key state uses the toy tree height; allow_toy_params is off")
            ca_cert = parse_cert(_read_file(home / CA_CERT_FILE))
            if not isinstance(ca_cert, CaCertificate) or ca_cert.spki.key != store.public_key.to_bytes():
                raise IntegrityError(f"{CA_CERT_FILE} does not certify this key state")
            schedule = decode_schedule(_read_file(home / SCHEDULE_FILE), settings.policy())
            if not verify_schedule(schedule, store.public_key):
                raise IntegrityError(f"{SCHEDULE_FILE} signature does not verify")
            events = EventLog(home / EVENT_LOG_FILE).read()
            state = replay(events)
            if not state.setup_done:
                raise EngineStateError(f"Setup never completed in {home}")
        except (CertificateParseError, ScheduleFormatError) as e:
            store.close()
            raise IntegrityError(f"Corrupt CA files in {home}: {str(e)}") from e
        except Exception:
            store.close()
            raise

        ca = cls(home, settings, store, ca_cert, schedule, state, clock, time_authority, suite)
        ca._needs_restart_check = True
        logger.info("opened CA %s in phase %s at index %d", home, state.phase.value, store.next_index)
        return ca

    def close(self) -> None:
        self.store.close()

    def __enter__(self) -> "CertificateAuthority":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    # ---- state -----------------------------------------------------------

    @property
    def state(self) -> EngineState:
        return self._state

    @property
    def phase(self) -> Phase:
        return self._state.phase

    @property
    def public_key(self) -> XmssPublicKey:
        return self.store.public_key

    def current_leaf(self) -> LeafCertificate:
        """The newest issued leaf, served even while halted."""
        cert = parse_cert(_read_file(self.home / LEAF_CERT_FILE))
        if not isinstance(cert, LeafCertificate):
            raise IntegrityError(f"{LEAF_CERT_FILE} is not a leaf certificate")
        return cert

    def current_leaf_secret(self) -> bytes:
        return _read_file(self.home / LEAF_KEY_FILE)

    def pending_alerts(self) -> List[EngineEvent]:
        """Alerts raised since the engine last resumed."""
        return pending_alerts(self.events.read())

    def next_wakeup(self) -> Optional[int]:
        """Wall time (ms) of the next issue instant, or None when nothing is due."""
        if self._state.phase is not Phase.RUNNING:
            return None
        timer = self._state.armed_relative_timer
        if timer is not None:
            return timer.armed_at_wall_ms + timer.interval_ms
        instant = next_issue_instant(self.schedule, self.settings, self.store.next_index)
        return None if instant is None else instant * 1000

    # ---- issuance --------------------------------------------------------

    def step(self) -> TickAction:
        """Acquire time, tick once and carry out the resulting action."""
        verdict = self.time_authority.acquire(self.clock)
        self.last_verdict = verdict
        now = verdict.consensus_time_ms // 1000

        if self._needs_restart_check and self._state.phase is Phase.RUNNING and verdict.trusted:
            self._needs_restart_check = False
            plan = assess_restart(self._state, self.schedule, self.store, now, self.settings)
            if plan.action in (PlanAction.HALT, PlanAction.DUMMY_SIGN, PlanAction.SCHEDULE_UPDATE):
                report = plan.rationale if plan.action is PlanAction.HALT else f"recovery needed: {plan.describe()}"
                self._halt(now, report)
                return TickAction(TickKind.HALT, report=report)

        action = tick(self._state, self.schedule, verdict, self.clock.monotonic_ms(), self.store, self.settings)
        if action.kind is TickKind.ISSUE and action.index is not None:
            try:
                self._issue(action.index, verdict.consensus_time_ms)
            except ScheduleMismatchError as e:
                self._halt(now, str(e))
                return TickAction(TickKind.HALT, report=str(e))
        elif action.kind is TickKind.HALT and action.report is not None:
            self._halt(now, action.report)
        elif action.kind is TickKind.EXHAUSTED:
            self._append(EngineEvent(EventKind.EXHAUSTED, now, {"next_index": self.store.next_index}))
            logger.warning("CA key is exhausted")
        return action

    def process_inbox(self) -> List[EngineEvent]:
        """Apply queued administrator decisions in order."""
        produced: List[EngineEvent] = []
        for decision in self.inbox.drain():
            try:
                produced.extend(self.apply_admin(decision))
            except EngineStateError as e:
                logger.error("admin decision %s rejected: %s", decision.kind.value, e)
        return produced

    def _issue(self, index: int, now_ms: int) -> None:
        now = now_ms // 1000
        try:
            reserved = self.store.reserve_index()
        except KeyExhaustedError:
            self._append(EngineEvent(EventKind.EXHAUSTED, now, {"next_index": self.store.next_index}))
            return
        secret, public = self.suite.keygen()
        leaf = issue_leaf(self.store, self.schedule, self.settings.policy(), reserved, public, now,
                          self.settings.ca_common_name, self.settings.leaf_common_name,
                          self.settings.leaf_dns_name, self.suite)
        self._write_leaf(leaf, secret)
        issued: IssuedDetail = {"index": leaf.serial, "not_before": leaf.not_before, "not_after": leaf.not_after}
        self._append(EngineEvent(EventKind.ISSUED, now, dict(issued)))
        self._arm_timer(index, now_ms)
        if self.on_issue is not None:
            self.on_issue(leaf, secret)

    def _arm_timer(self, issued_index: int, now_ms: int) -> None:
        instant = next_issue_instant(self.schedule, self.settings, issued_index + 1)
        if instant is None:
            timer = None
        else:
            timer = RelativeTimer(self.clock.monotonic_ms(), now_ms, max(0, instant * 1000 - now_ms))
        self._state = replace(self._state, armed_relative_timer=timer)

    def _halt(self, now: int, report: str) -> None:
        logger.warning("issuance halted: %s", report)
        self._append(EngineEvent(EventKind.HALTED, now, {"report": report}))
        self._append(EngineEvent(EventKind.ADMIN_ALERT, now, {"message": report}))

    def _alert(self, now: int, message: str) -> None:
        logger.warning("admin alert: %s", message)
        self._append(EngineEvent(EventKind.ADMIN_ALERT, now, {"message": message}))

    def _append(self, event: EngineEvent) -> None:
        self.events.append(event)
        self._state = apply_event(self._state, event)
        if self._sink is not None:
            self._sink.append(event)

    # ---- administration --------------------------------------------------

    def apply_admin(self, decision: AdminDecision) -> List[EngineEvent]:
        """Apply one administrator decision; every decision is logged.

        Args:
            decision: The decision

        Returns:
            The events the decision produced

        Raises:
            EngineStateError: If the decision does not apply to the current phase
        """
        kind = decision.kind
        if kind in (DecisionKind.ACCEPT_TIME, DecisionKind.EXECUTE_PLAN) and self.phase is not Phase.HALTED:
            raise EngineStateError(f"{kind.value} needs a halted CA (phase is {self.phase.value})")
        if kind is DecisionKind.UPDATE_SCHEDULE and self.phase is Phase.EXHAUSTED:
            raise EngineStateError("The CA key is exhausted")

        self._sink = []
        try:
            self._decide(decision)
        finally:
            produced, self._sink = self._sink, None
        return produced

    def _decide(self, decision: AdminDecision) -> None:
        kind = decision.kind
        local_ms = self.clock.now_ms()
        self._append(EngineEvent(EventKind.ADMIN_DECISION, local_ms // 1000,
                                 event_detail(**decision.to_dict())))

        if kind is DecisionKind.ACCEPT_TIME:
            accepted = local_ms if decision.time_ms is None else decision.time_ms
            if abs(accepted - local_ms) > self.settings.skew_tolerance_ms:
                self._alert(local_ms // 1000,
                            f"accepted time differs from the device clock by {abs(accepted - local_ms) // 1000} s")
            else:
                self._resolve(accepted // 1000)
        elif kind is DecisionKind.CORRECT_TIME:
            target = local_ms if decision.time_ms is None else decision.time_ms
            self.clock.correct(target)
            self._state = replace(self._state, armed_relative_timer=None)
            logger.info("wall clock corrected to %d", target)
            if self.phase is Phase.HALTED:
                self._resolve(target // 1000)
        else:
            verdict = self.time_authority.acquire(self.clock)
            now = verdict.consensus_time_ms // 1000
            if not verdict.trusted:
                self._alert(now, f"cannot act on untrusted time ({verdict.status.value}: {verdict.alert})")
            elif kind is DecisionKind.EXECUTE_PLAN:
                self._resolve(now)
            else:
                self._update_schedule(now, decision.validity_minutes)

    def _resolve(self, now: int) -> None:
        plan = plan_recovery(self._state, self.schedule, self.store, now, self.settings)
        if plan.action is PlanAction.HALT:
            self._alert(now, f"plan {plan.describe()}")
            return
        self._execute(plan, now)

    def _update_schedule(self, now: int, validity_minutes: Optional[int]) -> None:
        last = self._state.last_signed_index
        if last is not None and self.store.next_index <= last:
            self._alert(now, f"refusing schedule update: key state behind last signed index {last}")
            return
        self._execute(RecoveryPlan(PlanAction.SCHEDULE_UPDATE, "administrator request"), now, validity_minutes)

    def _execute(self, plan: RecoveryPlan, now: int, validity_minutes: Optional[int] = None) -> None:
        logger.info("executing plan %s", plan.describe())
        try:
            if plan.action is PlanAction.DUMMY_SIGN:
                for _ in range(plan.count):
                    index = self.store.reserve_index()
                    self.store.sign_with_reserved(index, dummy_message(index))
                    self._append(EngineEvent(EventKind.DUMMY_SIGNED, now, {"index": index}))
            elif plan.action is PlanAction.SCHEDULE_UPDATE:
                validity = validity_minutes or self.schedule.validity_minutes
                if not self.settings.overlap_minutes < validity < 2 ** 16:
                    self._alert(now, f"invalid validity of {validity} minutes")
                    return
                updated = update_schedule(self.store, self.schedule, now, validity, self.settings.policy())
                self._write_schedule(updated)
                self.schedule = updated
                detail: ScheduleUpdatedDetail = {
                    "signing_index": updated.signing_index,
                    "start_index": updated.start_index,
                    "creation_date": updated.creation_date,
                    "validity_minutes": updated.validity_minutes,
                }
                self._append(EngineEvent(EventKind.SCHEDULE_UPDATED, now, dict(detail)))
            elif plan.action is PlanAction.EXHAUSTED:
                self._append(EngineEvent(EventKind.EXHAUSTED, now, {"next_index": self.store.next_index}))
                return
        except KeyExhaustedError:
            self._append(EngineEvent(EventKind.EXHAUSTED, now, {"next_index": self.store.next_index}))
            return
        self._state = replace(self._state, armed_relative_timer=None)
        if self.phase is Phase.HALTED:
            self._append(EngineEvent(EventKind.RESUMED, now, {"plan": plan.describe()}))
        self._needs_restart_check = False

    # ---- files -----------------------------------------------------------

    def _write_schedule(self, schedule: Schedule) -> None:
        data = encode_schedule(schedule)
        history = self.home / SCHEDULE_DIR
        history.mkdir(exist_ok=True)
        atomic_write(history / f"{schedule.signing_index}.sched", data)
        atomic_write(self.home / SCHEDULE_FILE, data)

    def _write_leaf(self, leaf: LeafCertificate, secret: bytes) -> None:
        atomic_write(self.home / LEAF_KEY_FILE, secret)
        atomic_write(self.home / LEAF_CERT_FILE, encode_cert(leaf))

    def schedule_history(self) -> List[Path]:
        """Every schedule this CA signed, oldest first."""
        history = self.home / SCHEDULE_DIR
        return sorted(history.glob("*.sched"), key=lambda p: int(p.stem))

    def export_trust_bundle(self, dest: Union[str, Path]) -> Path:
        """Copy what peers need (CA certificate and all schedules) to ``dest``."""
        dest = Path(dest)
        (dest / SCHEDULE_DIR).mkdir(parents=True, exist_ok=True)
        shutil.copyfile(self.home / CA_CERT_FILE, dest / CA_CERT_FILE)
        for path in self.schedule_history():
            shutil.copyfile(path, dest / SCHEDULE_DIR / path.name)
        shutil.copyfile(self.home / SCHEDULE_FILE, dest / SCHEDULE_FILE)
        return dest

    def export_state(self, dest: Union[str, Path]) -> Path:
        """Move this CA to a replacement device directory and retire this instance.

        The copy is taken under the key-store lock; afterwards this instance is
        closed so that only the copy can sign.

        Raises:
            EngineStateError: If ``dest`` is not empty
            StorageError: If copying fails
        """
        dest = Path(dest)
        dest.mkdir(parents=True, exist_ok=True)
        if any(dest.iterdir()):
            raise EngineStateError(f"Refusing export: {dest} is not empty")
        names = [CONFIG_FILE, self.settings.key_state_file, CA_CERT_FILE, SCHEDULE_FILE,
                 LEAF_CERT_FILE, LEAF_KEY_FILE, EVENT_LOG_FILE]
        try:
            for name in names:
                shutil.copyfile(self.home / name, dest / name)
            shutil.copytree(self.home / SCHEDULE_DIR, dest / SCHEDULE_DIR)
        except OSError as e:
            raise StorageError(f"Error exporting CA state to {dest}: {str(e)}") from e
        logger.info("exported CA state from %s to %s; retiring this instance", self.home, dest)
        self.close()
        return dest
