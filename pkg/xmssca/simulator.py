"""
Deterministic scenario simulator.

A scenario is a line-oriented script (one step per line, space-separated
fields, ``#`` starts a comment) that drives a real CA instance over a
virtual clock and simulated NTP servers. Crashes are in-process restarts of
the instance over its persisted files; rollbacks restore an earlier copy of
the key-state file. Every index handed to the signer is recorded across all
instance lifetimes and audited for duplicates after the run.

Example::

    name downtime-catchup-3
    params h=10 validity=240 overlap=2 ntp=off start=1751720001
    setup
    advance 4h
    crash_restart 1000m
    expect event halted
    admin accept_time now
    expect event dummy_signed count=3
"""

import hashlib
import logging
import tempfile
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

from .api import CertificateAuthority
from .certkit import LeafCertificate, encode_cert, parse_cert
from .config import TOY_HEIGHT, CaSettings
from .exceptions import ConfigError, ScenarioError, TimeSourceError
from .timeauth import ClockSource, NtpTransport, SntpSource, TimeAuthority, build_reply
from .types import (
    AdminDecision,
    DecisionKind,
    EngineEvent,
    EventKind,
    Phase,
    RejectReason,
    VerdictStatus,
)
from .utils import parse_duration_ms, parse_time_ms
from .verifier import load_trust_store, verify_leaf
from .xmss import ENTROPY_SIZE

logger = logging.getLogger(__name__)

# Number of simulated time servers
SERVER_COUNT = 3

# One-way-and-back delay of simulated server i is i times this (ms)
BASE_DELAY_MS = 10

# Seed for simulator key generation; fixed so that runs are reproducible
SIMULATOR_SEED = b"xmssca simulator"

# Minimum virtual step when a tick at a wakeup made no progress (ms)
_NUDGE_MS = 1000

_OPERATIONS = {
    "name", "params", "setup", "advance", "set_clock", "slew", "crash_restart",
    "crash_next_issuance", "rollback_state_file", "ntp_fault", "admin", "expect",
}
_NEEDS_SETUP = {"crash_restart", "crash_next_issuance", "rollback_state_file", "admin", "expect"}
_PARAM_KEYS = {"h", "validity", "overlap", "ntp", "start"}


class VirtualClock(ClockSource):
    """Wall and monotonic clocks that move only when told to.

    ``slew_ms_per_s`` makes the wall clock gain (or lose) that many
    milliseconds per elapsed second.
    """

    def __init__(self, wall_ms: int, monotonic_ms: int = 0, slew_ms_per_s: float = 0.0):
        self._wall = wall_ms
        self._monotonic = monotonic_ms
        self._drift = 0.0
        self.slew_ms_per_s = slew_ms_per_s

    def now_ms(self) -> int:
        return self._wall

    def monotonic_ms(self) -> int:
        return self._monotonic

    def correct(self, wall_ms: int) -> None:
        self._wall = wall_ms

    def advance(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("Virtual time only moves forward")
        self._monotonic += ms
        self._drift += ms * self.slew_ms_per_s / 1000
        whole = int(self._drift)
        self._drift -= whole
        self._wall += ms + whole

    def jump(self, delta_ms: int) -> None:
        """Step the wall clock without moving the monotonic clock."""
        self._wall += delta_ms


@dataclass
class SimulatedNtpServer:
    """A time server that may lie or stay silent."""
    name: str
    delay_ms: int
    offset_ms: int = 0
    silent: bool = False


class SimulatedNetwork(NtpTransport):
    """Answers SNTP requests from simulated servers in virtual time."""

    def __init__(self, servers: Sequence[SimulatedNtpServer], advance: Callable[[int], None],
                 truth: Callable[[], int]):
        self.servers: Dict[str, SimulatedNtpServer] = {s.name: s for s in servers}
        self._advance = advance
        self._truth = truth

    def exchange(self, endpoint: str, request: bytes, timeout_ms: int) -> bytes:
        server = self.servers.get(endpoint)
        if server is None:
            raise TimeSourceError(f"{endpoint}: unknown host")
        if server.silent:
            self._advance(timeout_ms)
            raise TimeSourceError(f"{endpoint}: no reply within {timeout_ms} ms")
        half = server.delay_ms // 2
        self._advance(half)
        reply = build_reply(request, self._truth() + server.offset_ms)
        self._advance(server.delay_ms - half)
        return reply


class SimulatedCrash(Exception):
    """Raised inside the signer to emulate a crash between reservation and signing."""


@dataclass(frozen=True)
class ScenarioParams:
    tree_height: int = 10
    validity_minutes: int = 240
    overlap_minutes: int = 2
    ntp: bool = True
    start: int = 1751720001

    def settings(self) -> CaSettings:
        servers = tuple(f"ntp{i}.sim" for i in range(1, SERVER_COUNT + 1)) if self.ntp else ()
        return CaSettings(tree_height=self.tree_height, validity_minutes=self.validity_minutes,
                          overlap_minutes=self.overlap_minutes, ntp_servers=servers,
                          allow_toy_params=self.tree_height == TOY_HEIGHT)


@dataclass(frozen=True)
class Step:
    line: int
    op: str
    args: Tuple[str, ...]

    def text(self) -> str:
        return " ".join((self.op,) + self.args)


@dataclass(frozen=True)
class Scenario:
    name: str
    params: ScenarioParams
    steps: Tuple[Step, ...]


@dataclass(frozen=True)
class ExpectationResult:
    line: int
    text: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ScenarioReport:
    """Outcome of one scenario run."""
    name: str
    expectations: Tuple[ExpectationResult, ...]
    events: Tuple[EngineEvent, ...]
    signed_indices: Tuple[int, ...]
    audit_ok: bool
    audit_detail: str = ""
    crashes: int = 0

    @property
    def passed(self) -> bool:
        return self.audit_ok and all(e.passed for e in self.expectations)


def _fail(line: int, message: str) -> ScenarioError:
    return ScenarioError(f"line {line}: {message}")


def _parse_params(line: int, args: Sequence[str]) -> ScenarioParams:
    values: Dict[str, str] = {}
    for arg in args:
        key, sep, value = arg.partition("=")
        if not sep or key not in _PARAM_KEYS:
            raise _fail(line, f"unknown parameter {arg!r}")
        values[key] = value
    try:
        params = ScenarioParams(
            tree_height=int(values.get("h", 10)),
            validity_minutes=int(values.get("validity", 240)),
            overlap_minutes=int(values.get("overlap", 2)),
            ntp={"on": True, "off": False}[values.get("ntp", "on")],
            start=int(values.get("start", 1751720001)),
        )
        params.settings().with_overrides()
    except (ValueError, KeyError, ConfigError) as e:
        raise _fail(line, f"invalid parameters: {str(e)}") from e
    return params


def _check_duration(line: int, text: str) -> None:
    try:
        parse_duration_ms(text)
    except ConfigError as e:
        raise _fail(line, str(e)) from e


def _check_step(step: Step, snapshot_lines: Set[int]) -> None:
    op, args, line = step.op, step.args, step.line
    if op in ("setup", "crash_next_issuance"):
        if args:
            raise _fail(line, f"{op} takes no arguments")
    elif op == "advance" or op == "crash_restart":
        if len(args) != 1:
            raise _fail(line, f"{op} needs one duration")
        _check_duration(line, args[0])
    elif op == "set_clock":
        if len(args) != 1:
            raise _fail(line, "set_clock needs +/-duration, 'true' or a time")
        if args[0] != "true":
            if args[0][0] in "+-":
                _check_duration(line, args[0])
            else:
                try:
                    parse_time_ms(args[0])
                except ConfigError as e:
                    raise _fail(line, str(e)) from e
    elif op == "slew":
        if len(args) != 2:
            raise _fail(line, "slew needs a rate (ms/s) and a duration")
        try:
            float(args[0])
        except ValueError as e:
            raise _fail(line, f"invalid slew rate {args[0]!r}") from e
        _check_duration(line, args[1])
    elif op == "rollback_state_file":
        if len(args) != 1 or not args[0].isdigit() or int(args[0]) not in snapshot_lines:
            raise _fail(line, "rollback_state_file needs the line of an earlier step at or after setup")
    elif op == "ntp_fault":
        if len(args) != 2:
            raise _fail(line, "ntp_fault needs a server and an offset, 'silent' or 'clear'")
        if args[0] != "all" and args[0] not in {str(i) for i in range(1, SERVER_COUNT + 1)}:
            raise _fail(line, f"unknown time server {args[0]!r}")
        if args[1] not in ("silent", "clear"):
            _check_duration(line, args[1])
    elif op == "admin":
        _check_admin(line, args)
    elif op == "expect":
        _check_expect(line, args)


def _check_admin(line: int, args: Sequence[str]) -> None:
    if not args:
        raise _fail(line, "admin needs a decision")
    try:
        kind = DecisionKind(args[0])
    except ValueError as e:
        raise _fail(line, f"unknown decision {args[0]!r}") from e
    rest = args[1:]
    if kind in (DecisionKind.ACCEPT_TIME, DecisionKind.CORRECT_TIME):
        if len(rest) != 1:
            raise _fail(line, f"{kind.value} needs a time")
        if rest[0] not in ("now", "true"):
            try:
                parse_time_ms(rest[0])
            except ConfigError as e:
                raise _fail(line, str(e)) from e
    elif kind is DecisionKind.EXECUTE_PLAN and rest:
        raise _fail(line, "execute_plan takes no arguments")
    elif kind is DecisionKind.UPDATE_SCHEDULE and (len(rest) > 1 or (rest and not rest[0].isdigit())):
        raise _fail(line, "update_schedule takes an optional validity in minutes")


def _check_expect(line: int, args: Sequence[str]) -> None:
    if len(args) < 2:
        raise _fail(line, "expect needs a subject and a value")
    subject, value, rest = args[0], args[1], args[2:]
    try:
        if subject in ("event", "no_event"):
            EventKind(value)
            for arg in rest:
                key, sep, _ = arg.partition("=")
                if not sep or (subject == "no_event" and key == "count"):
                    raise _fail(line, f"invalid filter {arg!r}")
                if key == "count" and not arg.partition("=")[2].isdigit():
                    raise _fail(line, f"invalid count {arg!r}")
        elif subject == "verdict":
            VerdictStatus(value)
        elif subject == "phase":
            Phase(value)
        elif subject == "verify":
            _parse_verify(line, args[1:])
        else:
            raise _fail(line, f"unknown expectation {subject!r}")
    except ValueError as e:
        raise _fail(line, str(e)) from e
    if subject in ("verdict", "phase") and rest:
        raise _fail(line, f"expect {subject} takes one value")


def _parse_verify(line: int, args: Sequence[str]) -> Tuple[int, str, bool, Optional[RejectReason]]:
    fields = dict(arg.partition("=")[::2] for arg in args if "=" in arg)
    plain = [arg for arg in args if "=" not in arg]
    if set(fields) != {"leaf", "at"} or not fields["leaf"].isdigit() or not plain:
        raise _fail(line, "expect verify needs leaf=<index> at=<mid|now|nb|na|time> accept|reject <reason>")
    at = fields["at"]
    if at not in ("mid", "now", "nb", "na") and not at.isdigit():
        raise _fail(line, f"invalid verification time {at!r}")
    if plain[0] == "accept" and len(plain) == 1:
        return int(fields["leaf"]), at, True, None
    if plain[0] == "reject" and len(plain) == 2:
        return int(fields["leaf"]), at, False, RejectReason(plain[1])
    raise _fail(line, "expect verify ends with 'accept' or 'reject <reason>'")


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario script.

    Raises:
        ScenarioError: If a line references an unknown operation or entity
    """
    name: Optional[str] = None
    params = ScenarioParams()
    steps: List[Step] = []
    seen_setup = False
    snapshot_lines: Set[int] = set()
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        op, *args = content.split()
        if op not in _OPERATIONS:
            raise _fail(number, f"unknown operation {op!r}")
        if op == "name":
            if len(args) != 1:
                raise _fail(number, "name takes one word")
            name = args[0]
            continue
        if op == "params":
            if steps:
                raise _fail(number, "params must precede all steps")
            params = _parse_params(number, args)
            continue
        if op in _NEEDS_SETUP and not seen_setup:
            raise _fail(number, f"{op} before setup")
        if op == "setup":
            if seen_setup:
                raise _fail(number, "setup appears twice")
            seen_setup = True
        step = Step(number, op, tuple(args))
        _check_step(step, snapshot_lines)
        steps.append(step)
        if seen_setup and op != "expect":
            snapshot_lines.add(number)
    if name is None:
        raise ScenarioError("scenario has no name line")
    return Scenario(name, params, tuple(steps))


def builtin_names() -> List[str]:
    """Names of the scenarios shipped with the package."""
    folder = resources.files("xmssca") / "scenarios"
    return sorted(entry.name[:-4] for entry in folder.iterdir() if entry.name.endswith(".scn"))


def load_builtin(name: str) -> Scenario:
    """Load a shipped scenario by name.

    Raises:
        ScenarioError: If there is no such scenario
    """
    if name not in builtin_names():
        raise ScenarioError(f"No built-in scenario named {name!r}")
    text = (resources.files("xmssca") / "scenarios" / f"{name}.scn").read_text(encoding="utf-8")
    return parse_scenario(text)


def load_scenario(source: Union[str, Path]) -> Scenario:
    """Load a scenario from a file path or a built-in name."""
    path = Path(source)
    if path.is_file():
        return parse_scenario(path.read_text(encoding="utf-8"))
    return load_builtin(str(source))


class Simulation:
    """A CA instance living in virtual time.

    Args:
        home: CA home directory
        settings: CA settings; their time servers are simulated
        start_ms: Initial true (and wall) time
        entropy: Key-generation entropy
    """

    def __init__(self, home: Path, settings: CaSettings, start_ms: int,
                 entropy: Optional[bytes] = None):
        self.home = home
        self.settings = settings
        self.true_ms = start_ms
        self.clock = VirtualClock(start_ms)
        self.entropy = entropy or hashlib.shake_256(SIMULATOR_SEED).digest(ENTROPY_SIZE)
        servers = [SimulatedNtpServer(host, BASE_DELAY_MS * (i + 1))
                   for i, host in enumerate(settings.ntp_servers)]
        self.network = SimulatedNetwork(servers, self.advance, lambda: self.true_ms)
        self.authority = TimeAuthority([SntpSource(s.name, self.network) for s in servers], settings)
        self.ca: Optional[CertificateAuthority] = None
        self.signed: List[int] = []
        self.leaves: Dict[int, bytes] = {}
        self.crash_armed = False
        self.crashes = 0

    # ---- time ------------------------------------------------------------

    def advance(self, ms: int) -> None:
        self.clock.advance(ms)
        self.true_ms += ms

    def run_for(self, ms: int) -> None:
        """Advance ``ms`` of true time, ticking the CA at each of its wakeups."""
        end = self.true_ms + ms
        stalled = False
        while self.ca is not None:
            wake = self.ca.next_wakeup()
            if wake is None:
                break
            delta = max(0, wake - self.clock.now_ms())
            if stalled:
                delta = max(delta, _NUDGE_MS)
            if self.true_ms + delta > end:
                break
            self.advance(delta)
            before = self._progress()
            self.step()
            stalled = self._progress() == before
        self.advance(max(0, end - self.true_ms))

    def _progress(self) -> Tuple[int, Optional[Phase]]:
        if self.ca is None:
            return (len(self.signed), None)
        return (len(self.signed), self.ca.phase)

    # ---- instance lifetimes ------------------------------------------------

    def _observe(self, index: int) -> None:
        if self.crash_armed:
            self.crash_armed = False
            raise SimulatedCrash(f"crash before signing index {index}")
        self.signed.append(index)

    def _on_issue(self, leaf: LeafCertificate, secret: bytes) -> None:
        self.leaves[leaf.serial] = encode_cert(leaf)

    def _attach(self, ca: CertificateAuthority) -> CertificateAuthority:
        ca.on_issue = self._on_issue
        self.ca = ca
        return ca

    def setup(self) -> CertificateAuthority:
        ca = CertificateAuthority.create(self.home, self.settings, self.clock, self.entropy,
                                         self.authority, sign_observer=self._observe)
        self.leaves[ca.current_leaf().serial] = encode_cert(ca.current_leaf())
        return self._attach(ca)

    def start(self) -> CertificateAuthority:
        ca = CertificateAuthority.open(self.home, self.settings, self.clock, self.authority,
                                       sign_observer=self._observe)
        return self._attach(ca)

    def stop(self) -> None:
        if self.ca is not None:
            self.ca.close()
            self.ca = None

    def step(self) -> None:
        """One CA tick; a simulated crash restarts the instance on the spot."""
        if self.ca is None:
            return
        try:
            self.ca.step()
        except SimulatedCrash as e:
            self.crashes += 1
            logger.info("simulated crash: %s", e)
            self.stop()
            self.start()
            self.ca.step()

    def key_state(self) -> bytes:
        return (self.home / self.settings.key_state_file).read_bytes()


def _audit(events: Sequence[EngineEvent], signed: Sequence[int]) -> Tuple[bool, str]:
    logged: List[int] = []
    for event in events:
        if event.kind is EventKind.SETUP_COMPLETE:
            logged += [event.detail["ca_index"], event.detail["schedule_index"], event.detail["leaf"]["index"]]
        elif event.kind in (EventKind.ISSUED, EventKind.DUMMY_SIGNED):
            logged.append(event.detail["index"])
        elif event.kind is EventKind.SCHEDULE_UPDATED:
            logged.append(event.detail["signing_index"])
    problems = []
    for label, indices in (("signer", signed), ("event log", logged)):
        repeated = sorted(i for i, n in Counter(indices).items() if n > 1)
        if repeated:
            problems.append(f"{label} used indices {repeated} more than once")
    return not problems, "; ".join(problems)


class _Run:
    """Interpreter state for one scenario."""

    def __init__(self, scenario: Scenario, home: Path):
        self.scenario = scenario
        self.sim = Simulation(home, scenario.params.settings(), scenario.params.start * 1000)
        self.snapshots: Dict[int, bytes] = {}
        self.results: List[ExpectationResult] = []
        self.window_start = 0
        self.in_expect_block = False

    def events(self) -> List[EngineEvent]:
        return self.sim.ca.events.read() if self.sim.ca is not None else []

    def execute(self) -> ScenarioReport:
        try:
            for step in self.scenario.steps:
                if step.op == "expect":
                    self.in_expect_block = True
                    self.results.append(self.expect(step))
                    continue
                if self.in_expect_block:
                    self.window_start = len(self.events())
                    self.in_expect_block = False
                self.perform(step)
                if self.sim.ca is not None:
                    self.snapshots[step.line] = self.sim.key_state()
            events = tuple(self.events())
        finally:
            self.sim.stop()
        audit_ok, audit_detail = _audit(events, self.sim.signed)
        return ScenarioReport(self.scenario.name, tuple(self.results), events,
                              tuple(self.sim.signed), audit_ok, audit_detail, self.sim.crashes)

    def perform(self, step: Step) -> None:
        sim, op, args = self.sim, step.op, step.args
        if op == "setup":
            sim.setup()
        elif op == "advance":
            sim.run_for(parse_duration_ms(args[0]))
        elif op == "set_clock":
            if args[0] == "true":
                sim.clock.correct(sim.true_ms)
            elif args[0][0] in "+-":
                sim.clock.jump(parse_duration_ms(args[0]))
            else:
                sim.clock.correct(parse_time_ms(args[0]))
        elif op == "slew":
            sim.clock.slew_ms_per_s = float(args[0])
            sim.run_for(parse_duration_ms(args[1]))
            sim.clock.slew_ms_per_s = 0.0
        elif op == "crash_restart":
            sim.stop()
            sim.advance(parse_duration_ms(args[0]))
            sim.start()
        elif op == "crash_next_issuance":
            sim.crash_armed = True
            return
        elif op == "rollback_state_file":
            sim.stop()
            path = sim.home / sim.settings.key_state_file
            path.write_bytes(self.snapshots[int(args[0])])
            sim.start()
        elif op == "ntp_fault":
            self.fault(args[0], args[1])
        elif op == "admin":
            self.admin(args)
        sim.step()

    def fault(self, which: str, what: str) -> None:
        names = list(self.sim.network.servers)
        if which == "all":
            targets = names
        else:
            targets = names[int(which) - 1:int(which)]
        if not targets:
            raise ScenarioError(f"time server {which} is not configured (ntp=off?)")
        for name in targets:
            server = self.sim.network.servers[name]
            server.silent = what == "silent"
            server.offset_ms = 0 if what in ("silent", "clear") else parse_duration_ms(what)

    def admin(self, args: Sequence[str]) -> None:
        kind = DecisionKind(args[0])
        time_ms: Optional[int] = None
        validity: Optional[int] = None
        if kind in (DecisionKind.ACCEPT_TIME, DecisionKind.CORRECT_TIME):
            if args[1] == "now":
                time_ms = self.sim.clock.now_ms()
            elif args[1] == "true":
                time_ms = self.sim.true_ms
            else:
                time_ms = parse_time_ms(args[1])
        elif kind is DecisionKind.UPDATE_SCHEDULE and len(args) > 1:
            validity = int(args[1])
        assert self.sim.ca is not None
        self.sim.ca.apply_admin(AdminDecision(kind, time_ms, validity))

    def expect(self, step: Step) -> ExpectationResult:
        subject, value = step.args[0], step.args[1]
        ca = self.sim.ca
        if subject in ("event", "no_event"):
            kind = EventKind(value)
            filters = dict(arg.partition("=")[::2] for arg in step.args[2:])
            count = filters.pop("count", None)
            matching = [e for e in self.events()[self.window_start:]
                        if e.kind is kind and all(str(e.detail.get(k)) == v for k, v in filters.items())]
            if subject == "no_event":
                passed = not matching
            elif count is not None:
                passed = len(matching) == int(count)
            else:
                passed = bool(matching)
            return ExpectationResult(step.line, step.text(), passed, f"{len(matching)} matching")
        if subject == "verdict":
            actual = ca.last_verdict.status.value if ca is not None and ca.last_verdict else "none"
            return ExpectationResult(step.line, step.text(), actual == value, f"verdict {actual}")
        if subject == "phase":
            actual = ca.phase.value if ca is not None else "stopped"
            return ExpectationResult(step.line, step.text(), actual == value, f"phase {actual}")
        return self.expect_verify(step)

    def expect_verify(self, step: Step) -> ExpectationResult:
        index, at, accept, reason = _parse_verify(step.line, step.args[1:])
        leaf = self.sim.leaves.get(index)
        if leaf is None:
            return ExpectationResult(step.line, step.text(), False, f"leaf {index} was never issued")
        parsed = parse_cert(leaf)
        times = {"mid": (parsed.not_before + parsed.not_after) // 2, "now": self.sim.true_ms // 1000,
                 "nb": parsed.not_before, "na": parsed.not_after}
        now = times[at] if at in times else int(at)
        trust = load_trust_store(self.sim.home, self.sim.settings.policy())
        result = verify_leaf(trust, leaf, now)
        outcome = "accept" if result.accepted else f"reject {result.reason.value if result.reason else ''}"
        passed = result.accepted == accept and (accept or result.reason is reason)
        return ExpectationResult(step.line, step.text(), passed, f"{outcome} ({result.detail})".strip())


def run_scenario(scenario: Scenario, workdir: Union[str, Path, None] = None) -> ScenarioReport:
    """Run a scenario to completion.

    Args:
        scenario: The parsed scenario
        workdir: Directory for the CA home; a temporary one when None

    Returns:
        The report; ``report.passed`` covers all expectations and the audit
    """
    logger.info("running scenario %s", scenario.name)
    if workdir is not None:
        return _Run(scenario, Path(workdir)).execute()
    with tempfile.TemporaryDirectory(prefix="xmssca-") as tmp:
        return _Run(scenario, Path(tmp) / "ca").execute()


def run_virtual(home: Union[str, Path], settings: CaSettings, duration_ms: int,
                start_ms: int, entropy: Optional[bytes] = None) -> List[EngineEvent]:
    """Run a CA over honest simulated time servers for ``duration_ms`` of virtual time.

    Sets the CA up when ``home`` is empty; otherwise continues it.

    Returns:
        The events produced during the run
    """
    home = Path(home)
    sim = Simulation(home, settings, start_ms, entropy)
    fresh = not home.exists() or not any(home.iterdir())
    try:
        ca = sim.setup() if fresh else sim.start()
        before = 0 if fresh else len(ca.events.read())
        sim.step()
        sim.run_for(duration_ms)
        produced = sim.ca.events.read()[before:] if sim.ca is not None else []
    finally:
        sim.stop()
    return produced
