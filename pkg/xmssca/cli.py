"""Command-line interface for the xmssca toolkit."""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from . import __version__
from .api import CertificateAuthority
from .config import (
    CONFIG_FILE,
    DECISIONS_FILE,
    EVENT_LOG_FILE,
    SCHEDULE_FILE,
    TOY_HEIGHT,
    CaSettings,
    load_settings,
)
from .engine import AdminInbox, EventLog, pending_alerts
from .exceptions import XmssCaError
from .handshake import run_loopback_handshake
from .keystore import KeyStore
from .output import OutputFormatter, get_formatter
from .schedule import decode_schedule
from .simulator import builtin_names, load_scenario, run_scenario, run_virtual
from .timeauth import TimeAuthority
from .types import AdminDecision, DecisionKind, Format, Phase
from .utils import parse_duration_ms, parse_time_ms
from .verifier import load_trust_store, verify_leaf
from .xmss import XmssParams

logger = logging.getLogger(__name__)

# Longest sleep of the daemon loop between inbox checks (s)
POLL_SECONDS = 5.0

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


def _home_settings(args: argparse.Namespace) -> CaSettings:
    if args.config:
        return load_settings(args.config)
    config = Path(args.home) / CONFIG_FILE
    return load_settings(config) if config.exists() else CaSettings()


def _open(args: argparse.Namespace) -> CertificateAuthority:
    settings = _home_settings(args)
    return CertificateAuthority.open(args.home, settings,
                                     time_authority=TimeAuthority.from_settings(settings))


def cmd_keygen(args: argparse.Namespace, out: OutputFormatter) -> int:
    params = XmssParams(args.height)
    if args.height == TOY_HEIGHT and not args.allow_toy:
        raise XmssCaError("Tree height 4 needs --allow-toy")
    with KeyStore.create(args.out, params) as store:
        key = store.public_key.to_bytes()
    print(f"{params.name}: {params.leaves} signatures of {params.signature_size} B")
    print(f"public key ({len(key)} B): {key.hex()}")
    return EXIT_OK


def cmd_setup(args: argparse.Namespace, out: OutputFormatter) -> int:
    settings = load_settings(args.config) if args.config else CaSettings()
    with CertificateAuthority.create(args.home, settings,
                                     time_authority=TimeAuthority.from_settings(settings)) as ca:
        print(out.certificate(ca.ca_certificate))
        print(out.schedule(ca.schedule))
        print(out.certificate(ca.current_leaf()))
    return EXIT_OK


def cmd_issue(args: argparse.Namespace, out: OutputFormatter) -> int:
    with _open(args) as ca:
        before = len(ca.events.read())
        ca.process_inbox()
        ca.step()
        print(out.events(ca.events.read()[before:]))
        return EXIT_OK if ca.phase is Phase.RUNNING else EXIT_FAILED


def cmd_verify(args: argparse.Namespace, out: OutputFormatter) -> int:
    settings = load_settings(args.config) if args.config else CaSettings()
    trust = load_trust_store(args.trust, settings.policy())
    now = parse_time_ms(args.at) // 1000 if args.at else int(time.time())
    result = verify_leaf(trust, Path(args.leaf).read_bytes(), now)
    print(out.verification(result))
    return EXIT_OK if result.accepted else EXIT_FAILED


def cmd_schedule(args: argparse.Namespace, out: OutputFormatter) -> int:
    if args.action == "show":
        settings = _home_settings(args)
        path = Path(args.file) if args.file else Path(args.home) / SCHEDULE_FILE
        print(out.schedule(decode_schedule(path.read_bytes(), settings.policy())))
        return EXIT_OK
    with _open(args) as ca:
        events = ca.apply_admin(AdminDecision(DecisionKind.UPDATE_SCHEDULE, validity_minutes=args.validity))
        print(out.events(events))
        print(out.schedule(ca.schedule))
    return EXIT_OK


def cmd_run(args: argparse.Namespace, out: OutputFormatter) -> int:
    if args.virtual:
        settings = load_settings(args.config) if args.config else _home_settings(args)
        start = parse_time_ms(args.start) if args.start else int(time.time()) * 1000
        events = run_virtual(args.home, settings, parse_duration_ms(args.duration), start)
        print(out.events(events))
        return EXIT_OK
    with _open(args) as ca:
        logger.info("running CA in %s; interrupt to stop", args.home)
        try:
            while True:
                ca.process_inbox()
                ca.step()
                wake = ca.next_wakeup()
                pause = POLL_SECONDS if wake is None else (wake - ca.clock.now_ms()) / 1000
                time.sleep(min(POLL_SECONDS, max(0.0, pause)))
        except KeyboardInterrupt:
            logger.info("stopped")
    return EXIT_OK


def cmd_admin(args: argparse.Namespace, out: OutputFormatter) -> int:
    home = Path(args.home)
    if args.action == "alerts":
        alerts = pending_alerts(EventLog(home / EVENT_LOG_FILE).read())
        print(out.events(alerts))
        return EXIT_FAILED if alerts else EXIT_OK
    time_ms = parse_time_ms(args.time) if args.time else None
    decision = AdminDecision(DecisionKind(args.decision), time_ms, args.validity)
    AdminInbox(home / DECISIONS_FILE).submit(decision)
    print(f"queued {decision.kind.value}")
    return EXIT_OK


def cmd_scenario(args: argparse.Namespace, out: OutputFormatter) -> int:
    if args.action == "list":
        print("\n".join(builtin_names()))
        return EXIT_OK
    names = builtin_names() if args.all else args.scenarios
    if not names:
        raise XmssCaError("Name a scenario (file or built-in) or pass --all")
    status = EXIT_OK
    for name in names:
        report = run_scenario(load_scenario(name))
        print(out.scenario(report))
        if not report.passed:
            status = EXIT_FAILED
    return status


def cmd_handshake(args: argparse.Namespace, out: OutputFormatter) -> int:
    config = Path(args.initiator) / CONFIG_FILE
    settings = load_settings(args.config or (config if config.exists() else None))
    now = parse_time_ms(args.at) // 1000 if args.at else None
    report = run_loopback_handshake(args.initiator, args.responder, args.rounds, now, settings.policy())
    print(out.handshake(report))
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_export(args: argparse.Namespace, out: OutputFormatter) -> int:
    with _open(args) as ca:
        if args.what == "bundle":
            dest = ca.export_trust_bundle(args.dest)
        else:
            dest = ca.export_state(args.dest)
    print(f"exported {args.what} to {dest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xmssca", description="XMSS certificate authority toolkit")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    parser.add_argument("--format", choices=[f.value for f in Format], default=Format.PLAIN.value)
    parser.add_argument("-c", "--config", help="JSON settings file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a standalone XMSS key-state file")
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--allow-toy", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("setup", help="create a CA in an empty home directory")
    p.add_argument("--home", required=True)
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("issue", help="apply queued decisions and tick once")
    p.add_argument("--home", required=True)
    p.set_defaults(func=cmd_issue)

    p = sub.add_parser("verify", help="validate a leaf against a trust bundle")
    p.add_argument("--trust", required=True, help="directory with ca.der and schedules")
    p.add_argument("--leaf", required=True)
    p.add_argument("--at", help="verification time (POSIX seconds or ISO-8601 UTC)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("schedule", help="show or update the schedule")
    p.add_argument("action", choices=["show", "update"])
    p.add_argument("--home", default=".")
    p.add_argument("--file", help="schedule file to show instead of the home's")
    p.add_argument("--validity", type=int, help="new validity in minutes")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("run", help="issuance loop on the real or a virtual clock")
    p.add_argument("--home", required=True)
    p.add_argument("--virtual", action="store_true")
    p.add_argument("--duration", default="1d")
    p.add_argument("--start", help="virtual start time")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("admin", help="show alerts or queue a decision")
    p.add_argument("action", choices=["alerts", "decide"])
    p.add_argument("decision", nargs="?", choices=[d.value for d in DecisionKind])
    p.add_argument("--home", required=True)
    p.add_argument("--time", help="time for accept_time/correct_time")
    p.add_argument("--validity", type=int)
    p.set_defaults(func=cmd_admin)

    p = sub.add_parser("scenario", help="run simulator scenarios")
    p.add_argument("action", choices=["run", "list"])
    p.add_argument("scenarios", nargs="*", help="scenario files or built-in names")
    p.add_argument("--all", action="store_true", help="run every built-in scenario")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("handshake", help="loopback handshake authentication")
    p.add_argument("--initiator", required=True, help="CA home with the current leaf")
    p.add_argument("--responder", required=True, help="trust bundle directory")
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--at", help="verification time")
    p.set_defaults(func=cmd_handshake)

    p = sub.add_parser("export", help="export the trust bundle or the whole CA state")
    p.add_argument("what", choices=["bundle", "state"])
    p.add_argument("--home", required=True)
    p.add_argument("--dest", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "admin" and args.action == "decide" and args.decision is None:
        parser.error("admin decide needs a decision")
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    out = get_formatter(Format(args.format))
    try:
        return args.func(args, out)
    except XmssCaError as e:
        logger.error("%s", e)
        return EXIT_ERROR
    except OSError as e:
        logger.error("%s", e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
