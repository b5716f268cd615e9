"""
Output formatters for CA artifacts and reports.

This module renders the objects the command line shows:
- Schedules
- Certificates (field/value/size table)
- Event lists
- Scenario reports
- Handshake reports
"""

import json
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Sequence

from .certkit import Certificate, certificate_fields
from .handshake import HandshakeReport
from .schedule import Schedule
from .simulator import ScenarioReport
from .types import EngineEvent, Format, VerificationResult
from .utils import format_posix


def schedule_to_dict(schedule: Schedule) -> Dict[str, Any]:
    return {
        "creation_date": schedule.creation_date,
        "validity_minutes": schedule.validity_minutes,
        "start_index": schedule.start_index,
        "max_index": schedule.max_index,
        "signing_index": schedule.signing_index,
        "parameter_set": schedule.signature.params.name,
    }


def event_to_dict(event: EngineEvent) -> Dict[str, Any]:
    return {"kind": event.kind.value, "at": event.at, "detail": event.detail}


def _detail_text(detail: Dict[str, Any]) -> str:
    return " ".join(f"{key}={json.dumps(value, sort_keys=True)}" for key, value in sorted(detail.items()))


class OutputFormatter(ABC):
    """Abstract base class for output formatters."""

    @abstractmethod
    def schedule(self, schedule: Schedule) -> str:
        pass

    @abstractmethod
    def certificate(self, cert: Certificate) -> str:
        pass

    @abstractmethod
    def events(self, events: Sequence[EngineEvent]) -> str:
        pass

    @abstractmethod
    def verification(self, result: VerificationResult) -> str:
        pass

    @abstractmethod
    def scenario(self, report: ScenarioReport) -> str:
        pass

    @abstractmethod
    def handshake(self, report: HandshakeReport) -> str:
        pass


class PlainTextFormatter(OutputFormatter):
    """Plain text output formatter."""

    def schedule(self, schedule: Schedule) -> str:
        data = schedule_to_dict(schedule)
        lines = [f"{key:<18} {value}" for key, value in data.items()]
        lines[0] += f" ({format_posix(schedule.creation_date)})"
        return "\n".join(lines)

    def certificate(self, cert: Certificate) -> str:
        rows = certificate_fields(cert)
        width = max(len(name) for name, _, _ in rows)
        lines = [f"{'Field':<{width}}  {'Value':<32} Size (B)"]
        lines += [f"{name:<{width}}  {value:<32} {size}" for name, value, size in rows]
        return "\n".join(lines)

    def events(self, events: Sequence[EngineEvent]) -> str:
        if not events:
            return "(no events)"
        return "\n".join(f"{format_posix(e.at)}  {e.kind.value:<16} {_detail_text(e.detail)}".rstrip()
                         for e in events)

    def verification(self, result: VerificationResult) -> str:
        if result.accepted:
            return "accept"
        reason = result.reason.value if result.reason else "unknown"
        return f"reject {reason}: {result.detail}" if result.detail else f"reject {reason}"

    def scenario(self, report: ScenarioReport) -> str:
        lines = [f"scenario {report.name}: {'PASS' if report.passed else 'FAIL'}"]
        for result in report.expectations:
            mark = "ok  " if result.passed else "FAIL"
            lines.append(f"  {mark} line {result.line}: {result.text}  [{result.detail}]")
        audit = "no index signed twice" if report.audit_ok else report.audit_detail
        lines.append(f"  audit: {audit} ({len(report.signed_indices)} signatures, {report.crashes} crashes)")
        return "\n".join(lines)

    def handshake(self, report: HandshakeReport) -> str:
        lines = [
            f"accepted {report.accepted}/{report.rounds}",
            f"bytes on wire per authentication: {report.bytes_on_wire} "
            f"(leaf {report.leaf_bytes} incl. {report.xmss_parameter_set} signature "
            f"{report.xmss_signature_bytes}, classical signature {report.classical_signature_bytes})",
        ]
        for reason, count in report.rejections.items():
            lines.append(f"rejected {count}: {reason}")
        lines.append("signature sizes if signed per handshake instead:")
        lines += [f"  {name:<14} {size} B" for name, size in report.comparison.items()]
        return "\n".join(lines)


class JSONFormatter(OutputFormatter):
    """JSON output formatter."""

    def _dump(self, data: Any) -> str:
        return json.dumps(data, indent=2, sort_keys=True)

    def schedule(self, schedule: Schedule) -> str:
        return self._dump(schedule_to_dict(schedule))

    def certificate(self, cert: Certificate) -> str:
        rows: List[Dict[str, Any]] = [{"field": name, "value": value, "size": size}
                                      for name, value, size in certificate_fields(cert)]
        return self._dump(rows)

    def events(self, events: Sequence[EngineEvent]) -> str:
        return self._dump([event_to_dict(e) for e in events])

    def verification(self, result: VerificationResult) -> str:
        return self._dump({
            "accepted": result.accepted,
            "reason": result.reason.value if result.reason else None,
            "detail": result.detail,
        })

    def scenario(self, report: ScenarioReport) -> str:
        return self._dump({
            "name": report.name,
            "passed": report.passed,
            "expectations": [
                {"line": r.line, "text": r.text, "passed": r.passed, "detail": r.detail}
                for r in report.expectations
            ],
            "audit_ok": report.audit_ok,
            "audit_detail": report.audit_detail,
            "signed_indices": list(report.signed_indices),
            "crashes": report.crashes,
            "events": [event_to_dict(e) for e in report.events],
        })

    def handshake(self, report: HandshakeReport) -> str:
        return self._dump({
            "rounds": report.rounds,
            "accepted": report.accepted,
            "rejections": report.rejections,
            "bytes_on_wire": report.bytes_on_wire,
            "leaf_bytes": report.leaf_bytes,
            "classical_signature_bytes": report.classical_signature_bytes,
            "xmss_signature_bytes": report.xmss_signature_bytes,
            "xmss_parameter_set": report.xmss_parameter_set,
            "comparison": report.comparison,
        })


def get_formatter(output_format: Format) -> OutputFormatter:
    """Get the appropriate formatter for the specified output format."""
    formatters = {
        Format.PLAIN: PlainTextFormatter(),
        Format.JSON: JSONFormatter(),
    }
    return formatters[output_format]
