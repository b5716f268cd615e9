import pytest

from xmssca.api import CertificateAuthority, dummy_message
from xmssca.config import CA_CERT_FILE, CaSettings, SCHEDULE_DIR, SCHEDULE_FILE
from xmssca.exceptions import ConfigError, EngineStateError, StoreLockedError
from xmssca.types import AdminDecision, DecisionKind, EventKind, Phase, TickKind

from conftest import INTERVAL, T0, TOY_ENTROPY, advance_to


def instant(index):
    return T0 + (index - 2) * INTERVAL - 120


def kinds(ca):
    return [event.kind for event in ca.events.read()]


def test_setup_signs_with_the_first_three_indices(toy_ca):
    assert toy_ca.ca_certificate.xmss_index == 0
    assert toy_ca.schedule.signing_index == 1
    assert toy_ca.schedule.start_index == 2
    assert toy_ca.schedule.max_index == 16
    leaf = toy_ca.current_leaf()
    assert leaf.serial == 2
    assert leaf.not_before == T0
    assert toy_ca.store.next_index == 3
    assert toy_ca.phase is Phase.RUNNING
    assert kinds(toy_ca) == [EventKind.SETUP_COMPLETE]
    assert toy_ca.next_wakeup() == instant(3) * 1000


def test_setup_needs_an_empty_home(tmp_path, toy_settings, clock):
    home = tmp_path / "ca"
    home.mkdir()
    (home / "stray").write_text("x")
    with pytest.raises(EngineStateError):
        CertificateAuthority.create(home, toy_settings, clock, TOY_ENTROPY)


def test_issue_at_the_scheduled_instant(toy_ca, clock):
    issued = []
    toy_ca.on_issue = lambda leaf, secret: issued.append(leaf.serial)
    advance_to(toy_ca, clock, instant(3) - 1)
    assert toy_ca.store.next_index == 3
    advance_to(toy_ca, clock, instant(3))
    assert issued == [3]
    leaf = toy_ca.current_leaf()
    assert leaf.serial == 3
    assert leaf.not_before == T0 + INTERVAL
    assert toy_ca.next_wakeup() == instant(4) * 1000
    assert kinds(toy_ca)[-1] is EventKind.ISSUED


def test_clock_jump_halts_until_corrected(toy_ca, clock):
    advance_to(toy_ca, clock, instant(3))
    clock.jump(2 * 86400 * 1000)
    action = toy_ca.step()
    assert action.kind is TickKind.HALT
    assert toy_ca.phase is Phase.HALTED
    assert toy_ca.next_wakeup() is None
    assert len(toy_ca.pending_alerts()) == 1

    events = toy_ca.apply_admin(AdminDecision(DecisionKind.CORRECT_TIME, instant(3) * 1000))
    assert [e.kind for e in events] == [EventKind.ADMIN_DECISION, EventKind.RESUMED]
    assert toy_ca.phase is Phase.RUNNING
    assert toy_ca.pending_alerts() == []
    advance_to(toy_ca, clock, instant(4))
    assert toy_ca.current_leaf().serial == 4


def test_decisions_for_a_halted_ca_are_refused_while_running(toy_ca):
    with pytest.raises(EngineStateError):
        toy_ca.apply_admin(AdminDecision(DecisionKind.ACCEPT_TIME))
    with pytest.raises(EngineStateError):
        toy_ca.apply_admin(AdminDecision(DecisionKind.EXECUTE_PLAN))


def test_restart_in_schedule_resumes(toy_ca, toy_settings, clock):
    toy_ca.close()
    clock.advance((instant(3) - T0) * 1000)
    with CertificateAuthority.open(toy_ca.home, toy_settings, clock) as ca:
        assert ca.step().kind is TickKind.ISSUE
        assert ca.current_leaf().serial == 3


def test_restart_after_downtime_needs_dummies(toy_ca, toy_settings, clock):
    toy_ca.close()
    clock.advance((instant(5) - T0) * 1000)
    with CertificateAuthority.open(toy_ca.home, toy_settings, clock) as ca:
        action = ca.step()
        assert action.kind is TickKind.HALT
        assert action.report.startswith("recovery needed: dummy_sign(2)")
        events = ca.apply_admin(AdminDecision(DecisionKind.ACCEPT_TIME))
        assert [e.detail.get("index") for e in events if e.kind is EventKind.DUMMY_SIGNED] == [3, 4]
        assert ca.phase is Phase.RUNNING
        assert ca.step().kind is TickKind.ISSUE
        assert ca.current_leaf().serial == 5


def test_accepting_a_far_off_time_only_alerts(toy_ca, clock):
    advance_to(toy_ca, clock, instant(3))
    clock.jump(-86400 * 1000)
    toy_ca.step()
    events = toy_ca.apply_admin(AdminDecision(DecisionKind.ACCEPT_TIME, instant(3) * 1000))
    assert [e.kind for e in events] == [EventKind.ADMIN_DECISION, EventKind.ADMIN_ALERT]
    assert toy_ca.phase is Phase.HALTED


def test_schedule_update(toy_ca, clock):
    advance_to(toy_ca, clock, T0 + 3600)
    events = toy_ca.apply_admin(AdminDecision(DecisionKind.UPDATE_SCHEDULE, validity_minutes=120))
    updated = [e for e in events if e.kind is EventKind.SCHEDULE_UPDATED][0]
    assert updated.detail["signing_index"] == 3
    assert updated.detail["start_index"] == 4
    assert toy_ca.schedule.validity_minutes == 120
    assert toy_ca.schedule.creation_date == T0 + 3600
    assert [p.name for p in toy_ca.schedule_history()] == ["1.sched", "3.sched"]
    assert toy_ca.phase is Phase.RUNNING


def test_exhaustion(toy_ca, clock):
    for index in range(3, 16):
        advance_to(toy_ca, clock, instant(index))
    assert toy_ca.current_leaf().serial == 15
    assert toy_ca.store.remaining_signatures() == 0
    assert toy_ca.phase is Phase.RUNNING
    advance_to(toy_ca, clock, instant(16))
    assert toy_ca.phase is Phase.EXHAUSTED
    assert toy_ca.next_wakeup() is None


def test_second_instance_is_locked_out(toy_ca, toy_settings, clock):
    with pytest.raises(StoreLockedError):
        CertificateAuthority.open(toy_ca.home, toy_settings, clock)


def test_toy_key_needs_toy_settings(toy_ca, clock):
    toy_ca.close()
    with pytest.raises(ConfigError):
        CertificateAuthority.open(toy_ca.home, CaSettings(ntp_servers=()), clock)
    with CertificateAuthority.open(toy_ca.home, clock=clock) as ca:
        assert ca.settings.allow_toy_params


def test_trust_bundle_export(toy_ca, tmp_path):
    dest = toy_ca.export_trust_bundle(tmp_path / "bundle")
    assert (dest / CA_CERT_FILE).read_bytes() == (toy_ca.home / CA_CERT_FILE).read_bytes()
    assert (dest / SCHEDULE_FILE).exists()
    assert [p.name for p in (dest / SCHEDULE_DIR).iterdir()] == ["1.sched"]


def test_state_export_retires_the_instance(toy_ca, toy_settings, clock, tmp_path):
    occupied = tmp_path / "occupied"
    occupied.mkdir()
    (occupied / "x").write_text("x")
    with pytest.raises(EngineStateError):
        toy_ca.export_state(occupied)

    dest = toy_ca.export_state(tmp_path / "moved")
    assert toy_ca.store.closed
    clock.advance((instant(3) - T0) * 1000)
    with CertificateAuthority.open(dest, toy_settings, clock) as ca:
        assert ca.step().kind is TickKind.ISSUE
        assert ca.current_leaf().serial == 3


def test_dummy_message():
    assert dummy_message(5) == b"DUMMY\x00\x00\x00\x05"
