import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from ptxlink import frames
from ptxlink.jumphost import (
    AuditEntry,
    AuditLog,
    AuthRejected,
    JumpHost,
    Operator,
    OperatorRegistry,
    PolicyViolation,
    SessionExpired,
    verify_audit,
)
from ptxlink.sim import SimClock


def make_host(clock=None, ttl_us=900_000_000):
    registry = OperatorRegistry([
        Operator("alice", "alice-token", frozenset({frames.COMMAND})),
        Operator("viewer", "viewer-token", frozenset({frames.TELEMETRY})),
        Operator("gone", "expired-token", frozenset({frames.COMMAND}), expires_at_us=100),
    ])
    clock = clock or SimClock()
    return JumpHost(registry, clock, session_ttl_us=ttl_us), clock


def command_frame(host_session, cmd_id=1, key=None, session_id=None):
    cmd = frames.CommandMessage("walk", vx=0.5, duration_ms=100)
    payload = frames.pack_command(
        cmd,
        host_session.id if session_id is None else session_id,
        key if key is not None else host_session.key,
        cmd_id,
    )
    return frames.Frame(frames.COMMAND, cmd_id, 0, payload)


# --- authentication ----------------------------------------------------------


def test_valid_token_issues_session_and_audits():
    host, clock = make_host()
    session = host.authenticate("alice-token")
    assert session.principal == "alice"
    assert session.expires_at_us > session.issued_at_us
    assert host.audit.entries[-1].event == "auth_ok"


def test_unknown_token_rejected_and_audited():
    host, _ = make_host()
    with pytest.raises(AuthRejected):
        host.authenticate("nope")
    assert host.audit.entries[-1].event == "auth_fail"
    assert host.audit.entries[-1].session == "unauthenticated"


def test_expired_registry_entry_rejected():
    host, clock = make_host()
    clock.now = 1000
    with pytest.raises(AuthRejected):
        host.authenticate("expired-token")


# --- command tunneling ----------------------------------------------------------


def test_valid_session_forwards_command():
    host, _ = make_host()
    session = host.authenticate("alice-token")
    got_session, cmd_id, cmd = host.tunnel_command(command_frame(session, cmd_id=7))
    assert got_session.id == session.id
    assert cmd_id == 7
    assert cmd.gait == "walk"
    assert host.audit.entries[-1].event == "cmd_forwarded"
    assert "cmd_id=7" in host.audit.entries[-1].detail


def test_expired_session_rejected():
    host, clock = make_host(ttl_us=1_000)
    session = host.authenticate("alice-token")
    clock.now = 2_000
    with pytest.raises(SessionExpired):
        host.tunnel_command(command_frame(session))
    assert host.audit.entries[-1].event == "session_expired"


def test_session_without_command_privilege_rejected():
    host, _ = make_host()
    session = host.authenticate("viewer-token")
    with pytest.raises(PolicyViolation):
        host.tunnel_command(command_frame(session))
    assert host.audit.entries[-1].event == "cmd_rejected"


def test_unauthenticated_command_dropped_and_audited():
    host, _ = make_host()
    session = host.authenticate("alice-token")
    bogus = command_frame(session, session_id=0xDEAD, key=b"\x00" * 16)
    with pytest.raises(AuthRejected):
        host.tunnel_command(bogus)
    entry = host.audit.entries[-1]
    assert entry.event == "cmd_rejected"
    assert entry.session == "unauthenticated"
    assert "unauthenticated command" in entry.detail


def test_bad_integrity_tag_rejected():
    host, _ = make_host()
    session = host.authenticate("alice-token")
    with pytest.raises(PolicyViolation):
        host.tunnel_command(command_frame(session, key=b"f" * 16))
    assert "bad integrity tag" in host.audit.entries[-1].detail


def test_crc_failed_frame_never_tunnelled():
    host, _ = make_host()
    frame = frames.Frame(frames.COMMAND, 0, 0, b"junk", crc_failed=True)
    with pytest.raises(PolicyViolation):
        host.tunnel_command(frame)


# --- audit chain ----------------------------------------------------------------


def test_empty_log_intact():
    assert verify_audit([]) == (True, None)


def test_untouched_log_intact():
    log = AuditLog()
    for i in range(10):
        log.append(i, "1", "auth_ok", f"entry {i}")
    assert verify_audit(log.entries) == (True, None)


def test_mutated_entry_detected_at_exact_position():
    log = AuditLog()
    for i in range(10):
        log.append(i * 10, "1", "cmd_forwarded", f"cmd_id={i}")
    entries = list(log.entries)
    entries[5] = dataclasses.replace(entries[5], detail="cmd_id=999")
    ok, broken_at = verify_audit(entries)
    assert (ok, broken_at) == (False, 5)


def test_dropped_entry_detected():
    log = AuditLog()
    for i in range(5):
        log.append(i, "1", "auth_ok", str(i))
    entries = log.entries[:2] + log.entries[3:]
    ok, broken_at = verify_audit(entries)
    assert not ok and broken_at == 2


@given(index=st.integers(min_value=0, max_value=7),
       field=st.sampled_from(["timestamp_us", "session", "event", "detail"]),
       )
@settings(max_examples=60)
def test_any_field_mutation_breaks_chain(index, field):
    log = AuditLog()
    for i in range(8):
        log.append(i * 3, str(i % 2 + 1), "cmd_forwarded", f"cmd_id={i}")
    entries = list(log.entries)
    if field == "timestamp_us":
        mutated = dataclasses.replace(entries[index], timestamp_us=entries[index].timestamp_us + 1)
    elif field == "session":
        mutated = dataclasses.replace(entries[index], session="9999")
    elif field == "event":
        mutated = dataclasses.replace(entries[index], event="auth_ok")
    else:
        mutated = dataclasses.replace(entries[index], detail="tampered")
    entries[index] = mutated
    ok, broken_at = verify_audit(entries)
    assert not ok and broken_at == index


def test_audit_export_round_trip(tmp_path):
    log = AuditLog()
    log.append(1, "1", "auth_ok", "alice")
    log.append(2, "1", "cmd_forwarded", "cmd_id=1")
    path = tmp_path / "audit.jsonl"
    log.write_jsonl(str(path))
    loaded = AuditLog.load_jsonl(str(path))
    assert loaded == log.entries
    assert verify_audit(loaded) == (True, None)
