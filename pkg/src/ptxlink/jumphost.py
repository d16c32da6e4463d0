"""Access-control point between shore and the platform zone.

All teleoperation traffic tunnels through here: operators authenticate with
registry tokens to obtain time-limited sessions, command frames are policy
checked and forwarded to the robot only under a valid session, and every
decision lands in a hash-chained audit log where any later mutation breaks
the chain.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

from . import frames
from .sim import SimClock

DEFAULT_SESSION_TTL_US = 15 * 60 * 1_000_000

AUTH_OK = "auth_ok"
AUTH_FAIL = "auth_fail"
CMD_FORWARDED = "cmd_forwarded"
CMD_REJECTED = "cmd_rejected"
SESSION_EXPIRED = "session_expired"

_GENESIS = hashlib.sha256(b"ptxlink-audit-v1").hexdigest()


class AuthRejected(Exception):
    pass


class SessionExpired(Exception):
    pass


class PolicyViolation(Exception):
    pass


@dataclass(frozen=True)
class Operator:
    principal: str
    token: str
    allowed_ops: frozenset[int]
    expires_at_us: int | None = None  # registry entry expiry


class OperatorRegistry:
    def __init__(self, operators: list[Operator]) -> None:
        self._by_token = {op.token: op for op in operators}

    @classmethod
    def from_file(cls, path: str) -> "OperatorRegistry":
        with open(path) as fh:
            items = json.load(fh)
        return cls([
            Operator(
                principal=o["principal"],
                token=o["token"],
                allowed_ops=frozenset(
                    getattr(frames, name) for name in o.get("allowed_ops", ["COMMAND"])
                ),
                expires_at_us=o.get("expires_at_us"),
            )
            for o in items
        ])

    def lookup(self, token: str) -> Operator | None:
        return self._by_token.get(token)


@dataclass(frozen=True)
class Session:
    id: int
    principal: str
    issued_at_us: int
    expires_at_us: int
    allowed_ops: frozenset[int]
    key: bytes

    def valid_at(self, now_us: int) -> bool:
        return now_us < self.expires_at_us


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    timestamp_us: int
    session: str  # session id as text, or "unauthenticated"
    event: str
    detail: str
    digest: str

    def signable(self) -> bytes:
        return json.dumps(
            {"seq": self.seq, "timestamp_us": self.timestamp_us, "session": self.session,
             "event": self.event, "detail": self.detail},
            sort_keys=True,
        ).encode()


class AuditLog:
    """Hash-chained, single-writer audit trail."""

    def __init__(self) -> None:
        self.entries: list[AuditEntry] = []

    def append(self, timestamp_us: int, session: str, event: str, detail: str = "") -> AuditEntry:
        prev = self.entries[-1].digest if self.entries else _GENESIS
        partial = AuditEntry(len(self.entries), timestamp_us, session, event, detail, "")
        digest = hashlib.sha256(bytes.fromhex(prev) + partial.signable()).hexdigest()
        entry = AuditEntry(partial.seq, timestamp_us, session, event, detail, digest)
        self.entries.append(entry)
        return entry

    def write_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps({
                    "seq": e.seq, "timestamp_us": e.timestamp_us, "session": e.session,
                    "event": e.event, "detail": e.detail, "digest": e.digest,
                }, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path: str) -> list[AuditEntry]:
        entries = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    entries.append(AuditEntry(d["seq"], d["timestamp_us"], d["session"],
                                              d["event"], d["detail"], d["digest"]))
        return entries


def verify_audit(entries: list[AuditEntry]) -> tuple[bool, int | None]:
    """Recompute the hash chain; returns (intact, first broken seq)."""
    prev = _GENESIS
    for i, entry in enumerate(entries):
        if entry.seq != i:
            return False, i
        expected = hashlib.sha256(bytes.fromhex(prev) + entry.signable()).hexdigest()
        if expected != entry.digest:
            return False, i
        prev = entry.digest
    return True, None


class JumpHost:
    """Session issuance and command tunneling with full auditing."""

    def __init__(
        self,
        registry: OperatorRegistry,
        clock: SimClock,
        audit: AuditLog | None = None,
        session_ttl_us: int = DEFAULT_SESSION_TTL_US,
    ) -> None:
        self.registry = registry
        self.clock = clock
        self.audit = audit or AuditLog()
        self.session_ttl_us = session_ttl_us
        self.sessions: dict[int, Session] = {}
        self._session_ids = itertools.count(1)

    def authenticate(self, token: str) -> Session:
        now = self.clock.now
        operator = self.registry.lookup(token)
        if operator is None:
            self.audit.append(now, "unauthenticated", AUTH_FAIL, "unknown token")
            raise AuthRejected("unknown token")
        if operator.expires_at_us is not None and now >= operator.expires_at_us:
            self.audit.append(now, "unauthenticated", AUTH_FAIL,
                              f"registry entry expired for {operator.principal}")
            raise AuthRejected("registry entry expired")
        session_id = next(self._session_ids)
        key = hashlib.sha256(
            f"{token}|{session_id}|{now}".encode()
        ).digest()[:16]
        session = Session(
            id=session_id,
            principal=operator.principal,
            issued_at_us=now,
            expires_at_us=now + self.session_ttl_us,
            allowed_ops=operator.allowed_ops,
            key=key,
        )
        self.sessions[session_id] = session
        self.audit.append(now, str(session_id), AUTH_OK, operator.principal)
        return session

    def tunnel_command(self, frame: frames.Frame) -> tuple[Session, int, frames.CommandMessage]:
        """Policy-check one COMMAND frame. Returns (session, cmd_id, command)
        when forwarding is allowed; raises (and audits) otherwise."""
        now = self.clock.now
        if frame.crc_failed:
            self.audit.append(now, "unauthenticated", CMD_REJECTED, "crc failed")
            raise PolicyViolation("frame failed integrity check")
        try:
            session_id, cmd_id, cmd, tag, body = frames.unpack_command(frame.payload)
        except frames.CommandInvalid as exc:
            self.audit.append(now, "unauthenticated", CMD_REJECTED, f"malformed command: {exc}")
            raise PolicyViolation(f"malformed command: {exc}") from exc

        session = self.sessions.get(session_id)
        if session is None:
            self.audit.append(now, "unauthenticated", CMD_REJECTED,
                              f"unauthenticated command cmd_id={cmd_id}")
            raise AuthRejected("unauthenticated command")
        if not session.valid_at(now):
            self.audit.append(now, str(session_id), SESSION_EXPIRED,
                              f"session expired cmd_id={cmd_id}")
            raise SessionExpired(f"session {session_id} expired")
        if frames.COMMAND not in session.allowed_ops:
            self.audit.append(now, str(session_id), CMD_REJECTED,
                              f"COMMAND not in allowed_ops cmd_id={cmd_id}")
            raise PolicyViolation("COMMAND not permitted for this session")
        if frames.command_tag(session.key, body) != tag:
            self.audit.append(now, str(session_id), CMD_REJECTED,
                              f"bad integrity tag cmd_id={cmd_id}")
            raise PolicyViolation("command integrity tag mismatch")

        self.audit.append(now, str(session_id), CMD_FORWARDED, f"cmd_id={cmd_id}")
        return session, cmd_id, cmd
