"""Binary wire format shared by the emulated links and the socket transport.

Layout (big-endian), normative and bit-exact:

    offset  size  field
    0       4     magic "PTX1"
    4       1     version (1)
    5       1     msg_type
    6       2     flags (bit0 retransmission, bit1 final chunk of a message)
    8       4     seq
    12      8     timestamp_us (send time)
    20      4     payload_len
    24      n     payload
    24+n    4     crc32 (IEEE) over header + payload

A CRC mismatch marks the frame "incorrectly received"; decode still returns
the frame so error-rate accounting can count it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

MAGIC = b"PTX1"
VERSION = 1

TELEMETRY = 1
COMMAND = 2
ACK = 3
AUTH = 4
METRIC = 5

MSG_TYPES = (TELEMETRY, COMMAND, ACK, AUTH, METRIC)
MSG_NAMES = {TELEMETRY: "TELEMETRY", COMMAND: "COMMAND", ACK: "ACK", AUTH: "AUTH", METRIC: "METRIC"}

FLAG_RETRANSMIT = 0x0001
FLAG_FINAL = 0x0002

_HEADER = struct.Struct(">4sBBHIQI")
HEADER_SIZE = _HEADER.size  # 24
TRAILER_SIZE = 4
MAX_PAYLOAD = 16 * 1024 * 1024


class FrameError(Exception):
    pass


class PayloadTooLarge(FrameError):
    pass


class Truncated(FrameError):
    pass


class BadMagic(FrameError):
    pass


class UnsupportedVersion(FrameError):
    pass


@dataclass
class Frame:
    msg_type: int
    seq: int
    timestamp_us: int
    payload: bytes = b""
    flags: int = 0
    crc_failed: bool = False  # set by decode_frame

    @property
    def retransmission(self) -> bool:
        return bool(self.flags & FLAG_RETRANSMIT)

    @property
    def final(self) -> bool:
        return bool(self.flags & FLAG_FINAL)


def encode_frame(
    msg_type: int,
    seq: int,
    timestamp_us: int,
    payload: bytes = b"",
    flags: int = 0,
) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload {len(payload)} bytes > {MAX_PAYLOAD}")
    header = _HEADER.pack(MAGIC, VERSION, msg_type, flags, seq, timestamp_us, len(payload))
    body = header + payload
    return body + zlib.crc32(body).to_bytes(4, "big")


def encode(frame: Frame) -> bytes:
    return encode_frame(frame.msg_type, frame.seq, frame.timestamp_us, frame.payload, frame.flags)


def decode_frame(data: bytes) -> Frame:
    """Parse one frame. Raises on malformed envelopes; a bad CRC is *not* an
    error — the frame comes back with crc_failed set."""
    if len(data) < HEADER_SIZE:
        raise Truncated(f"{len(data)} bytes < {HEADER_SIZE}-byte header")
    magic, version, msg_type, flags, seq, timestamp_us, payload_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"got {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"got {version}")
    end = HEADER_SIZE + payload_len
    if len(data) < end + TRAILER_SIZE:
        raise Truncated(f"header claims {payload_len} payload bytes, frame has {len(data)}")
    payload = data[HEADER_SIZE:end]
    stored = int.from_bytes(data[end : end + TRAILER_SIZE], "big")
    crc_failed = zlib.crc32(data[:end]) != stored
    return Frame(msg_type, seq, timestamp_us, payload, flags, crc_failed)


# --- teleoperation command payload ---------------------------------------

GAITS = ("idle", "walk", "run", "stairs")

MAX_VX = 1.5
MAX_VY = 0.8
MAX_YAW_RATE = 2.0
MAX_DURATION_MS = 5000

_CMD = struct.Struct(">QIBdddI")  # session_id, cmd_id, gait, vx, vy, yaw_rate, duration_ms
TAG_SIZE = 16
COMMAND_PAYLOAD_SIZE = _CMD.size + TAG_SIZE

CMD_APPLIED = 0
CMD_REJECTED_ROBOT = 1
CMD_REJECTED_POLICY = 2

_CMD_REPLY = struct.Struct(">IBQ")  # cmd_id, status, handled_at_us


class CommandInvalid(FrameError):
    pass


@dataclass(frozen=True)
class CommandMessage:
    """High-level motion command: gait plus body-frame velocity setpoints."""

    gait: str
    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0
    duration_ms: int = 100

    def __post_init__(self) -> None:
        if self.gait not in GAITS:
            raise CommandInvalid(f"unknown gait {self.gait!r}")
        if abs(self.vx) > MAX_VX:
            raise CommandInvalid(f"|vx| {self.vx} exceeds cap {MAX_VX}")
        if abs(self.vy) > MAX_VY:
            raise CommandInvalid(f"|vy| {self.vy} exceeds cap {MAX_VY}")
        if abs(self.yaw_rate) > MAX_YAW_RATE:
            raise CommandInvalid(f"|yaw_rate| {self.yaw_rate} exceeds cap {MAX_YAW_RATE}")
        if not 0 <= self.duration_ms <= MAX_DURATION_MS:
            raise CommandInvalid(f"duration_ms {self.duration_ms} out of [0, {MAX_DURATION_MS}]")


def pack_command(cmd: CommandMessage, session_id: int, key: bytes, cmd_id: int = 0) -> bytes:
    """Serialize a command bound to a session, with an integrity tag."""
    body = _CMD.pack(session_id, cmd_id, GAITS.index(cmd.gait),
                     cmd.vx, cmd.vy, cmd.yaw_rate, cmd.duration_ms)
    return body + command_tag(key, body)


def unpack_command(payload: bytes) -> tuple[int, int, CommandMessage, bytes, bytes]:
    """Return (session_id, cmd_id, command, tag, signed_body). Tag verification
    is the caller's job since the session key is looked up from session_id."""
    if len(payload) != COMMAND_PAYLOAD_SIZE:
        raise CommandInvalid(f"command payload must be {COMMAND_PAYLOAD_SIZE} bytes, got {len(payload)}")
    body, tag = payload[: _CMD.size], payload[_CMD.size :]
    session_id, cmd_id, gait_idx, vx, vy, yaw, duration = _CMD.unpack(body)
    if gait_idx >= len(GAITS):
        raise CommandInvalid(f"unknown gait index {gait_idx}")
    cmd = CommandMessage(GAITS[gait_idx], vx, vy, yaw, duration)
    return session_id, cmd_id, cmd, tag, body


def command_tag(key: bytes, signed_body: bytes) -> bytes:
    import hmac
    import hashlib

    return hmac.new(key, signed_body, hashlib.sha256).digest()[:TAG_SIZE]


def pack_command_reply(cmd_id: int, status: int, handled_at_us: int) -> bytes:
    return _CMD_REPLY.pack(cmd_id, status, handled_at_us)


def unpack_command_reply(payload: bytes) -> tuple[int, int, int]:
    if len(payload) != _CMD_REPLY.size:
        raise CommandInvalid(f"command reply must be {_CMD_REPLY.size} bytes, got {len(payload)}")
    return _CMD_REPLY.unpack(payload)
