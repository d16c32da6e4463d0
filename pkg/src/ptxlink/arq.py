"""Reliable delivery over lossy emulated links.

Stop-and-wait by default (window=1), optional sliding window. Every intact
data frame is acknowledged per sequence number; duplicates are re-acked but
delivered to the application exactly once, in order. Retransmission uses a
single timer armed on the oldest unacked frame (a timer per frame measured
from its send time fires spuriously for windowed transfers, where frames
queue behind link serialization). RTT is estimated EWMA-style from
never-retransmitted frames only.

Messages larger than the MTU are split into chunks; the last chunk carries
FLAG_FINAL and the receiver reassembles in sequence order. Exhausting
max_retries breaks the channel: the failing message and everything queued
behind it fail, and the channel refuses further sends until reconnect().
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Protocol

from . import frames
from .sim import Scheduler

RTT_ALPHA = 0.125
TIMEOUT_DELAY_FACTOR = 3.0  # timeout = 3x estimated one-way delay
MAX_TIMEOUT_US = 60_000_000
DEFAULT_MTU = 1400


class DeliveryFailed(Exception):
    pass


class ChannelClosed(Exception):
    pass


class Transport(Protocol):
    def transmit(self, data: bytes, deliver: Callable[[bytes], None], seq: int, msg_type: int): ...

    def delay_hint_us(self, size: int) -> float: ...


@dataclass
class TransferHandle:
    """Sender-side view of one message in flight."""

    message_id: int
    msg_type: int
    size: int
    first_seq: int
    last_seq: int
    queued_at: int
    status: str = "in_flight"  # in_flight | acked | failed
    completed_at: int | None = None
    on_complete: Callable[["TransferHandle"], None] | None = None
    on_failed: Callable[["TransferHandle"], None] | None = None
    _unacked: int = 0


class _Inflight:
    __slots__ = ("handle", "msg_type", "chunk", "flags", "attempts", "last_send_us")

    def __init__(self, handle: TransferHandle, msg_type: int, chunk: bytes, flags: int) -> None:
        self.handle = handle
        self.msg_type = msg_type
        self.chunk = chunk
        self.flags = flags
        self.attempts = 0
        self.last_send_us = 0


class ArqEndpoint:
    """One end of a reliable channel; owns its transmit and receive state."""

    def __init__(
        self,
        name: str,
        scheduler: Scheduler,
        window: int = 1,
        timeout_ms: float | None = None,
        max_retries: int = 8,
        mtu: int = DEFAULT_MTU,
        on_message: Callable[[int, bytes, dict], None] | None = None,
        record_delivered: bool = False,
        keep_logs: bool = True,
    ) -> None:
        self.name = name
        self.scheduler = scheduler
        self.window = window
        self.max_retries = max_retries
        self.mtu = mtu
        self.on_message = on_message
        self.record_delivered = record_delivered
        self.keep_logs = keep_logs
        self.closed = False

        self.transport: Transport | None = None  # wired by the channel
        self._message_ids = itertools.count(1)

        # transmit side
        self.next_seq = 0
        self.inflight: dict[int, _Inflight] = {}
        self._queue: list[tuple[int, TransferHandle, int, bytes, int]] = []  # (seq, handle, type, chunk, flags)
        self._queue_pos = 0
        self.srtt_us: float | None = None
        self._timeout_override_us = None if timeout_ms is None else timeout_ms * 1000.0
        self._rto_backoff = 1.0
        self._timer_id: int | None = None
        self.tx_log: dict[int, dict] = {}

        # receive side
        self.expected_seq = 0
        self._rx_buffer: dict[int, tuple[int, bytes, int]] = {}
        self._assembly: list[bytes] = []
        self._assembly_type: int | None = None
        self.rx_log = {"intact": 0, "corrupted": 0, "duplicates": 0, "delivered_msgs": 0}
        # (msg_type, payload) in delivery order; only with record_delivered
        self.delivered: list[tuple[int, bytes]] = []

    # --- wiring -----------------------------------------------------------

    def attach(self, transport: Transport) -> None:
        self.transport = transport

    def reset(self) -> None:
        """Fresh connection state (both ends must reset together)."""
        if self.keep_logs:
            for seq in self.inflight:
                self.tx_log[seq]["status"] = "failed"
        self.inflight.clear()
        self._queue = []
        self._queue_pos = 0
        self.next_seq = 0
        self.expected_seq = 0
        self._rx_buffer.clear()
        self._assembly = []
        self._assembly_type = None
        self._cancel_timer()
        self._rto_backoff = 1.0
        self.closed = False

    # --- timeout policy ----------------------------------------------------

    def _timeout_us(self) -> float:
        if self._timeout_override_us is not None:
            base = self._timeout_override_us
        elif self.srtt_us is not None:
            base = TIMEOUT_DELAY_FACTOR * (self.srtt_us / 2.0)
        elif self.transport is not None:
            base = TIMEOUT_DELAY_FACTOR * self.transport.delay_hint_us(
                frames.HEADER_SIZE + self.mtu + frames.TRAILER_SIZE
            )
        else:
            base = 100_000.0
        return min(base * self._rto_backoff, MAX_TIMEOUT_US)

    # --- transmit path ------------------------------------------------------

    def send_message(
        self,
        msg_type: int,
        payload: bytes,
        on_complete: Callable[[TransferHandle], None] | None = None,
        on_failed: Callable[[TransferHandle], None] | None = None,
    ) -> TransferHandle:
        if self.closed:
            raise ChannelClosed(f"endpoint {self.name} is closed")
        if self.transport is None:
            raise ChannelClosed(f"endpoint {self.name} has no transport")
        chunks = [payload[i : i + self.mtu] for i in range(0, len(payload), self.mtu)] or [b""]
        handle = TransferHandle(
            message_id=next(self._message_ids),
            msg_type=msg_type,
            size=len(payload),
            first_seq=self.next_seq,
            last_seq=self.next_seq + len(chunks) - 1,
            queued_at=self.scheduler.clock.now,
            on_complete=on_complete,
            on_failed=on_failed,
        )
        handle._unacked = len(chunks)
        for i, chunk in enumerate(chunks):
            flags = frames.FLAG_FINAL if i == len(chunks) - 1 else 0
            self._queue.append((self.next_seq, handle, msg_type, chunk, flags))
            self.next_seq += 1
        self._pump()
        return handle

    def _pump(self) -> None:
        while len(self.inflight) < self.window and self._queue_pos < len(self._queue):
            seq, handle, msg_type, chunk, flags = self._queue[self._queue_pos]
            self._queue_pos += 1
            if handle.status == "failed":
                continue
            entry = _Inflight(handle, msg_type, chunk, flags)
            self.inflight[seq] = entry
            if self.keep_logs:
                self.tx_log[seq] = {"attempts": 0, "status": "in_flight",
                                    "first_send": None, "acked_at": None}
            self._transmit(seq, entry)
        if self._queue_pos >= len(self._queue):
            # drop the drained prefix so long runs don't accumulate
            self._queue = []
            self._queue_pos = 0
        self._ensure_timer()

    def _transmit(self, seq: int, entry: _Inflight) -> None:
        now = self.scheduler.clock.now
        entry.attempts += 1
        entry.last_send_us = now
        if self.keep_logs:
            log = self.tx_log[seq]
            log["attempts"] = entry.attempts
            if log["first_send"] is None:
                log["first_send"] = now
        flags = entry.flags | (frames.FLAG_RETRANSMIT if entry.attempts > 1 else 0)
        data = frames.encode_frame(entry.msg_type, seq, now, entry.chunk, flags)
        self.transport.transmit(data, self._deliver_to_peer, seq=seq, msg_type=entry.msg_type)

    # Set by the channel: delivers raw bytes into the peer endpoint.
    def _deliver_to_peer(self, data: bytes) -> None:
        raise ChannelClosed(f"endpoint {self.name} has no peer")

    # --- retransmission timer ------------------------------------------------

    def _cancel_timer(self) -> None:
        if self._timer_id is not None:
            self.scheduler.cancel(self._timer_id)
            self._timer_id = None

    def _ensure_timer(self) -> None:
        # One pending timer; at fire time the true deadline of the oldest
        # unacked frame is re-checked, so acks need not reschedule anything.
        if self._timer_id is None and self.inflight:
            self._timer_id = self.scheduler.schedule_in(self._on_timeout, int(self._timeout_us()))

    def _on_timeout(self) -> None:
        self._timer_id = None
        if not self.inflight:
            return
        base = min(self.inflight)
        entry = self.inflight[base]
        now = self.scheduler.clock.now
        deadline = int(entry.last_send_us + self._timeout_us())
        if now < deadline:
            self._timer_id = self.scheduler.schedule(self._on_timeout, deadline)
            return
        if entry.attempts >= self.max_retries + 1:
            self._fail(base, entry)
            return
        self._rto_backoff = min(self._rto_backoff * 2.0, 64.0)
        self._transmit(base, entry)
        self._timer_id = self.scheduler.schedule_in(self._on_timeout, int(self._timeout_us()))

    def _fail(self, seq: int, entry: _Inflight) -> None:
        """Retries exhausted: the channel is broken; fail everything pending."""
        self.closed = True
        self._cancel_timer()
        failed_handles: list[TransferHandle] = []
        for s in sorted(self.inflight):
            e = self.inflight[s]
            if self.keep_logs:
                self.tx_log[s]["status"] = "failed"
            if e.handle.status == "in_flight":
                e.handle.status = "failed"
                failed_handles.append(e.handle)
        self.inflight.clear()
        while self._queue_pos < len(self._queue):
            _, handle, _, _, _ = self._queue[self._queue_pos]
            self._queue_pos += 1
            if handle.status == "in_flight":
                handle.status = "failed"
                failed_handles.append(handle)
        self._queue = []
        self._queue_pos = 0
        for handle in failed_handles:
            if handle.on_failed is not None:
                handle.on_failed(handle)

    # --- receive path ---------------------------------------------------------

    def handle_bytes(self, data: bytes) -> None:
        frame = frames.decode_frame(data)
        if frame.crc_failed:
            self.rx_log["corrupted"] += 1
            return
        if frame.msg_type == frames.ACK:
            self._handle_ack(frame.seq)
            return
        self.rx_log["intact"] += 1
        self._send_ack(frame.seq)
        if frame.seq < self.expected_seq or frame.seq in self._rx_buffer:
            self.rx_log["duplicates"] += 1
            return
        self._rx_buffer[frame.seq] = (frame.msg_type, frame.payload, frame.flags)
        while self.expected_seq in self._rx_buffer:
            msg_type, payload, flags = self._rx_buffer.pop(self.expected_seq)
            self.expected_seq += 1
            self._assembly.append(payload)
            self._assembly_type = msg_type
            if flags & frames.FLAG_FINAL:
                message = b"".join(self._assembly)
                self._assembly = []
                self.rx_log["delivered_msgs"] += 1
                if self.record_delivered:
                    self.delivered.append((msg_type, message))
                if self.on_message is not None:
                    self.on_message(msg_type, message, {"at": self.scheduler.clock.now})

    def _send_ack(self, seq: int) -> None:
        data = frames.encode_frame(frames.ACK, seq, self.scheduler.clock.now)
        self.transport.transmit(data, self._deliver_to_peer, seq=seq, msg_type=frames.ACK)

    def _handle_ack(self, seq: int) -> None:
        entry = self.inflight.pop(seq, None)
        if entry is None:
            return  # duplicate ack
        now = self.scheduler.clock.now
        if self.keep_logs:
            log = self.tx_log[seq]
            log["status"] = "acked"
            log["acked_at"] = now
        if entry.attempts == 1:  # Karn: skip retransmitted samples
            sample = float(now - entry.last_send_us)
            self.srtt_us = sample if self.srtt_us is None else (1 - RTT_ALPHA) * self.srtt_us + RTT_ALPHA * sample
        self._rto_backoff = 1.0
        handle = entry.handle
        handle._unacked -= 1
        if handle._unacked == 0 and handle.status == "in_flight":
            handle.status = "acked"
            handle.completed_at = now
            if handle.on_complete is not None:
                handle.on_complete(handle)
        self._pump()


class ArqChannel:
    """Bidirectional reliable channel: two endpoints over a duplex transport."""

    def __init__(
        self,
        scheduler: Scheduler,
        a_to_b: Transport,
        b_to_a: Transport,
        window: int = 1,
        timeout_ms: float | None = None,
        max_retries: int = 8,
        mtu: int = DEFAULT_MTU,
        names: tuple[str, str] = ("a", "b"),
        record_delivered: bool = False,
        keep_logs: bool = True,
    ) -> None:
        self.a = ArqEndpoint(names[0], scheduler, window, timeout_ms, max_retries, mtu,
                             record_delivered=record_delivered, keep_logs=keep_logs)
        self.b = ArqEndpoint(names[1], scheduler, window, timeout_ms, max_retries, mtu,
                             record_delivered=record_delivered, keep_logs=keep_logs)
        self.a.attach(a_to_b)
        self.b.attach(b_to_a)
        self.a._deliver_to_peer = self.b.handle_bytes
        self.b._deliver_to_peer = self.a.handle_bytes

    def reconnect(self) -> None:
        """Reset both ends after a channel failure (a fresh connection)."""
        self.a.reset()
        self.b.reset()


def send_reliable(
    endpoint: ArqEndpoint,
    scheduler: Scheduler,
    msg_type: int,
    payload: bytes,
) -> TransferHandle:
    """Send one message and drive the scheduler until it resolves.

    Returns the acked handle; raises DeliveryFailed when retries exhaust.
    """
    handle = endpoint.send_message(msg_type, payload)
    while handle.status == "in_flight":
        if not scheduler.step():
            break
    if handle.status != "acked":
        attempts = endpoint.tx_log.get(handle.first_seq, {}).get("attempts", "?")
        raise DeliveryFailed(
            f"message {handle.message_id} ({handle.size} bytes) failed after {attempts} attempts"
        )
    return handle
