"""Platform-side telemetry collection: append-only log, time-range queries,
rule-based alarms, and store-and-forward batching to the shore twin endpoint.

Ingestion never deduplicates (reliability accounting lives in the transport);
offsets are dense and records immutable once appended. Queries run against a
sorted (timestamp, offset) index so they stay independent of arrival order.
"""

from __future__ import annotations

import base64
import bisect
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

from . import frames
from .arq import ArqEndpoint, TransferHandle
from .sim import Scheduler


class StorageFull(Exception):
    pass


class InvalidRange(Exception):
    pass


@dataclass(frozen=True)
class TelemetryRecord:
    source: str
    kind: str  # pose | battery | image | thermal | audio | process
    timestamp_us: int
    payload: bytes

    @property
    def payload_size(self) -> int:
        return len(self.payload)

    def channels(self) -> dict:
        """Scalar channels for rule evaluation (JSON payloads only)."""
        if self.kind == "image":
            return {}
        try:
            doc = json.loads(self.payload)
        except (ValueError, UnicodeDecodeError):
            return {}
        return {k: v for k, v in doc.items() if isinstance(v, (int, float))}

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "kind": self.kind,
            "timestamp_us": self.timestamp_us,
            "payload_size": self.payload_size,
            "payload_b64": base64.b64encode(self.payload).decode("ascii"),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TelemetryRecord":
        return cls(
            source=doc["source"],
            kind=doc["kind"],
            timestamp_us=int(doc["timestamp_us"]),
            payload=base64.b64decode(doc["payload_b64"]),
        )


@dataclass(frozen=True)
class AnomalyRule:
    id: str
    kind: str  # record kind filter, "*" for any
    field: str
    op: str  # ">", "<", "abs_delta>"
    threshold: float
    window_s: float = 0.0

    def __post_init__(self) -> None:
        if self.op not in (">", "<", "abs_delta>"):
            raise ValueError(f"unknown rule op {self.op!r}")
        if not math.isfinite(self.threshold):
            raise ValueError(f"threshold must be finite, got {self.threshold}")
        if self.op == "abs_delta>" and self.window_s <= 0:
            raise ValueError("delta rules need window_s > 0")


@dataclass(frozen=True)
class Alarm:
    rule_id: str
    source: str
    timestamp_us: int
    observed: float


class TelemetryLog:
    """Append-only record store with a time-sorted query index."""

    def __init__(self, capacity: int | None = None) -> None:
        self.capacity = capacity
        self.records: list[TelemetryRecord] = []
        self._index: list[tuple[int, int]] = []  # (timestamp_us, offset), sorted

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TelemetryRecord) -> int:
        if self.capacity is not None and len(self.records) >= self.capacity:
            raise StorageFull(f"log at capacity {self.capacity}")
        offset = len(self.records)
        self.records.append(record)
        bisect.insort(self._index, (record.timestamp_us, offset))
        return offset

    def query(self, t0: int, t1: int, source: str | None = None,
              kind: str | None = None) -> list[TelemetryRecord]:
        """Records with t0 <= timestamp <= t1, timestamp-ordered (offset ties)."""
        if t0 > t1:
            raise InvalidRange(f"t0 {t0} > t1 {t1}")
        lo = bisect.bisect_left(self._index, (t0, -1))
        hi = bisect.bisect_right(self._index, (t1, len(self.records)))
        out = []
        for _, offset in self._index[lo:hi]:
            record = self.records[offset]
            if source is not None and record.source != source:
                continue
            if kind is not None and record.kind != kind:
                continue
            out.append(record)
        return out

    def write_snapshot(self, path: str) -> None:
        with open(path, "w") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load_snapshot(cls, path: str) -> "TelemetryLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    log.append(TelemetryRecord.from_json(json.loads(line)))
        return log


class RuleEngine:
    """Evaluates anomaly rules per record; delta rules compare against the
    previous value from the same source inside the window."""

    def __init__(self, rules: list[AnomalyRule]) -> None:
        self.rules = rules
        self._last: dict[tuple[str, str], tuple[int, float]] = {}
        self.skipped_missing_channel = 0

    def evaluate(self, record: TelemetryRecord) -> list[Alarm]:
        alarms = []
        channels = record.channels()
        for rule in self.rules:
            if rule.kind != "*" and rule.kind != record.kind:
                continue
            if rule.field not in channels:
                self.skipped_missing_channel += 1
                continue
            value = float(channels[rule.field])
            if rule.op == ">":
                hit = value > rule.threshold
            elif rule.op == "<":
                hit = value < rule.threshold
            else:
                key = (rule.id, record.source)
                prev = self._last.get(key)
                self._last[key] = (record.timestamp_us, value)
                if prev is None:
                    continue
                prev_ts, prev_value = prev
                in_window = record.timestamp_us - prev_ts <= rule.window_s * 1_000_000
                hit = in_window and abs(value - prev_value) > rule.threshold
            if hit:
                alarms.append(Alarm(rule.id, record.source, record.timestamp_us, value))
        return alarms


def load_rules(path: str) -> list[AnomalyRule]:
    with open(path) as fh:
        items = json.load(fh)
    return [
        AnomalyRule(r["id"], r.get("kind", "*"), r["field"], r["op"],
                    float(r["threshold"]), float(r.get("window_s", 0.0)))
        for r in items
    ]


class AggregationServer:
    """Ingestion actor: log + rules + ingest-latency metric, one writer."""

    def __init__(
        self,
        scheduler: Scheduler,
        log: TelemetryLog | None = None,
        rules: list[AnomalyRule] | None = None,
        on_alarm: Callable[[Alarm], None] | None = None,
        on_ingest_ms: Callable[[float], None] | None = None,
        ingest_cost_ms: float = 0.5,
    ) -> None:
        self.scheduler = scheduler
        self.log = log or TelemetryLog()
        self.rule_engine = RuleEngine(rules or [])
        self.on_alarm = on_alarm
        self.on_ingest_ms = on_ingest_ms
        self.ingest_cost_ms = ingest_cost_ms
        self.alarms: list[Alarm] = []

    def ingest(self, record: TelemetryRecord) -> int:
        offset = self.log.append(record)
        if self.on_ingest_ms is not None:
            self.on_ingest_ms(self.ingest_cost_ms)
        for alarm in self.rule_engine.evaluate(record):
            self.alarms.append(alarm)
            if self.on_alarm is not None:
                self.on_alarm(alarm)
        return offset


# --- store-and-forward to the shore twin -----------------------------------

BATCH_MAX_RECORDS = 100
BATCH_MAX_WAIT_S = 5.0
RETRY_BACKOFF_S = 2.0


class StoreAndForward:
    """Ships log records to the twin in batches over a reliable channel;
    failed batches are retained and retried until delivered."""

    def __init__(
        self,
        scheduler: Scheduler,
        endpoint: ArqEndpoint,
        source: str,
        batch_records: int = BATCH_MAX_RECORDS,
        batch_wait_s: float = BATCH_MAX_WAIT_S,
        retry_backoff_s: float = RETRY_BACKOFF_S,
        on_reconnect: Callable[[], None] | None = None,
    ) -> None:
        self.scheduler = scheduler
        self.endpoint = endpoint
        self.source = source
        self.batch_records = batch_records
        self.batch_wait_us = int(batch_wait_s * 1_000_000)
        self.retry_backoff_us = int(retry_backoff_s * 1_000_000)
        self.on_reconnect = on_reconnect

        self._pending: list[TelemetryRecord] = []
        self._retained: list[bytes] = []  # encoded batches awaiting retry
        self._batch_ids = itertools.count(1)
        self._flush_timer: int | None = None
        self._retry_scheduled = False
        self.batches_sent = 0
        self.batches_failed = 0

    def offer(self, record: TelemetryRecord) -> None:
        self._pending.append(record)
        if len(self._pending) >= self.batch_records:
            self.flush()
        elif self._flush_timer is None:
            self._flush_timer = self.scheduler.schedule_in(self._flush_due, self.batch_wait_us)

    def forward_range(self, log: TelemetryLog, t0: int, t1: int,
                      source: str | None = None, kind: str | None = None) -> int:
        """Queue every log record in [t0, t1] for shipment; returns the count."""
        records = log.query(t0, t1, source=source, kind=kind)
        for record in records:
            self.offer(record)
        self.flush()
        return len(records)

    def _flush_due(self) -> None:
        self._flush_timer = None
        if self._pending:
            self.flush()

    def flush(self) -> None:
        if self._flush_timer is not None:
            self.scheduler.cancel(self._flush_timer)
            self._flush_timer = None
        if not self._pending:
            return
        batch = {
            "batch_id": f"{self.source}-{next(self._batch_ids)}",
            "source": self.source,
            "records": [r.to_json() for r in self._pending],
        }
        self._pending = []
        self._ship(json.dumps(batch, sort_keys=True).encode())

    def _ship(self, encoded: bytes) -> None:
        if self.endpoint.closed:
            self._retain(encoded)
            return
        self.endpoint.send_message(
            frames.TELEMETRY,
            encoded,
            on_complete=lambda handle: self._on_sent(),
            on_failed=lambda handle: self._retain(encoded),
        )

    def _on_sent(self) -> None:
        self.batches_sent += 1

    def _retain(self, encoded: bytes) -> None:
        self.batches_failed += 1
        self._retained.append(encoded)
        if not self._retry_scheduled:
            self._retry_scheduled = True
            self.scheduler.schedule_in(self._retry, self.retry_backoff_us)

    def _retry(self) -> None:
        self._retry_scheduled = False
        if not self._retained:
            return
        if self.endpoint.closed:
            # broken channel: reconnect (fresh connection) before resending
            if self.on_reconnect is not None:
                self.on_reconnect()
        if self.endpoint.closed:
            self._retry_scheduled = True
            self.scheduler.schedule_in(self._retry, self.retry_backoff_us)
            return
        retained, self._retained = self._retained, []
        for encoded in retained:
            self._ship(encoded)


class TwinEndpoint:
    """Shore-side receiver: batch dedup plus a timestamp-ordered record view."""

    def __init__(self) -> None:
        self.seen_batches: set[str] = set()
        self._records: list[tuple[int, int, TelemetryRecord]] = []
        self._arrival = itertools.count()

    def on_message(self, msg_type: int, payload: bytes, meta: dict) -> None:
        if msg_type != frames.TELEMETRY:
            return
        batch = json.loads(payload)
        if batch["batch_id"] in self.seen_batches:
            return
        self.seen_batches.add(batch["batch_id"])
        for doc in batch["records"]:
            record = TelemetryRecord.from_json(doc)
            self._records.append((record.timestamp_us, next(self._arrival), record))

    @property
    def records(self) -> list[TelemetryRecord]:
        """Merged stream, timestamp-ordered (arrival order breaks ties)."""
        return [r for _, _, r in sorted(self._records, key=lambda t: (t[0], t[1]))]
