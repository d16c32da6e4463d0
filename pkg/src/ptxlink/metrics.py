"""Evaluation metrics: latency/processing samples, packet accounting with
error-rate and delivery-ratio, and box-and-whisker summaries.

Quartiles use linear interpolation between order statistics (the common
"type 7" convention) so summaries are bit-comparable across runs; whiskers
follow the 1.5*IQR Tukey rule.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .linkmodel import CORRUPTED, DELIVERED, LOST, DeliveryOutcome

TRANSMISSION_LATENCY_MS = "transmission_latency_ms"
PROCESSING_MS = "processing_ms"
RTT_MS = "rtt_ms"


class EmptyRun(Exception):
    pass


class EmptyInput(Exception):
    pass


@dataclass(frozen=True)
class MetricSample:
    kind: str
    value_ms: float
    run_id: str = ""
    network: str = ""
    deployment: str = ""
    payload_bytes: int = 0

    def __post_init__(self) -> None:
        if self.value_ms < 0:
            raise ValueError(f"metric value must be >= 0, got {self.value_ms}")


class MetricsSink:
    """Single-writer collector for one run."""

    def __init__(self, run_id: str = "") -> None:
        self.run_id = run_id
        self.samples: list[MetricSample] = []

    def record(self, kind: str, value_ms: float, network: str = "", deployment: str = "",
               payload_bytes: int = 0) -> None:
        self.samples.append(
            MetricSample(kind, value_ms, self.run_id, network, deployment, payload_bytes)
        )

    def values(self, kind: str) -> list[float]:
        return [s.value_ms for s in self.samples if s.kind == kind]

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run", "kind", "network", "deployment", "payload_bytes", "value_ms"])
            for s in self.samples:
                writer.writerow([s.run_id, s.kind, s.network, s.deployment, s.payload_bytes,
                                 repr(s.value_ms)])


@dataclass
class PacketAccounting:
    """Per-run frame bookkeeping; closed runs partition exactly."""

    sent: int = 0
    received_correct: int = 0
    received_corrupted: int = 0
    missing: int = 0
    in_flight: int = 0

    def record_outcome(self, outcome: DeliveryOutcome) -> None:
        self.sent += 1
        if outcome.status == LOST:
            self.missing += 1
        elif outcome.status == CORRUPTED:
            self.received_corrupted += 1
        elif outcome.status == DELIVERED:
            self.received_correct += 1
        else:
            raise ValueError(f"unknown outcome status {outcome.status!r}")

    def record_in_flight(self) -> None:
        self.sent += 1
        self.in_flight += 1

    def resolve_in_flight(self, status: str) -> None:
        self.in_flight -= 1
        if status == DELIVERED:
            self.received_correct += 1
        elif status == CORRUPTED:
            self.received_corrupted += 1
        else:
            self.missing += 1

    def close_out(self) -> None:
        """Resolve anything still in flight to missing."""
        self.missing += self.in_flight
        self.in_flight = 0

    def as_dict(self) -> dict:
        return {
            "sent": self.sent,
            "received_correct": self.received_correct,
            "received_corrupted": self.received_corrupted,
            "missing": self.missing,
        }


def compute_per(acct: PacketAccounting) -> float:
    """Packet error rate: incorrectly received plus not received, over sent."""
    if acct.sent <= 0:
        raise EmptyRun("no packets sent")
    return (acct.received_corrupted + acct.missing) / acct.sent


def compute_pdr(acct: PacketAccounting) -> float:
    """Packet delivery ratio: correctly received over sent."""
    if acct.sent <= 0:
        raise EmptyRun("no packets sent")
    return acct.received_correct / acct.sent


@dataclass(frozen=True)
class BoxStats:
    n: int
    median: float
    q1: float
    q3: float
    iqr: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]
    mean: float

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "iqr": self.iqr,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "outliers": list(self.outliers),
            "mean": self.mean,
        }


def summarize(samples: list[float]) -> BoxStats:
    if not samples:
        raise EmptyInput("cannot summarize zero samples")
    arr = np.sort(np.asarray(samples, dtype=float))
    q1, median, q3 = np.quantile(arr, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    low_bound = q1 - 1.5 * iqr
    high_bound = q3 + 1.5 * iqr
    inside = arr[(arr >= low_bound) & (arr <= high_bound)]
    # n >= 1 and q1/q3 are within the data range, so inside is never empty
    whisker_low = float(inside[0])
    whisker_high = float(inside[-1])
    outliers = tuple(float(x) for x in arr[(arr < low_bound) | (arr > high_bound)])
    return BoxStats(
        n=len(arr),
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        iqr=float(iqr),
        whisker_low=whisker_low,
        whisker_high=whisker_high,
        outliers=outliers,
        mean=float(arr.mean()),
    )
