"""Sequential request/response transfer benchmark over one emulated network.

Each transfer uploads an image-sized request, the server holds it for a
processing time drawn from the deployment profile, and a small result rides
back; transmission latency is the full request-to-response time minus the
server processing share. Transfers run strictly one after another, so every
sample sees an idle link.
"""

from __future__ import annotations

import datetime as _dt
import json
import struct
import time
from dataclasses import dataclass, field

from . import frames
from .arq import ArqChannel
from .config import Config, ConfigError, NETWORK_ALIASES, DEPLOYMENT_ALIASES
from .linkmodel import DeploymentProfile, Link, LinkProfile, sample_processing
from .metrics import (
    PROCESSING_MS,
    TRANSMISSION_LATENCY_MS,
    BoxStats,
    MetricsSink,
    PacketAccounting,
    compute_pdr,
    compute_per,
    summarize,
)
from .seeding import RngHub
from .sim import Scheduler

LATENCY_DEFINITION = (
    "transmission_latency_ms is the full request->response transfer time minus "
    "the server processing share (upload and download both included)"
)

_PATTERN = bytes(range(256))


class IncompatibleReports(Exception):
    pass


@dataclass(frozen=True)
class PayloadModel:
    mean_bytes: int = 222_800
    sigma_rel: float = 0.10
    min_bytes: int = 1024
    response_bytes: int = 2048

    def draw(self, rng) -> int:
        if self.sigma_rel == 0.0:
            return self.mean_bytes
        size = int(round(rng.normal(self.mean_bytes, self.sigma_rel * self.mean_bytes)))
        return max(size, self.min_bytes)

    def as_dict(self) -> dict:
        return {"mean_bytes": self.mean_bytes, "sigma_rel": self.sigma_rel,
                "min_bytes": self.min_bytes, "response_bytes": self.response_bytes}

    @classmethod
    def from_dict(cls, doc: dict) -> "PayloadModel":
        return cls(int(doc["mean_bytes"]), float(doc["sigma_rel"]),
                   int(doc["min_bytes"]), int(doc["response_bytes"]))


class TransferBench:
    """Client/server pair joined by one duplex emulated link."""

    def __init__(
        self,
        profile: LinkProfile,
        deployment: DeploymentProfile,
        payload: PayloadModel,
        seed: int,
        window: int = 1024,
        mtu: int = 1400,
        max_retries: int = 8,
        run_id: str = "",
        keep_trace: bool = True,
    ) -> None:
        self.scheduler = Scheduler()
        self.hub = RngHub(seed)
        self.profile = profile
        self.deployment = deployment
        self.payload = payload
        self.sink = MetricsSink(run_id)
        self.accounting = PacketAccounting()
        self.trace: list[dict] = []
        self._keep_trace = keep_trace

        effective = profile.scaled(deployment.link_load_factor)
        self.uplink = Link(
            f"client->server:{profile.name}", effective, self.scheduler,
            delay_rng=self.hub.rng("link.up.delay"), error_rng=self.hub.rng("link.up.error"),
            on_outcome=self._on_outcome,
        )
        self.downlink = Link(
            f"server->client:{profile.name}", effective, self.scheduler,
            delay_rng=self.hub.rng("link.down.delay"), error_rng=self.hub.rng("link.down.error"),
            on_outcome=self._on_outcome,
        )
        self.channel = ArqChannel(
            self.scheduler, self.uplink, self.downlink,
            window=window, max_retries=max_retries, mtu=mtu,
            names=("client", "server"), keep_logs=False,
        )
        self.client = self.channel.a
        self.server = self.channel.b
        self.server.on_message = self._server_message
        self.client.on_message = self._client_message

        self._proc_rng = self.hub.rng(f"deployment.{deployment.name}")
        self._size_rng = self.hub.rng("payload.size")
        self._sent_at_us = 0
        self._request_bytes = 0
        self._transfer_open = False
        self._transfer_failed = False
        self.dropped_transfers = 0
        self.completed_transfers = 0

    # --- wire events -------------------------------------------------------

    def _on_outcome(self, outcome) -> None:
        self.accounting.record_outcome(outcome)
        if self._keep_trace:
            self.trace.append(outcome.to_record())

    def _server_message(self, msg_type: int, payload: bytes, meta: dict) -> None:
        processing_ms = sample_processing(self.deployment, self._proc_rng)
        body = struct.pack(">d", processing_ms)
        pad = self.payload.response_bytes - len(body)
        if pad > 0:
            body += (_PATTERN * (pad // 256 + 1))[:pad]
        delay_us = int(round(processing_ms * 1000.0))
        self.scheduler.schedule_in(lambda: self._respond(body), delay_us)

    def _respond(self, body: bytes) -> None:
        if self.server.closed:
            return
        self.server.send_message(frames.METRIC, body, on_failed=self._on_transfer_failed)

    def _client_message(self, msg_type: int, payload: bytes, meta: dict) -> None:
        if not self._transfer_open:
            return
        processing_ms = struct.unpack_from(">d", payload)[0]
        elapsed_ms = (self.scheduler.clock.now - self._sent_at_us) / 1000.0
        self.sink.record(TRANSMISSION_LATENCY_MS, elapsed_ms - processing_ms,
                         self.profile.name, self.deployment.name, self._request_bytes)
        self.sink.record(PROCESSING_MS, processing_ms,
                         self.profile.name, self.deployment.name, self._request_bytes)
        self._transfer_open = False
        self.completed_transfers += 1

    def _on_transfer_failed(self, handle) -> None:
        if self._transfer_open:
            self._transfer_open = False
            self._transfer_failed = True
            self.dropped_transfers += 1

    # --- driving -----------------------------------------------------------

    def measure_one(self, request_bytes: int | None = None) -> None:
        """Run a single transfer to completion (or drop)."""
        size = request_bytes if request_bytes is not None else self.payload.draw(self._size_rng)
        blob = (_PATTERN * (size // 256 + 1))[:size]
        self._sent_at_us = self.scheduler.clock.now
        self._request_bytes = size
        self._transfer_open = True
        self._transfer_failed = False
        self.client.send_message(frames.TELEMETRY, blob, on_failed=self._on_transfer_failed)
        while self._transfer_open:
            if not self.scheduler.step():
                if self._transfer_open:  # nothing left to run: undeliverable
                    self._transfer_open = False
                    self.dropped_transfers += 1
                break
        if self._transfer_failed or self.channel.a.closed or self.channel.b.closed:
            self.channel.reconnect()

    def run(self, n: int) -> None:
        for _ in range(n):
            self.measure_one()
        self.scheduler.run()  # drain trailing acks and timers
        self.accounting.close_out()


def run_experiment(
    config: Config,
    network: str,
    deployment: str,
    n: int,
    seed: int,
    scenario: str = "Setup3",
    payload: PayloadModel | None = None,
    keep_trace: bool = True,
    window: int | None = None,
    mtu: int | None = None,
    max_retries: int | None = None,
) -> "Report":
    if n <= 0:
        raise ConfigError(f"sample count must be positive, got {n}")
    profile = config.profile(network)
    deploy = config.deployment(deployment)
    if payload is None:
        payload = PayloadModel.from_dict(config.section("payload"))
    arq_conf = config.section("arq")

    started = time.perf_counter()
    bench = TransferBench(
        profile, deploy, payload, seed,
        window=int(arq_conf["window"] if window is None else window),
        mtu=int(arq_conf["mtu"] if mtu is None else mtu),
        max_retries=int(arq_conf["max_retries"] if max_retries is None else max_retries),
        run_id=f"{profile.name}-{deploy.name}-{seed}",
        keep_trace=keep_trace,
    )
    bench.run(n)
    runtime_s = time.perf_counter() - started

    return Report.from_bench(bench, n, seed, scenario, runtime_s)


@dataclass
class Report:
    spec: dict
    box_stats: dict[str, BoxStats]
    accounting: PacketAccounting
    per: float
    pdr: float
    dropped_transfers: int
    uncalibrated: list[str]
    meta: dict
    trace: list[dict] = field(default_factory=list, repr=False)
    samples: MetricsSink | None = field(default=None, repr=False)
    samples_path: str | None = None

    @classmethod
    def from_bench(cls, bench: TransferBench, n: int, seed: int, scenario: str,
                   runtime_s: float) -> "Report":
        box = {}
        for kind in (TRANSMISSION_LATENCY_MS, PROCESSING_MS):
            values = bench.sink.values(kind)
            if values:
                box[kind] = summarize(values)
        uncal = []
        if bench.profile.uncalibrated:
            uncal.append(bench.profile.name)
        if bench.deployment.uncalibrated:
            uncal.append(bench.deployment.name)
        return cls(
            spec={
                "network": bench.profile.name,
                "deployment": bench.deployment.name,
                "n": n,
                "seed": seed,
                "scenario": scenario,
                "payload_model": bench.payload.as_dict(),
                "window": bench.client.window,
                "mtu": bench.client.mtu,
                "max_retries": bench.client.max_retries,
            },
            box_stats=box,
            accounting=bench.accounting,
            per=compute_per(bench.accounting),
            pdr=compute_pdr(bench.accounting),
            dropped_transfers=bench.dropped_transfers,
            uncalibrated=uncal,
            meta={
                "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                "runtime_s": round(runtime_s, 3),
            },
            trace=bench.trace,
            samples=bench.sink,
        )

    def to_dict(self, include_meta: bool = True) -> dict:
        doc = {
            "spec": self.spec,
            "latency_definition": LATENCY_DEFINITION,
            "box_stats": {k: v.as_dict() for k, v in self.box_stats.items()},
            "accounting": self.accounting.as_dict(),
            "per": self.per,
            "pdr": self.pdr,
            "dropped_transfers": self.dropped_transfers,
            "uncalibrated": self.uncalibrated,
            "samples_path": self.samples_path,
        }
        if include_meta:
            doc["meta"] = self.meta
        return doc

    def canonical_json(self) -> str:
        """Deterministic serialization: wall-clock metadata excluded."""
        return json.dumps(self.to_dict(include_meta=False), sort_keys=True)

    def write(self, path: str, samples_path: str | None = None) -> None:
        if samples_path is not None and self.samples is not None:
            self.samples.write_csv(samples_path)
            self.samples_path = samples_path
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def write_trace(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": self.spec}, sort_keys=True) + "\n")
            for record in self.trace:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_report(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def compare_reports(a: dict, b: dict) -> dict:
    """Per-metric deltas and median ratios between two experiment reports."""
    pa = a.get("spec", {}).get("payload_model")
    pb = b.get("spec", {}).get("payload_model")
    if pa != pb:
        raise IncompatibleReports(f"payload models differ: {pa} vs {pb}")
    table = {}
    for kind in sorted(set(a["box_stats"]) & set(b["box_stats"])):
        ma = a["box_stats"][kind]["median"]
        mb = b["box_stats"][kind]["median"]
        table[kind] = {
            "median_a": ma,
            "median_b": mb,
            "delta": ma - mb,
            "ratio": ma / mb if mb else None,
        }
    return {
        "network_a": a["spec"]["network"],
        "network_b": b["spec"]["network"],
        "deployment_a": a["spec"]["deployment"],
        "deployment_b": b["spec"]["deployment"],
        "metrics": table,
    }


def replay_trace(path: str, config: Config) -> tuple[bool, str]:
    """Re-execute a recorded trace's spec and compare outcome streams."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines:
        return False, "trace file is empty"
    header = json.loads(lines[0])
    if "meta" not in header:
        return False, "trace file has no meta header"
    spec = header["meta"]
    report = run_experiment(
        config,
        network=spec["network"],
        deployment=spec["deployment"],
        n=int(spec["n"]),
        seed=int(spec["seed"]),
        scenario=spec.get("scenario", "Setup3"),
        payload=PayloadModel.from_dict(spec["payload_model"]),
        window=spec.get("window"),
        mtu=spec.get("mtu"),
        max_retries=spec.get("max_retries"),
    )
    fresh = [json.dumps(r, sort_keys=True) for r in report.trace]
    recorded = lines[1:]
    if len(fresh) != len(recorded):
        return False, f"trace length differs: recorded {len(recorded)}, replay {len(fresh)}"
    for i, (old, new) in enumerate(zip(recorded, fresh)):
        if old != new:
            return False, f"trace diverges at line {i + 2}: {old} != {new}"
    return True, f"replay matches: {len(fresh)} outcomes"
