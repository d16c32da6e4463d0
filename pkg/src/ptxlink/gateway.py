"""Control-room gateway: the serve-mode bridge between real transports and
the platform actors.

The same scheduler, jump host, and robot agent used in simulation run here
against wall time: a pump task advances the virtual clock to "now" a few
hundred times per second, so handling delays, session expiry, and robot
ticks behave exactly as in simulation. Operators connect over a JSON
websocket (/ops); the binary frame codec is exercised on every command and
also speaks verbatim on a raw TCP socket for frame-level clients.

Latency shown to operators is always the server-computed round trip from
command receipt to robot confirmation; clients never estimate it themselves.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import struct
import time

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import frames
from .aggregation import AggregationServer, AnomalyRule
from .config import Config, load_config
from .jumphost import (
    AuditLog,
    AuthRejected,
    JumpHost,
    OperatorRegistry,
    PolicyViolation,
    Session,
    SessionExpired,
)
from .linkmodel import DelayDist
from .metrics import RTT_MS, MetricsSink, PacketAccounting, compute_pdr, compute_per, summarize
from .robot import CommandRejected, RobotAgent
from .seeding import RngHub
from .sim import Scheduler
from .teleop import AUTH_DENIED, AUTH_GRANTED, _AUTH_REPLY, default_registry

PUMP_INTERVAL_S = 0.002

MESSAGE_SCHEMA = {
    "endpoint": "/ops",
    "transport": "websocket, JSON messages",
    "client_to_server": {
        "auth": {"type": "auth", "token": "str"},
        "cmd": {
            "type": "cmd", "cmd_id": "int", "gait": "idle|walk|run|stairs",
            "vx": "m/s", "vy": "m/s", "yaw_rate": "rad/s",
            "duration_ms": "int", "client_ts": "ms epoch (informational)",
        },
    },
    "server_to_client": {
        "auth_ok": {"type": "auth_ok", "session_id": "int", "expires_at_us": "int",
                    "server_now_us": "int", "principal": "str"},
        "auth_fail": {"type": "auth_fail", "reason": "str"},
        "metric": {"type": "metric", "cmd_id": "int", "status": "applied|rejected",
                   "rtt_ms": "server-measured round trip"},
        "telemetry": {"type": "telemetry", "x": "m", "y": "m", "heading": "rad",
                      "gait": "str", "battery": "0..1", "mode": "str", "t_us": "int"},
        "alarm": {"type": "alarm", "rule_id": "str", "source": "str",
                  "observed": "float", "t_us": "int"},
        "error": {"type": "error", "reason": "str"},
    },
    "http": {"/schema": "this document", "/report": "session metrics report"},
    "frame_socket": "same binary frames as the emulated links, AUTH then COMMAND->METRIC",
}


class LiveEngine:
    """Wall-clock instantiation of the platform actors."""

    def __init__(self, config: Config, registry: OperatorRegistry | None, seed: int) -> None:
        self.scheduler = Scheduler()
        self.hub = RngHub(seed)
        self._t0 = time.monotonic()
        teleop_conf = config.section("teleop")

        self.audit = AuditLog()
        self.jumphost = JumpHost(
            registry or default_registry(), self.scheduler.clock, self.audit,
            session_ttl_us=int(float(teleop_conf["session_ttl_s"]) * 1_000_000),
        )
        self.aggregation = AggregationServer(
            self.scheduler,
            rules=[AnomalyRule("pipe-overtemp", "thermal", "pipe_temp_C", ">", 80.0)],
            on_alarm=self._on_alarm,
        )
        self.robot = RobotAgent(
            self.scheduler,
            rng=self.hub.rng("robot.telemetry"),
            on_telemetry=self.aggregation.ingest,
            pose_period_ticks=2,  # 10 Hz pose stream
        )
        self.handling = DelayDist(
            median_us=float(teleop_conf["handling_median_ms"]) * 1000.0,
            iqr_ratio=float(teleop_conf["handling_iqr"]),
        )
        self._handling_rng = self.hub.rng("robot.handling")
        self.sink = MetricsSink("serve")
        self.accounting = PacketAccounting()
        self.confirmed = 0
        self.rejected = 0
        self.alarm_queue: asyncio.Queue = asyncio.Queue()
        self.running = False

    # --- clock ------------------------------------------------------------

    def now_us(self) -> int:
        return int((time.monotonic() - self._t0) * 1_000_000)

    async def pump(self) -> None:
        """Advance the virtual clock alongside wall time."""
        self.running = True
        self.robot.start_streaming()
        while self.running:
            self.scheduler.run(until=self.now_us())
            await asyncio.sleep(PUMP_INTERVAL_S)

    def stop(self) -> None:
        self.running = False
        self.robot.stop_streaming()

    # --- command path -------------------------------------------------------

    def authenticate(self, token: str) -> Session:
        self.scheduler.run(until=self.now_us())
        return self.jumphost.authenticate(token)

    async def submit_command_frame(self, data: bytes) -> tuple[int, int, float]:
        """Feed one encoded COMMAND frame through policy and the robot.

        Returns (cmd_id, status, rtt_ms) with the server-measured round trip.
        """
        received_us = self.now_us()
        self.scheduler.run(until=received_us)
        self.accounting.record_in_flight()
        frame = frames.decode_frame(data)
        try:
            session, cmd_id, cmd = self.jumphost.tunnel_command(frame)
        except (AuthRejected, SessionExpired, PolicyViolation):
            self.accounting.resolve_in_flight("lost")
            self.rejected += 1
            try:
                _sid, cmd_id, *_ = frames.unpack_command(frame.payload)
            except frames.CommandInvalid:
                cmd_id = 0
            return cmd_id, frames.CMD_REJECTED_POLICY, 0.0

        done: asyncio.Future = asyncio.get_running_loop().create_future()

        def apply() -> None:
            try:
                self.robot.handle_command(cmd, cmd_id=cmd_id, session_id=session.id)
                status = frames.CMD_APPLIED
            except CommandRejected:
                status = frames.CMD_REJECTED_ROBOT
            if not done.done():
                done.set_result(status)

        delay_us = int(round(self.handling.sample(self._handling_rng)))
        self.scheduler.schedule(apply, received_us + delay_us)
        status = await done
        rtt_ms = (self.now_us() - received_us) / 1000.0
        if status == frames.CMD_APPLIED:
            self.accounting.resolve_in_flight("delivered")
            self.confirmed += 1
            self.sink.record(RTT_MS, rtt_ms, network="serve", deployment="live")
        else:
            self.accounting.resolve_in_flight("lost")
            self.rejected += 1
        return cmd_id, status, rtt_ms

    def _on_alarm(self, alarm) -> None:
        with contextlib.suppress(asyncio.QueueFull):
            self.alarm_queue.put_nowait(alarm)

    def report(self) -> dict:
        values = self.sink.values(RTT_MS)
        acct_view = PacketAccounting(**self.accounting.as_dict())
        return {
            "mode": "serve",
            "rtt_ms": values,
            "box": summarize(values).as_dict() if values else None,
            "confirmed": self.confirmed,
            "rejected": self.rejected,
            "per": compute_per(acct_view) if acct_view.sent else None,
            "pdr": compute_pdr(acct_view) if acct_view.sent else None,
            "audit_entries": len(self.audit.entries),
            "audit_cmd_forwarded": sum(
                1 for e in self.audit.entries if e.event == "cmd_forwarded"
            ),
        }


def create_app(config: Config | None = None, registry: OperatorRegistry | None = None,
               seed: int = 42, frame_port: int = 0) -> FastAPI:
    config = config or load_config()
    engine = LiveEngine(config, registry, seed)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.pump_task = asyncio.create_task(engine.pump())
        app.state.frame_server = await asyncio.start_server(
            lambda r, w: _frame_socket_session(engine, r, w), "127.0.0.1", frame_port
        )
        app.state.frame_port = app.state.frame_server.sockets[0].getsockname()[1]
        try:
            yield
        finally:
            engine.stop()
            app.state.pump_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await app.state.pump_task
            app.state.frame_server.close()

    app = FastAPI(title="ptxlink control-room gateway", lifespan=lifespan)
    app.state.engine = engine

    @app.get("/schema")
    def schema() -> dict:
        return MESSAGE_SCHEMA

    @app.get("/report")
    def report() -> dict:
        return engine.report()

    @app.get("/frameport")
    def frameport() -> dict:
        return {"port": app.state.frame_port}

    @app.websocket("/ops")
    async def ops(ws: WebSocket) -> None:
        await ws.accept()
        session: Session | None = None
        telemetry_task = asyncio.create_task(_telemetry_stream(engine, ws))
        try:
            while True:
                msg = await ws.receive_json()
                kind = msg.get("type")
                if kind == "auth":
                    try:
                        session = engine.authenticate(str(msg.get("token", "")))
                        await ws.send_json({
                            "type": "auth_ok",
                            "session_id": session.id,
                            "expires_at_us": session.expires_at_us,
                            "server_now_us": engine.now_us(),
                            "principal": session.principal,
                        })
                    except AuthRejected as exc:
                        session = None
                        await ws.send_json({"type": "auth_fail", "reason": str(exc)})
                elif kind == "cmd":
                    if session is None:
                        # still runs through the jump host so the attempt is audited
                        bogus = frames.pack_command(
                            frames.CommandMessage("idle"), 0, b"\x00" * 16,
                            int(msg.get("cmd_id", 0)),
                        )
                        data = frames.encode_frame(frames.COMMAND, 0, engine.now_us(), bogus)
                        cmd_id, status, _ = await engine.submit_command_frame(data)
                        await ws.send_json({"type": "error",
                                            "reason": "not authenticated", "cmd_id": cmd_id})
                        continue
                    try:
                        cmd = frames.CommandMessage(
                            gait=msg.get("gait", "walk"),
                            vx=float(msg.get("vx", 0.0)),
                            vy=float(msg.get("vy", 0.0)),
                            yaw_rate=float(msg.get("yaw_rate", 0.0)),
                            duration_ms=int(msg.get("duration_ms", 200)),
                        )
                    except frames.CommandInvalid as exc:
                        await ws.send_json({"type": "error", "reason": str(exc)})
                        continue
                    cmd_id = int(msg.get("cmd_id", 0))
                    payload = frames.pack_command(cmd, session.id, session.key, cmd_id)
                    data = frames.encode_frame(frames.COMMAND, cmd_id, engine.now_us(), payload)
                    cmd_id, status, rtt_ms = await engine.submit_command_frame(data)
                    await ws.send_json({
                        "type": "metric",
                        "cmd_id": cmd_id,
                        "status": "applied" if status == frames.CMD_APPLIED else "rejected",
                        "rtt_ms": rtt_ms,
                    })
                else:
                    await ws.send_json({"type": "error", "reason": f"unknown type {kind!r}"})
        except WebSocketDisconnect:
            pass
        finally:
            telemetry_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await telemetry_task

    return app


async def _telemetry_stream(engine: LiveEngine, ws: WebSocket) -> None:
    """Push robot state at 10 Hz plus any alarms as they fire."""
    while True:
        state = engine.robot.state
        await ws.send_json({
            "type": "telemetry",
            "x": round(state.x, 4), "y": round(state.y, 4),
            "heading": round(state.heading, 4),
            "gait": state.gait, "battery": round(state.battery_fraction, 6),
            "mode": state.mode, "t_us": engine.now_us(),
        })
        while not engine.alarm_queue.empty():
            alarm = engine.alarm_queue.get_nowait()
            await ws.send_json({
                "type": "alarm", "rule_id": alarm.rule_id, "source": alarm.source,
                "observed": alarm.observed, "t_us": alarm.timestamp_us,
            })
        await asyncio.sleep(0.1)


async def _frame_socket_session(engine: LiveEngine, reader: asyncio.StreamReader,
                                writer: asyncio.StreamWriter) -> None:
    """Raw binary transport: the exact same frame layout as the emulated links."""
    try:
        while True:
            header = await reader.readexactly(frames.HEADER_SIZE)
            payload_len = struct.unpack_from(">I", header, 20)[0]
            rest = await reader.readexactly(payload_len + frames.TRAILER_SIZE)
            data = header + rest
            frame = frames.decode_frame(data)
            if frame.msg_type == frames.AUTH:
                try:
                    session = engine.authenticate(frame.payload.decode("utf-8", "replace"))
                    reply = _AUTH_REPLY.pack(AUTH_GRANTED, session.id,
                                             session.expires_at_us, session.key)
                except AuthRejected:
                    reply = _AUTH_REPLY.pack(AUTH_DENIED, 0, 0, b"\x00" * 16)
                writer.write(frames.encode_frame(frames.AUTH, frame.seq,
                                                 engine.now_us(), reply))
                await writer.drain()
            elif frame.msg_type == frames.COMMAND:
                cmd_id, status, _rtt = await engine.submit_command_frame(data)
                writer.write(frames.encode_frame(
                    frames.METRIC, frame.seq, engine.now_us(),
                    frames.pack_command_reply(cmd_id, status, engine.now_us()),
                ))
                await writer.drain()
    except (asyncio.IncompleteReadError, ConnectionResetError):
        pass
    finally:
        writer.close()


def serve(host: str, port: int, config: Config, registry: OperatorRegistry | None,
          seed: int, frame_port: int | None = None) -> None:
    import uvicorn

    app = create_app(config, registry, seed,
                     frame_port=frame_port if frame_port is not None else port + 1)
    print(f"control-room gateway on ws://{host}:{port}/ops "
          f"(schema: http://{host}:{port}/schema, frame socket: {port + 1})")
    uvicorn.run(app, host=host, port=port, log_level="warning")
