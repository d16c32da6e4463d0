"""End-to-end teleoperation loop over a full platform topology.

The operator sits in the control room, authenticates against the jump host
over the shore path (wired WAN hop plus the backhaul), and steers the robot
over the platform's local campus link. Every command is policy checked and
audited at the jump host, applied by the robot after a modeled handling
delay, and confirmed back to the operator, whose measured round trips make
up the session's latency samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from . import frames
from .arq import ArqChannel
from .config import Config
from .jumphost import (
    AuditLog,
    AuthRejected,
    JumpHost,
    Operator,
    OperatorRegistry,
    PolicyViolation,
    Session,
    SessionExpired,
)
from .linkmodel import DelayDist, DeliveryOutcome
from .metrics import PacketAccounting
from .network import EmuNetwork
from .robot import CommandRejected, RobotAgent, RobotState
from .seeding import RngHub
from .sim import Scheduler
from .topology import CONTROL_ROOM, JUMP_HOST, ROBOT, build_topology
from .aggregation import AggregationServer

AUTH_GRANTED = 1
AUTH_DENIED = 0

_AUTH_REPLY = struct.Struct(">BQQ16s")  # status, session_id, expires_at_us, key

DEFAULT_TOKEN = "demo-operator-token"


def default_registry() -> OperatorRegistry:
    return OperatorRegistry([
        Operator("demo-operator", DEFAULT_TOKEN, frozenset({frames.COMMAND})),
        Operator("viewer", "viewer-token", frozenset({frames.TELEMETRY})),
    ])


def open_session(endpoint, token: str, scheduler: Scheduler) -> tuple[int, bytes, int]:
    """Drive one AUTH exchange on a channel that terminates at a jump host.

    Returns (session_id, session_key, expires_at_us); raises AuthRejected when
    the jump host denies the token.
    """
    outcome: dict = {}
    previous = endpoint.on_message

    def on_message(msg_type: int, payload: bytes, meta: dict) -> None:
        if msg_type == frames.AUTH and "reply" not in outcome:
            outcome["reply"] = _AUTH_REPLY.unpack(payload)
        elif previous is not None:
            previous(msg_type, payload, meta)

    endpoint.on_message = on_message
    try:
        endpoint.send_message(frames.AUTH, token.encode())
        while "reply" not in outcome:
            if not scheduler.step():
                raise TimeoutError("no AUTH reply before the event queue drained")
    finally:
        endpoint.on_message = previous
    status, session_id, expires_at_us, key = outcome["reply"]
    if status != AUTH_GRANTED:
        raise AuthRejected("token rejected by the jump host")
    return session_id, key, expires_at_us


@dataclass
class CommandEcho:
    cmd_id: int
    sent_at_us: int
    status: str = "pending"  # pending | applied | rejected
    rtt_ms: float | None = None


@dataclass
class TeleopResult:
    rtt_ms: list[float]
    echoes: list[CommandEcho]
    audit: AuditLog
    applied_commands: list[dict]
    robot_state: RobotState
    robot_events: list[tuple[int, str, dict]]
    accounting: PacketAccounting
    session: Session | None
    auth_rejected: bool
    ingested_records: int
    alarms: list = None

    @property
    def mean_rtt_ms(self) -> float:
        return sum(self.rtt_ms) / len(self.rtt_ms) if self.rtt_ms else float("nan")


class JumpHostActor:
    """Terminates the operator channel, polices commands, relays replies."""

    def __init__(self, scheduler: Scheduler, core: JumpHost, tunnel: DelayDist,
                 rng, operator_endpoint, robot_endpoint) -> None:
        self.scheduler = scheduler
        self.core = core
        self.tunnel = tunnel
        self.rng = rng
        self.operator_endpoint = operator_endpoint
        self.robot_endpoint = robot_endpoint
        operator_endpoint.on_message = self.on_operator_message
        robot_endpoint.on_message = self.on_robot_message

    def _tunnel_delay_us(self) -> int:
        return int(round(self.tunnel.sample(self.rng)))

    def on_operator_message(self, msg_type: int, payload: bytes, meta: dict) -> None:
        self.scheduler.schedule_in(lambda: self._process_inbound(msg_type, payload),
                                   self._tunnel_delay_us())

    def _process_inbound(self, msg_type: int, payload: bytes) -> None:
        if msg_type == frames.AUTH:
            try:
                session = self.core.authenticate(payload.decode("utf-8", "replace"))
                reply = _AUTH_REPLY.pack(AUTH_GRANTED, session.id, session.expires_at_us,
                                         session.key)
            except AuthRejected:
                reply = _AUTH_REPLY.pack(AUTH_DENIED, 0, 0, b"\x00" * 16)
            self.operator_endpoint.send_message(frames.AUTH, reply)
            return
        if msg_type == frames.COMMAND:
            frame = frames.Frame(frames.COMMAND, 0, self.scheduler.clock.now, payload)
            try:
                session, cmd_id, _cmd = self.core.tunnel_command(frame)
            except (AuthRejected, SessionExpired, PolicyViolation):
                try:
                    _sid, cmd_id, *_ = frames.unpack_command(payload)
                except frames.CommandInvalid:
                    cmd_id = 0
                reply = frames.pack_command_reply(cmd_id, frames.CMD_REJECTED_POLICY,
                                                  self.scheduler.clock.now)
                self.operator_endpoint.send_message(frames.METRIC, reply)
                return
            self.robot_endpoint.send_message(frames.COMMAND, payload)

    def on_robot_message(self, msg_type: int, payload: bytes, meta: dict) -> None:
        # replies tunnel back to the operator with the same processing cost
        self.scheduler.schedule_in(
            lambda: self.operator_endpoint.send_message(msg_type, payload),
            self._tunnel_delay_us(),
        )


class RobotActor:
    """Robot-side command endpoint: handling delay, apply, confirm."""

    def __init__(self, scheduler: Scheduler, agent: RobotAgent, handling: DelayDist,
                 rng, endpoint) -> None:
        self.scheduler = scheduler
        self.agent = agent
        self.handling = handling
        self.rng = rng
        self.endpoint = endpoint
        endpoint.on_message = self.on_message

    def on_message(self, msg_type: int, payload: bytes, meta: dict) -> None:
        if msg_type != frames.COMMAND:
            return
        delay = int(round(self.handling.sample(self.rng)))
        self.scheduler.schedule_in(lambda: self._apply(payload), delay)

    def _apply(self, payload: bytes) -> None:
        session_id, cmd_id, cmd, _tag, _body = frames.unpack_command(payload)
        now = self.scheduler.clock.now
        try:
            self.agent.handle_command(cmd, cmd_id=cmd_id, session_id=session_id)
            status = frames.CMD_APPLIED
        except CommandRejected:
            status = frames.CMD_REJECTED_ROBOT
        self.endpoint.send_message(frames.METRIC, frames.pack_command_reply(cmd_id, status, now))


class OperatorActor:
    """Control-room driver: authenticates, then steers at a fixed cadence."""

    def __init__(self, scheduler: Scheduler, endpoint, token: str,
                 n_commands: int, cadence_us: int, command: frames.CommandMessage,
                 rogue_session_id: int | None = None) -> None:
        self.scheduler = scheduler
        self.endpoint = endpoint
        self.token = token
        self.n_commands = n_commands
        self.cadence_us = cadence_us
        self.command = command
        self.rogue_session_id = rogue_session_id

        self.session_id: int | None = None
        self.session_key: bytes = b""
        self.auth_rejected = False
        self.echoes: dict[int, CommandEcho] = {}
        self._next_cmd_id = 1
        self._sent = 0
        endpoint.on_message = self.on_message

    def start(self) -> None:
        self.endpoint.send_message(frames.AUTH, self.token.encode())

    def on_message(self, msg_type: int, payload: bytes, meta: dict) -> None:
        now = self.scheduler.clock.now
        if msg_type == frames.AUTH:
            status, session_id, _expires, key = _AUTH_REPLY.unpack(payload)
            if status == AUTH_GRANTED:
                self.session_id = session_id
                self.session_key = key
                self._send_next()
            else:
                self.auth_rejected = True
            return
        if msg_type == frames.METRIC:
            cmd_id, status, _handled_at = frames.unpack_command_reply(payload)
            echo = self.echoes.get(cmd_id)
            if echo is not None and echo.status == "pending":
                echo.status = "applied" if status == frames.CMD_APPLIED else "rejected"
                echo.rtt_ms = (now - echo.sent_at_us) / 1000.0

    def _send_next(self) -> None:
        if self._sent >= self.n_commands:
            return
        self._sent += 1
        cmd_id = self._next_cmd_id
        self._next_cmd_id += 1
        if self.rogue_session_id is not None and self._sent == self.n_commands:
            # last command forged without a session, must be rejected+audited
            payload = frames.pack_command(self.command, self.rogue_session_id,
                                          b"\x00" * 16, cmd_id)
        else:
            payload = frames.pack_command(self.command, self.session_id,
                                          self.session_key, cmd_id)
        self.echoes[cmd_id] = CommandEcho(cmd_id, self.scheduler.clock.now)
        self.endpoint.send_message(frames.COMMAND, payload)
        if self._sent < self.n_commands:
            self.scheduler.schedule_in(self._send_next, self.cadence_us)


def run_teleop_session(
    config: Config,
    preset: str = "Setup3",
    seed: int = 42,
    n_commands: int = 100,
    token: str = DEFAULT_TOKEN,
    registry: OperatorRegistry | None = None,
    command: frames.CommandMessage | None = None,
    include_rogue_command: bool = False,
    keep_trace: bool = False,
    max_sim_s: float = 120.0,
    route=None,
    world=None,
    rules=None,
) -> TeleopResult:
    scheduler = Scheduler()
    hub = RngHub(seed)
    teleop_conf = config.section("teleop")
    topo_conf = config.section("topology")

    accounting = PacketAccounting()
    trace: list[dict] = []

    def on_outcome(outcome: DeliveryOutcome) -> None:
        accounting.record_outcome(outcome)
        if keep_trace:
            trace.append(outcome.to_record())

    topology = build_topology(preset, turbines=int(topo_conf.get("turbines", 2)))
    network = EmuNetwork(topology, config.profiles, scheduler, hub, on_outcome=on_outcome)

    registry = registry or default_registry()
    audit = AuditLog()
    core = JumpHost(registry, scheduler.clock, audit,
                    session_ttl_us=int(float(teleop_conf["session_ttl_s"]) * 1_000_000))

    operator_channel = ArqChannel(
        scheduler,
        network.path_transport(CONTROL_ROOM, JUMP_HOST),
        network.path_transport(JUMP_HOST, CONTROL_ROOM),
        window=8, names=("control_room", "jump_host"),
    )
    robot_channel = ArqChannel(
        scheduler,
        network.path_transport(JUMP_HOST, ROBOT),
        network.path_transport(ROBOT, JUMP_HOST),
        window=8, names=("jump_host", "robot"),
    )

    aggregation = AggregationServer(scheduler, rules=rules)
    agent = RobotAgent(
        scheduler,
        rng=hub.rng("robot.telemetry"),
        world=world,
        on_telemetry=lambda record: aggregation.ingest(record),
    )

    tunnel = DelayDist(median_us=float(teleop_conf["tunnel_median_ms"]) * 1000.0,
                       iqr_ratio=float(teleop_conf["tunnel_iqr"]))
    handling = DelayDist(median_us=float(teleop_conf["handling_median_ms"]) * 1000.0,
                         iqr_ratio=float(teleop_conf["handling_iqr"]))

    JumpHostActor(scheduler, core, tunnel, hub.rng("jumphost.tunnel"),
                  operator_channel.b, robot_channel.a)
    RobotActor(scheduler, agent, handling, hub.rng("robot.handling"), robot_channel.b)

    cadence_us = int(round(1_000_000 / float(teleop_conf["command_rate_hz"])))
    command = command or frames.CommandMessage("walk", vx=0.5, duration_ms=200)
    operator = OperatorActor(scheduler, operator_channel.a, token, n_commands,
                             cadence_us, command,
                             rogue_session_id=(0xDEAD if include_rogue_command else None))

    agent.start_streaming()
    if route is not None:
        agent.start_route(route)
    operator.start()
    scheduler.run(until=int(max_sim_s * 1_000_000))
    agent.stop_streaming()
    accounting.close_out()

    echoes = sorted(operator.echoes.values(), key=lambda e: e.cmd_id)
    rtts = [e.rtt_ms for e in echoes if e.status == "applied" and e.rtt_ms is not None]
    session = core.sessions.get(operator.session_id) if operator.session_id else None
    return TeleopResult(
        rtt_ms=rtts,
        echoes=echoes,
        audit=audit,
        applied_commands=agent.applied_commands,
        robot_state=agent.state,
        robot_events=agent.events,
        accounting=accounting,
        session=session,
        auth_rejected=operator.auth_rejected,
        ingested_records=len(aggregation.log),
        alarms=aggregation.alarms,
    )


def verify_zero_bypass(result: TeleopResult) -> tuple[bool, str]:
    """Every command the robot applied must have a prior cmd_forwarded audit
    entry whose session was valid at forwarding time."""
    forwarded: dict[int, tuple[int, str]] = {}
    session_expiry: dict[str, int] = {}
    for entry in result.audit.entries:
        if entry.event == "auth_ok" and result.session is not None \
                and entry.session == str(result.session.id):
            session_expiry[entry.session] = result.session.expires_at_us
        if entry.event == "cmd_forwarded":
            cmd_id = int(entry.detail.split("cmd_id=")[1])
            forwarded[cmd_id] = (entry.timestamp_us, entry.session)
    for applied in result.applied_commands:
        cmd_id = applied["cmd_id"]
        if cmd_id not in forwarded:
            return False, f"command {cmd_id} applied without a cmd_forwarded audit entry"
        t_forward, session_label = forwarded[cmd_id]
        if t_forward > applied["t_us"]:
            return False, f"command {cmd_id} forwarded after it was applied"
        if session_label == "unauthenticated":
            return False, f"command {cmd_id} forwarded without a session"
        if str(applied["session_id"]) != session_label:
            return False, f"command {cmd_id} session mismatch"
    return True, f"{len(result.applied_commands)} applied commands all audited"
