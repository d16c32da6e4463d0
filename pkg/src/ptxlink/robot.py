"""Simulated quadruped inspection robot.

Planar kinematics with heading, integrated with explicit Euler on a fixed
50 ms tick; gait-dependent speed caps and battery drain; waypoint routes with
dwell-and-capture; teleop commands preempt autonomous routes. The robot is a
single actor driven by scheduler events — commands and route steps serialize
through its tick.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .aggregation import TelemetryRecord
from .frames import CommandMessage
from .sim import Scheduler

TICK_S = 0.05
TICK_US = 50_000

GAIT_SPEED_CAPS = {"idle": 0.0, "walk": 1.0, "run": 1.5, "stairs": 0.3}
GAIT_DRAIN_FACTOR = {"idle": 0.1, "walk": 1.0, "run": 1.6, "stairs": 2.0}
WALK_ENDURANCE_S = 9000.0  # full battery to empty at continuous walk

STEP_LIMIT_M = {"idle": 0.0, "walk": 0.05, "run": 0.05, "stairs": 0.12}

IMAGE_MEAN_BYTES = 222_800
IMAGE_SIGMA_REL = 0.10
IMAGE_MIN_BYTES = 1024

AUTONOMOUS = "autonomous_route"
TELEOP = "teleop"
HALTED = "halted"

_PATTERN = bytes(range(256))


class CommandRejected(Exception):
    pass


class RouteAborted(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class RobotState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    gait: str = "idle"
    speed: float = 0.0
    battery_fraction: float = 1.0
    mode: str = AUTONOMOUS


@dataclass(frozen=True)
class Obstacle:
    span: tuple[float, float, float, float]  # x0, y0, x1, y1 box
    height: float
    kind: str = "step"

    def __post_init__(self) -> None:
        if self.height < 0:
            raise ValueError(f"obstacle height must be >= 0, got {self.height}")


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    dwell_s: float = 0.0
    capture: str | None = None  # image | thermal_stub | audio_stub


@dataclass(frozen=True)
class InspectionRoute:
    waypoints: tuple[Waypoint, ...]

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValueError("route needs at least one waypoint")
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            if (a.x, a.y) == (b.x, b.y):
                raise ValueError(f"consecutive duplicate waypoint at ({a.x}, {a.y})")


def clamp_velocities(cmd: CommandMessage, gait: str) -> tuple[float, float, float]:
    """Scale the planar velocity down to the gait's speed cap."""
    cap = GAIT_SPEED_CAPS[gait]
    speed = math.hypot(cmd.vx, cmd.vy)
    if speed <= cap or speed == 0.0:
        return cmd.vx, cmd.vy, cmd.yaw_rate
    scale = cap / speed
    return cmd.vx * scale, cmd.vy * scale, cmd.yaw_rate


def drain_battery(state: RobotState, dt: float, gait: str) -> RobotState:
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return state
    drained = state.battery_fraction - dt * GAIT_DRAIN_FACTOR[gait] / WALK_ENDURANCE_S
    if drained <= 1e-12:
        return replace(state, battery_fraction=0.0, speed=0.0, mode=HALTED)
    return replace(state, battery_fraction=drained)


def apply_command(state: RobotState, cmd: CommandMessage, dt: float = TICK_S) -> RobotState:
    """One Euler step under a teleop command."""
    if state.mode == HALTED or state.battery_fraction <= 0.0:
        raise CommandRejected("robot is halted" if state.mode == HALTED else "battery depleted")
    vx, vy, yaw_rate = clamp_velocities(cmd, cmd.gait)
    cos_h = math.cos(state.heading)
    sin_h = math.sin(state.heading)
    moved = replace(
        state,
        x=state.x + (vx * cos_h - vy * sin_h) * dt,
        y=state.y + (vx * sin_h + vy * cos_h) * dt,
        heading=state.heading + yaw_rate * dt,
        gait=cmd.gait,
        speed=math.hypot(vx, vy),
        mode=TELEOP,
    )
    return drain_battery(moved, dt, cmd.gait)


def check_traversal(obstacle: Obstacle, gait: str) -> bool:
    """True when the gait can clear the obstacle's step height."""
    return obstacle.height <= STEP_LIMIT_M[gait]


def _segment_hits_box(p0: tuple[float, float], p1: tuple[float, float],
                      box: tuple[float, float, float, float]) -> bool:
    x0, y0, x1, y1 = min(box[0], box[2]), min(box[1], box[3]), max(box[0], box[2]), max(box[1], box[3])
    # Liang-Barsky clip of the segment against the box
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    t_min, t_max = 0.0, 1.0
    for p, q in ((-dx, p0[0] - x0), (dx, x1 - p0[0]), (-dy, p0[1] - y0), (dy, y1 - p0[1])):
        if p == 0.0:
            if q < 0.0:
                return False
            continue
        t = q / p
        if p < 0.0:
            t_min = max(t_min, t)
        else:
            t_max = min(t_max, t)
        if t_min > t_max:
            return False
    return True


def blocking_obstacle(p0: tuple[float, float], p1: tuple[float, float],
                      world: list[Obstacle], gait: str) -> Obstacle | None:
    for obstacle in world:
        if _segment_hits_box(p0, p1, obstacle.span) and not check_traversal(obstacle, gait):
            return obstacle
    return None


def generate_telemetry(
    state: RobotState,
    kind: str,
    rng: np.random.Generator,
    now_us: int,
    source: str = "robot",
    image_mean: int = IMAGE_MEAN_BYTES,
    image_sigma_rel: float = IMAGE_SIGMA_REL,
) -> TelemetryRecord:
    if kind == "image":
        if image_sigma_rel == 0.0:
            size = image_mean
        else:
            size = int(round(rng.normal(image_mean, image_sigma_rel * image_mean)))
            size = max(size, IMAGE_MIN_BYTES)
        payload = (_PATTERN * (size // 256 + 1))[:size]
        return TelemetryRecord(source, "image", now_us, payload)
    if kind == "pose":
        doc = {
            "x": round(state.x, 4),
            "y": round(state.y, 4),
            "heading": round(state.heading, 4),
            "gait": state.gait,
            "battery": round(state.battery_fraction, 6),
        }
        return TelemetryRecord(source, "pose", now_us, json.dumps(doc).encode())
    if kind == "battery":
        doc = {"battery": round(state.battery_fraction, 6)}
        return TelemetryRecord(source, "battery", now_us, json.dumps(doc).encode())
    if kind == "thermal_stub":
        doc = {"pipe_temp_C": round(55.0 + 10.0 * rng.random(), 2)}
        return TelemetryRecord(source, "thermal", now_us, json.dumps(doc).encode())
    if kind == "audio_stub":
        doc = {"leak_db": round(20.0 + 15.0 * rng.random(), 2)}
        return TelemetryRecord(source, "audio", now_us, json.dumps(doc).encode())
    raise ValueError(f"unknown telemetry kind {kind!r}")


class RobotAgent:
    """Event-driven robot actor: routes, teleop commands, telemetry."""

    def __init__(
        self,
        scheduler: Scheduler,
        rng: np.random.Generator,
        world: list[Obstacle] | None = None,
        state: RobotState | None = None,
        on_telemetry: Callable[[TelemetryRecord], None] | None = None,
        pose_period_ticks: int = 10,
        name: str = "robot",
    ) -> None:
        self.scheduler = scheduler
        self.rng = rng
        self.world = world or []
        self.state = state or RobotState()
        self.on_telemetry = on_telemetry
        self.pose_period_ticks = pose_period_ticks
        self.name = name

        self.events: list[tuple[int, str, dict]] = []
        self.applied_commands: list[dict] = []  # audit trail for zero-bypass replay

        self._route: InspectionRoute | None = None
        self._route_index = 0
        self._dwell_until: int | None = None
        self._segment_checked = False
        self._cmd: CommandMessage | None = None
        self._cmd_expires_us = 0
        self._streaming = False
        self._tick_scheduled = False
        self._tick_count = 0

    # --- public API ------------------------------------------------------

    def _emit(self, name: str, **detail) -> None:
        self.events.append((self.scheduler.clock.now, name, detail))

    def start_route(self, route: InspectionRoute) -> None:
        if self.state.mode == HALTED:
            raise RouteAborted("battery")
        self._route = route
        self._route_index = 0
        self._dwell_until = None
        self._segment_checked = False
        self.state = replace(self.state, mode=AUTONOMOUS, gait="walk")
        self._ensure_tick()

    def start_streaming(self) -> None:
        self._streaming = True
        self._ensure_tick()

    def stop_streaming(self) -> None:
        self._streaming = False

    def handle_command(self, cmd: CommandMessage, cmd_id: int = 0, session_id: int = 0) -> None:
        """Teleop command arrival: preempts any route, applies for its duration.

        Raises CommandRejected when the robot cannot act (halted / depleted).
        """
        if self.state.mode == HALTED or self.state.battery_fraction <= 0.0:
            self._emit("command_rejected", cmd_id=cmd_id, reason="halted")
            raise CommandRejected("robot is halted")
        if self._route is not None:
            self._emit("route_suspended", at_waypoint=self._route_index)
            self._route = None
        self.state = replace(self.state, mode=TELEOP)
        self._cmd = cmd
        self._cmd_expires_us = self.scheduler.clock.now + cmd.duration_ms * 1000
        self.applied_commands.append(
            {"t_us": self.scheduler.clock.now, "cmd_id": cmd_id, "session_id": session_id,
             "gait": cmd.gait, "vx": cmd.vx, "vy": cmd.vy}
        )
        self._emit("command_applied", cmd_id=cmd_id)
        self._ensure_tick()

    # --- tick loop --------------------------------------------------------

    def _ensure_tick(self) -> None:
        if not self._tick_scheduled:
            self._tick_scheduled = True
            self.scheduler.schedule_in(self._tick, TICK_US)

    def _tick(self) -> None:
        self._tick_scheduled = False
        if self.state.mode == HALTED:
            return
        self._tick_count += 1

        if self._cmd is not None:
            self._tick_teleop()
        elif self._route is not None:
            self._tick_route()

        if self._streaming and self.on_telemetry is not None \
                and self._tick_count % self.pose_period_ticks == 0:
            self.on_telemetry(generate_telemetry(self.state, "pose", self.rng,
                                                 self.scheduler.clock.now, self.name))

        if self._cmd is not None or self._route is not None or self._streaming:
            if self.state.mode != HALTED:
                self._ensure_tick()

    def _tick_teleop(self) -> None:
        try:
            self.state = apply_command(self.state, self._cmd, TICK_S)
        except CommandRejected:
            self._cmd = None
            return
        if self.scheduler.clock.now + TICK_US > self._cmd_expires_us:
            self._cmd = None
            self.state = replace(self.state, speed=0.0, gait="idle")

    def _tick_route(self) -> None:
        route = self._route
        now = self.scheduler.clock.now

        if self._dwell_until is not None:
            if now < self._dwell_until:
                self.state = drain_battery(self.state, TICK_S, "idle")
                self._check_battery_abort()
                return
            wp = route.waypoints[self._route_index]
            if wp.capture is not None:
                if self.on_telemetry is not None:
                    self.on_telemetry(generate_telemetry(self.state, wp.capture, self.rng, now, self.name))
                self._emit("capture_done", waypoint=self._route_index, capture=wp.capture)
            self._dwell_until = None
            self._route_index += 1
            self._segment_checked = False
            if self._route_index >= len(route.waypoints):
                self._finish_route()
            return

        wp = route.waypoints[self._route_index]
        pos = (self.state.x, self.state.y)
        target = (wp.x, wp.y)

        if not self._segment_checked:
            self._segment_checked = True
            hit = blocking_obstacle(pos, target, self.world, "walk")
            if hit is not None:
                self._emit("blocked", waypoint=self._route_index,
                           obstacle_height=hit.height, kind=hit.kind)
                self._emit("route_aborted", reason="blocked")
                self._route = None
                self.state = replace(self.state, speed=0.0, gait="idle")
                return

        dist = math.hypot(target[0] - pos[0], target[1] - pos[1])
        step = GAIT_SPEED_CAPS["walk"] * TICK_S
        if dist <= step:
            self.state = replace(self.state, x=wp.x, y=wp.y, speed=0.0)
            self._emit("waypoint_reached", waypoint=self._route_index)
            self._dwell_until = now + int(round(wp.dwell_s * 1_000_000))
            if wp.dwell_s == 0:
                # zero dwell: capture resolves on the next tick
                self._dwell_until = now
        else:
            ux = (target[0] - pos[0]) / dist
            uy = (target[1] - pos[1]) / dist
            self.state = replace(
                self.state,
                x=pos[0] + ux * step,
                y=pos[1] + uy * step,
                heading=math.atan2(uy, ux),
                gait="walk",
                speed=GAIT_SPEED_CAPS["walk"],
            )
        self.state = drain_battery(self.state, TICK_S, "walk")
        self._check_battery_abort()

    def _check_battery_abort(self) -> None:
        if self.state.mode == HALTED and self._route is not None:
            self._emit("route_aborted", reason="battery")
            self._route = None

    def _finish_route(self) -> None:
        self._emit("route_complete")
        self._route = None
        self.state = replace(self.state, speed=0.0, gait="idle")


def run_route(agent: RobotAgent, route: InspectionRoute) -> list[tuple[int, str, dict]]:
    """Drive the scheduler until the route resolves; raises RouteAborted."""
    start = len(agent.events)
    agent.start_route(route)
    while agent._route is not None:
        if not agent.scheduler.step():
            break
    events = agent.events[start:]
    for _, name, detail in events:
        if name == "route_aborted":
            raise RouteAborted(detail["reason"])
    return events


def load_route(path: str) -> InspectionRoute:
    with open(path) as fh:
        items = json.load(fh)
    return InspectionRoute(tuple(
        Waypoint(float(w["x"]), float(w["y"]), float(w.get("dwell_s", 0.0)), w.get("capture"))
        for w in items
    ))


def load_world(path: str) -> list[Obstacle]:
    with open(path) as fh:
        items = json.load(fh)
    return [
        Obstacle(tuple(float(v) for v in o["span"]), float(o["height"]), o.get("kind", "step"))
        for o in items
    ]
