import math

import numpy as np
import pytest

from ptxlink.frames import CommandMessage
from ptxlink.robot import (
    HALTED,
    TELEOP,
    TICK_S,
    CommandRejected,
    InspectionRoute,
    Obstacle,
    RobotAgent,
    RobotState,
    RouteAborted,
    Waypoint,
    apply_command,
    check_traversal,
    drain_battery,
    generate_telemetry,
    run_route,
)
from ptxlink.seeding import RngHub
from ptxlink.sim import Scheduler


def make_agent(seed=1, world=None, state=None, on_telemetry=None):
    sched = Scheduler()
    agent = RobotAgent(sched, RngHub(seed).rng("robot"), world=world, state=state,
                       on_telemetry=on_telemetry)
    return sched, agent


# --- kinematics ----------------------------------------------------------------


def test_constant_velocity_euler_advance():
    state = RobotState(mode=TELEOP)
    cmd = CommandMessage("run", vx=1.0, duration_ms=2000)
    for _ in range(40):  # 2 s at 50 ms ticks
        state = apply_command(state, cmd, TICK_S)
    assert state.x == pytest.approx(2.0, abs=1e-9)
    assert state.y == pytest.approx(0.0, abs=1e-12)


def test_velocity_clamped_to_gait_cap():
    state = RobotState(mode=TELEOP)
    cmd = CommandMessage("walk", vx=1.4)  # walk cap is 1.0 m/s
    state = apply_command(state, cmd, TICK_S)
    assert state.speed == pytest.approx(1.0)
    assert state.x == pytest.approx(1.0 * TICK_S)


def test_depleted_battery_rejects_commands():
    state = RobotState(battery_fraction=0.0, mode=HALTED)
    with pytest.raises(CommandRejected):
        apply_command(state, CommandMessage("walk", vx=0.5), TICK_S)


def test_heading_rotates_velocity_frame():
    state = RobotState(heading=math.pi / 2, mode=TELEOP)
    state = apply_command(state, CommandMessage("walk", vx=1.0), TICK_S)
    assert state.x == pytest.approx(0.0, abs=1e-12)
    assert state.y == pytest.approx(TICK_S)


def test_distance_bounded_by_gait_cap():
    state = RobotState(mode=TELEOP)
    cmd = CommandMessage("run", vx=1.5, vy=0.8)  # setpoint above the run cap
    ticks = 100
    for _ in range(ticks):
        state = apply_command(state, cmd, TICK_S)
    travelled = math.hypot(state.x, state.y)
    assert travelled <= 1.5 * ticks * TICK_S + 1e-9


# --- battery ------------------------------------------------------------------


def test_walk_endurance_9000_seconds():
    state = RobotState(gait="walk")
    t = 0.0
    while state.mode != HALTED:
        state = drain_battery(state, TICK_S, "walk")
        t += TICK_S
    assert abs(t - 9000.0) <= 1.0
    assert state.battery_fraction == 0.0
    assert state.speed == 0.0


def test_idle_drain_scales_linearly():
    state = RobotState()
    state = drain_battery(state, 9000.0, "idle")  # 0.1x drain
    assert state.battery_fraction == pytest.approx(0.9)


def test_zero_dt_no_change():
    state = RobotState(battery_fraction=0.5)
    assert drain_battery(state, 0.0, "run") == state


def test_battery_never_increases():
    state = RobotState()
    rng = np.random.default_rng(3)
    last = state.battery_fraction
    for _ in range(500):
        gait = ("idle", "walk", "run", "stairs")[rng.integers(0, 4)]
        state = drain_battery(state, float(rng.random()), gait)
        assert state.battery_fraction <= last
        last = state.battery_fraction


# --- obstacle traversal ----------------------------------------------------------


def test_stairs_gait_clears_12cm_step():
    assert check_traversal(Obstacle((0, 0, 1, 1), 0.12), "stairs")


def test_13cm_step_blocks_even_stairs():
    assert not check_traversal(Obstacle((0, 0, 1, 1), 0.13), "stairs")


def test_flat_ground_always_traversable():
    for gait in ("idle", "walk", "run", "stairs"):
        assert check_traversal(Obstacle((0, 0, 1, 1), 0.0), gait)


def test_walk_clears_only_low_steps():
    assert check_traversal(Obstacle((0, 0, 1, 1), 0.05), "walk")
    assert not check_traversal(Obstacle((0, 0, 1, 1), 0.06), "walk")


# --- routes -----------------------------------------------------------------------


def route_of(*points):
    return InspectionRoute(tuple(Waypoint(*p) for p in points))


def test_route_events_in_order():
    sched, agent = make_agent()
    route = route_of((1.0, 0.0, 0.0, "image"), (1.0, 1.0, 0.0, "image"), (2.0, 1.0, 0.0, None))
    events = run_route(agent, route)
    names = [name for _, name, _ in events]
    assert names == [
        "waypoint_reached", "capture_done",
        "waypoint_reached", "capture_done",
        "waypoint_reached", "route_complete",
    ]
    assert (agent.state.x, agent.state.y) == (2.0, 1.0)


def test_blocked_segment_aborts_route():
    world = [Obstacle((0.4, -0.5, 0.6, 0.5), 0.2)]
    sched, agent = make_agent(world=world)
    route = route_of((1.0, 0.0, 0.0, None), (2.0, 0.0, 0.0, None))
    with pytest.raises(RouteAborted) as excinfo:
        run_route(agent, route)
    assert excinfo.value.reason == "blocked"
    names = [name for _, name, _ in agent.events]
    assert "blocked" in names
    assert agent.state.x == 0.0  # never entered the blocked segment


def test_traversable_obstacle_does_not_block():
    world = [Obstacle((0.4, -0.5, 0.6, 0.5), 0.05)]  # walkable step
    sched, agent = make_agent(world=world)
    events = run_route(agent, route_of((1.0, 0.0, 0.0, None)))
    assert [n for _, n, _ in events] == ["waypoint_reached", "route_complete"]


def test_teleop_command_preempts_route():
    sched, agent = make_agent()
    agent.start_route(route_of((100.0, 0.0, 0.0, None)))
    sched.run(until=1_000_000)
    assert agent.state.mode != TELEOP
    agent.handle_command(CommandMessage("walk", vx=0.1, duration_ms=100), cmd_id=9)
    assert agent.state.mode == TELEOP
    names = [n for _, n, _ in agent.events]
    assert "route_suspended" in names and "command_applied" in names
    sched.run(until=2_000_000)
    assert agent._route is None


def test_route_determinism_same_seed_same_events():
    def run_once():
        sched, agent = make_agent(seed=77)
        route = route_of((1.0, 0.0, 0.5, "image"), (0.0, 1.0, 0.2, "thermal_stub"))
        return run_route(agent, route)

    assert run_once() == run_once()


def test_dwell_takes_simulated_time():
    sched, agent = make_agent()
    run_route(agent, route_of((0.5, 0.0, 2.0, None), (1.0, 0.0, 0.0, None)))
    waypoint_times = [t for t, n, _ in agent.events if n == "waypoint_reached"]
    assert waypoint_times[1] - waypoint_times[0] >= 2_000_000


# --- telemetry ----------------------------------------------------------------------


def test_image_sizes_mean_within_two_percent():
    rng = RngHub(5).rng("img")
    state = RobotState()
    sizes = [generate_telemetry(state, "image", rng, 0).payload_size for _ in range(1760)]
    assert np.mean(sizes) == pytest.approx(222_800, rel=0.02)


def test_sigma_zero_every_image_exact():
    rng = RngHub(5).rng("img")
    record = generate_telemetry(RobotState(), "image", rng, 0, image_sigma_rel=0.0)
    assert record.payload_size == 222_800


def test_pose_record_small_and_schema_complete():
    rng = RngHub(5).rng("r")
    record = generate_telemetry(RobotState(x=1.5, y=-2.0, gait="walk"), "pose", rng, 42)
    assert record.payload_size <= 256
    channels = record.channels()
    assert {"x", "y", "heading", "battery"} <= set(channels)
    assert record.timestamp_us == 42


def test_thermal_stub_carries_scalar_channel():
    rng = RngHub(5).rng("r")
    record = generate_telemetry(RobotState(), "thermal_stub", rng, 0)
    assert record.kind == "thermal"
    assert "pipe_temp_C" in record.channels()
