"""Node graphs for the four production-platform setups.

Setups 1 and 2 are grid-connected and keep a wired shore link (fiber along
the export cable); setups 3 and 4 are off-grid, so the platform reaches shore
only over microwave or satellite backhaul. Setups 2 and 4 add wind-turbine
nodes attached to the platform over the local 5G campus network. The robot
and platform services always sit behind the jump host: there is no link from
shore into the platform zone that bypasses it.
"""

from __future__ import annotations

from dataclasses import dataclass

ROBOT = "robot"
PLATFORM_EDGE = "platform_edge"
AGGREGATION = "aggregation"
JUMP_HOST = "jump_host"
SHORE_CLOUD = "shore_cloud"
CONTROL_ROOM = "control_room"

PRESETS = ("Setup1", "Setup2", "Setup3", "Setup4")
OFF_GRID_PRESETS = ("Setup3", "Setup4")
BACKHAUL_WIRELESS = ("microwave", "satellite")


class UnknownPreset(Exception):
    pass


class TopologyError(Exception):
    pass


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    profile: str  # LinkProfile name resolved against the config


@dataclass(frozen=True)
class Topology:
    preset_id: str
    nodes: tuple[str, ...]
    links: tuple[LinkSpec, ...]

    def __post_init__(self) -> None:
        for spec in self.links:
            if spec.a not in self.nodes or spec.b not in self.nodes:
                raise TopologyError(f"link {spec} references undeclared node")
        if not _connected(self.nodes, self.links):
            raise TopologyError(f"topology {self.preset_id!r} is not a connected graph")

    def neighbors(self, node: str) -> list[tuple[str, LinkSpec]]:
        out = []
        for spec in self.links:
            if spec.a == node:
                out.append((spec.b, spec))
            elif spec.b == node:
                out.append((spec.a, spec))
        return out

    def turbine_nodes(self) -> list[str]:
        return [n for n in self.nodes if n.startswith("turbine_")]


def _connected(nodes: tuple[str, ...], links: tuple[LinkSpec, ...]) -> bool:
    if not nodes:
        return False
    seen = {nodes[0]}
    frontier = [nodes[0]]
    adj: dict[str, list[str]] = {n: [] for n in nodes}
    for spec in links:
        adj[spec.a].append(spec.b)
        adj[spec.b].append(spec.a)
    while frontier:
        cur = frontier.pop()
        for nxt in adj[cur]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return len(seen) == len(nodes)


def build_topology(preset: str, turbines: int = 2) -> Topology:
    """Construct one of the Setup1..Setup4 presets."""
    if preset not in PRESETS:
        raise UnknownPreset(f"{preset!r} is not one of {PRESETS}")

    nodes = [ROBOT, PLATFORM_EDGE, AGGREGATION, JUMP_HOST, SHORE_CLOUD, CONTROL_ROOM]
    links = [
        LinkSpec(ROBOT, PLATFORM_EDGE, "5g_sa"),
        LinkSpec(AGGREGATION, PLATFORM_EDGE, "platform_lan"),
        LinkSpec(JUMP_HOST, PLATFORM_EDGE, "platform_lan"),
        LinkSpec(CONTROL_ROOM, SHORE_CLOUD, "wired_wan"),
    ]

    if preset in OFF_GRID_PRESETS:
        links.append(LinkSpec(JUMP_HOST, SHORE_CLOUD, "microwave"))
        links.append(LinkSpec(JUMP_HOST, SHORE_CLOUD, "satellite"))
    else:
        links.append(LinkSpec(JUMP_HOST, SHORE_CLOUD, "shore_fiber"))

    if preset in ("Setup2", "Setup4"):
        if turbines < 2:
            raise TopologyError(f"{preset} requires at least 2 turbine nodes, got {turbines}")
        for i in range(1, turbines + 1):
            name = f"turbine_{i}"
            nodes.append(name)
            links.append(LinkSpec(name, PLATFORM_EDGE, "5g_sa"))

    return Topology(preset, tuple(nodes), tuple(links))


def topology_from_config(section: dict) -> Topology:
    """Build from a config document: either {"preset": ..., "turbines": n}
    or {"custom": {"nodes": [...], "links": [[a, b, profile], ...]}}."""
    custom = section.get("custom")
    if custom is None:
        return build_topology(section.get("preset", "Setup3"),
                              turbines=int(section.get("turbines", 2)))
    nodes = tuple(custom["nodes"])
    links = tuple(LinkSpec(a, b, profile) for a, b, profile in custom["links"])
    return Topology(custom.get("preset_id", "custom"), nodes, links)


def shore_path_profiles(topology: Topology) -> set[str]:
    """Profile names of all links that cross between the platform side and
    the shore side (any path from platform nodes to shore nodes uses one)."""
    shore = {SHORE_CLOUD, CONTROL_ROOM}
    out = set()
    for spec in topology.links:
        if (spec.a in shore) != (spec.b in shore):
            out.add(spec.profile)
    return out
