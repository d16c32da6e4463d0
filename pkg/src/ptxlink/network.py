"""Instantiated emulated network: stateful links over a topology plus
multi-hop forwarding paths.

Each topology edge becomes two directional Link instances (full duplex).
Paths are static shortest routes by median one-way delay; intermediate nodes
store-and-forward whole frames without inspecting them.
"""

from __future__ import annotations

import heapq
from typing import Callable, Mapping

from .linkmodel import DeliveryOutcome, Link, LinkProfile
from .seeding import RngHub
from .sim import Scheduler
from .topology import Topology

ROUTE_HINT_BYTES = 256  # nominal frame size used to weigh routes


class NoRoute(Exception):
    pass


class EmuNetwork:
    def __init__(
        self,
        topology: Topology,
        profiles: Mapping[str, LinkProfile],
        scheduler: Scheduler,
        rng_hub: RngHub,
        on_outcome: Callable[[DeliveryOutcome], None] | None = None,
        load_factor: float = 1.0,
    ) -> None:
        self.topology = topology
        self.scheduler = scheduler
        self._links: dict[tuple[str, str], Link] = {}
        for spec in topology.links:
            profile = profiles[spec.profile].scaled(load_factor)
            new_hint = profile.base_delay.median_us + profile.per_byte_us * ROUTE_HINT_BYTES
            for src, dst in ((spec.a, spec.b), (spec.b, spec.a)):
                key = (src, dst)
                if key in self._links:  # parallel edge: keep the faster one
                    if self._links[key].delay_hint_us(ROUTE_HINT_BYTES) <= new_hint:
                        continue
                name = f"{src}->{dst}:{profile.name}"
                domain = f"link.{profile.seed_domain}.{src}->{dst}"
                self._links[key] = Link(
                    name,
                    profile,
                    scheduler,
                    delay_rng=rng_hub.rng(f"{domain}.delay"),
                    error_rng=rng_hub.rng(f"{domain}.error"),
                    on_outcome=on_outcome,
                )

    def link(self, src: str, dst: str) -> Link:
        try:
            return self._links[(src, dst)]
        except KeyError:
            raise NoRoute(f"no direct link {src} -> {dst}") from None

    def route(self, src: str, dst: str) -> list[Link]:
        """Cheapest-median path as a list of directional links."""
        if src == dst:
            return []
        dist: dict[str, float] = {src: 0.0}
        prev: dict[str, tuple[str, Link]] = {}
        heap: list[tuple[float, str]] = [(0.0, src)]
        while heap:
            cost, node = heapq.heappop(heap)
            if node == dst:
                break
            if cost > dist.get(node, float("inf")):
                continue
            for (a, b), link in sorted(self._links.items()):
                if a != node:
                    continue
                step = cost + link.delay_hint_us(ROUTE_HINT_BYTES)
                if step < dist.get(b, float("inf")):
                    dist[b] = step
                    prev[b] = (a, link)
                    heapq.heappush(heap, (step, b))
        if dst not in prev:
            raise NoRoute(f"no path {src} -> {dst}")
        hops: list[Link] = []
        node = dst
        while node != src:
            a, link = prev[node]
            hops.append(link)
            node = a
        hops.reverse()
        return hops

    def path_transport(self, src: str, dst: str) -> "PathTransport":
        return PathTransport(self.route(src, dst))


class PathTransport:
    """Store-and-forward relay chain satisfying the arq.Transport protocol."""

    def __init__(self, hops: list[Link]) -> None:
        if not hops:
            raise NoRoute("empty path")
        self.hops = hops

    def delay_hint_us(self, size: int) -> float:
        return sum(h.delay_hint_us(size) for h in self.hops)

    def transmit(self, data: bytes, deliver: Callable[[bytes], None], seq: int = 0, msg_type: int = 0):
        self._forward(0, data, deliver, seq, msg_type)

    def _forward(self, index: int, data: bytes, deliver: Callable[[bytes], None], seq: int, msg_type: int):
        link = self.hops[index]
        if index == len(self.hops) - 1:
            return link.transmit(data, deliver, seq=seq, msg_type=msg_type)
        return link.transmit(
            data,
            lambda relayed: self._forward(index + 1, relayed, deliver, seq, msg_type),
            seq=seq,
            msg_type=msg_type,
        )
