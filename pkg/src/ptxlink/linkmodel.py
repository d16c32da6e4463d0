"""Stochastic wireless link and processing-time models.

A link is described by a base-delay distribution (access + propagation
jitter), a per-byte serialization cost, and independent loss / corruption
probabilities. Delay dispersion is parameterized as IQR/median of a
log-normal, which matches the right-skewed spread of measured mobile-network
latencies; the family degenerates to a constant when the ratio is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable

import numpy as np

from .sim import Scheduler

_Z75 = 0.6744897501960817  # 75th percentile of the standard normal

MIN_DELAY_US = 1.0
MIN_PROCESSING_MS = 1.0


@dataclass(frozen=True)
class DelayDist:
    """Log-normal delay spec: median plus IQR/median dispersion ratio."""

    median_us: float
    iqr_ratio: float = 0.0

    def __post_init__(self) -> None:
        if self.median_us <= 0:
            raise ValueError(f"median must be positive, got {self.median_us}")
        if self.iqr_ratio < 0:
            raise ValueError(f"iqr_ratio must be >= 0, got {self.iqr_ratio}")
        object.__setattr__(self, "_sigma", _sigma(self.iqr_ratio))

    @classmethod
    def from_mean(cls, mean_us: float, iqr_ratio: float = 0.0) -> "DelayDist":
        """Build a spec whose *mean* (not median) is the given value."""
        sigma = _sigma(iqr_ratio)
        return cls(median_us=mean_us / math.exp(sigma * sigma / 2.0), iqr_ratio=iqr_ratio)

    @property
    def sigma(self) -> float:
        return self._sigma  # cached at construction

    @property
    def mean_us(self) -> float:
        s = self.sigma
        return self.median_us * math.exp(s * s / 2.0)

    def sample(self, rng: np.random.Generator) -> float:
        """Draw one strictly positive delay in microseconds."""
        if self.iqr_ratio == 0.0:
            return max(self.median_us, MIN_DELAY_US)
        value = self.median_us * math.exp(self.sigma * rng.standard_normal())
        return max(value, MIN_DELAY_US)

    def scaled(self, factor: float) -> "DelayDist":
        return replace(self, median_us=self.median_us * factor)


def _sigma(iqr_ratio: float) -> float:
    return math.asinh(iqr_ratio / 2.0) / _Z75


@dataclass(frozen=True)
class LinkProfile:
    """One wireless hop: delay model, bandwidth proxy, and error behavior."""

    name: str
    base_delay: DelayDist
    per_byte_us: float = 0.0
    loss_prob: float = 0.0
    corrupt_prob: float = 0.0
    jitter_seed_domain: str = ""
    uncalibrated: bool = False
    # Headline whole-transfer calibration carried by the built-in mobile
    # profiles: per_byte_us is tuned so a transfer of ref size lands on the
    # target median end to end.
    transfer_ref_bytes: int | None = None
    transfer_target_ms: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"loss_prob out of [0,1]: {self.loss_prob}")
        if not 0.0 <= self.corrupt_prob <= 1.0:
            raise ValueError(f"corrupt_prob out of [0,1]: {self.corrupt_prob}")
        if self.loss_prob + self.corrupt_prob > 1.0:
            raise ValueError(
                f"loss_prob + corrupt_prob > 1 on link {self.name!r}: "
                f"{self.loss_prob} + {self.corrupt_prob}"
            )
        if self.per_byte_us < 0:
            raise ValueError(f"per_byte_us must be >= 0, got {self.per_byte_us}")

    @property
    def seed_domain(self) -> str:
        return self.jitter_seed_domain or self.name

    def scaled(self, load_factor: float) -> "LinkProfile":
        """Profile under a network load multiplier (affects delay only)."""
        if load_factor == 1.0:
            return self
        return replace(
            self,
            base_delay=self.base_delay.scaled(load_factor),
            per_byte_us=self.per_byte_us * load_factor,
        )


def sample_delay(profile: LinkProfile, size: int, rng: np.random.Generator) -> float:
    """One-way delay in µs for a transfer of ``size`` bytes over ``profile``."""
    if size < 1:
        raise ValueError(f"size must be >= 1 byte, got {size}")
    return profile.base_delay.sample(rng) + profile.per_byte_us * size


@dataclass(frozen=True)
class DeploymentProfile:
    """Server-side processing-time model for one deployment strategy.

    link_load_factor reproduces the network-load fluctuation observed between
    measurement runs of the different strategies; it scales link delays during
    the run and is not a causal property of the deployment itself.
    """

    name: str
    processing: DelayDist  # milliseconds
    link_load_factor: float = 1.0
    uncalibrated: bool = False

    def __post_init__(self) -> None:
        if self.link_load_factor <= 0:
            raise ValueError(f"link_load_factor must be > 0, got {self.link_load_factor}")


def sample_processing(profile: DeploymentProfile, rng: np.random.Generator) -> float:
    """Processing time in ms, truncated below at 1 ms."""
    return max(profile.processing.sample(rng), MIN_PROCESSING_MS)


LOST = "lost"
DELIVERED = "delivered"
CORRUPTED = "corrupted"


@dataclass(slots=True)
class DeliveryOutcome:
    """Resolution of one frame transmission on one link."""

    status: str  # delivered | lost | corrupted
    send_time: int
    deliver_time: int | None
    link: str
    size: int
    seq: int = 0
    msg_type: int = 0

    def to_record(self) -> dict:
        return {
            "status": self.status,
            "send_time": self.send_time,
            "deliver_time": self.deliver_time,
            "link": self.link,
            "size": self.size,
            "seq": self.seq,
            "msg_type": self.msg_type,
        }


class Link:
    """Directional stateful link: serializes frames at per_byte_us and adds a
    sampled base delay; loss and corruption are drawn independently per frame.

    The serialization component queues (a frame waits for the wire), the base
    component does not (frames may overlap in flight), so delivery order can
    differ from send order under jitter.
    """

    def __init__(
        self,
        name: str,
        profile: LinkProfile,
        scheduler: Scheduler,
        delay_rng: np.random.Generator,
        error_rng: np.random.Generator,
        on_outcome: Callable[[DeliveryOutcome], None] | None = None,
    ) -> None:
        self.name = name
        self.profile = profile
        self.scheduler = scheduler
        self.delay_rng = delay_rng
        self.error_rng = error_rng
        self.on_outcome = on_outcome
        self.busy_until = 0
        self.outage_until = 0  # link down (all frames lost) before this time
        # hot-path constants
        self._base_median = profile.base_delay.median_us
        self._base_sigma = profile.base_delay.sigma
        self._per_byte = profile.per_byte_us
        self._loss = profile.loss_prob
        self._loss_plus_corrupt = profile.loss_prob + profile.corrupt_prob
        self._normal = delay_rng.standard_normal
        self._roll = error_rng.random

    def set_outage(self, until_us: int) -> None:
        self.outage_until = max(self.outage_until, until_us)

    def delay_hint_us(self, size: int) -> float:
        """Median one-way delay for a frame of ``size`` bytes (no queueing)."""
        return self._base_median + self._per_byte * size

    def transmit(
        self,
        data: bytes,
        deliver: Callable[[bytes], None],
        seq: int = 0,
        msg_type: int = 0,
    ) -> DeliveryOutcome:
        now = self.scheduler.clock.now
        start = now if now > self.busy_until else self.busy_until
        serialize = self._per_byte * len(data)
        self.busy_until = (start + math.ceil(serialize)) if serialize else start

        corrupted = False
        if self._loss_plus_corrupt or now < self.outage_until:
            roll = self._roll()
            if now < self.outage_until or roll < self._loss:
                outcome = DeliveryOutcome(LOST, now, None, self.name, len(data), seq, msg_type)
                if self.on_outcome is not None:
                    self.on_outcome(outcome)
                return outcome
            corrupted = roll < self._loss_plus_corrupt
            if corrupted:
                data = _flip_random_bit(data, self.error_rng)

        base = self._base_median
        if self._base_sigma:
            base *= math.exp(self._base_sigma * self._normal())
        elif base < MIN_DELAY_US:
            base = MIN_DELAY_US
        deliver_time = int(start + serialize + base + 0.5)
        if deliver_time <= now:
            deliver_time = now + 1
        status = CORRUPTED if corrupted else DELIVERED
        outcome = DeliveryOutcome(status, now, deliver_time, self.name, len(data), seq, msg_type)
        self.scheduler.schedule(partial(deliver, data), deliver_time)
        if self.on_outcome is not None:
            self.on_outcome(outcome)
        return outcome


def _flip_random_bit(data: bytes, rng: np.random.Generator) -> bytes:
    """Flip one bit in the payload region (or the CRC trailer when empty) so
    the CRC check fails downstream but the header still parses."""
    from .frames import HEADER_SIZE

    mutable = bytearray(data)
    if len(mutable) > HEADER_SIZE + 4:
        pos = HEADER_SIZE + int(rng.integers(0, len(mutable) - HEADER_SIZE - 4))
    else:
        pos = len(mutable) - 1
    mutable[pos] ^= 1 << int(rng.integers(0, 8))
    return bytes(mutable)
