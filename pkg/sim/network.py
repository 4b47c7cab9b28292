"""Message-level channel models for C-V2X, the 5G fallback and the SoR backhaul.

A message either arrives at an integer millisecond, is dropped, or never
leaves because the endpoints are out of radio coverage. Arrival time is
``t_send + base latency + uniform jitter + queueing delay``, where queueing
comes from a per-directed-link token bucket.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from sim.simcore import RngStream, SimTime
from sim.world import Vec2, distance

logger = logging.getLogger("sim.network")


class ChannelKind(str, Enum):
    CV2X = "cv2x"
    FIVE_G = "fiveg"
    BACKHAUL = "backhaul"


class DeliveryStatus(str, Enum):
    DELIVERED = "delivered"
    DROPPED = "dropped"
    OUT_OF_COVERAGE = "out_of_coverage"


@dataclass(frozen=True)
class ChannelSpec:
    kind: ChannelKind
    base_latency_ms: int
    jitter_min_ms: int
    jitter_max_ms: int
    loss_prob: float
    coverage_m: float
    bandwidth_Bps: float
    outages: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.jitter_min_ms <= self.jitter_max_ms:
            raise ValueError("channel jitter bounds must satisfy 0 <= jitter_min_ms <= jitter_max_ms")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("channel loss_prob must lie in [0, 1]")
        if self.coverage_m <= 0:
            raise ValueError("channel coverage_m must be > 0")
        if self.bandwidth_Bps <= 0:
            raise ValueError("channel bandwidth_Bps must be > 0")
        if self.base_latency_ms < 0:
            raise ValueError("channel base_latency_ms must be >= 0")

    @property
    def mean_latency_ms(self) -> float:
        return self.base_latency_ms + (self.jitter_min_ms + self.jitter_max_ms) / 2.0

    def in_outage(self, start: SimTime, end: SimTime) -> bool:
        """True if ``[start, end]`` overlaps any outage window ``[a, b)``."""
        return any(start < b and end >= a for a, b in self.outages)


def default_cv2x() -> ChannelSpec:
    return ChannelSpec(ChannelKind.CV2X, 20, 3, 10, 0.0, 300.0, 1.5e6)


def default_fiveg() -> ChannelSpec:
    return ChannelSpec(ChannelKind.FIVE_G, 40, 5, 30, 0.001, math.inf, 1.5e6)


def default_backhaul() -> ChannelSpec:
    return ChannelSpec(ChannelKind.BACKHAUL, 5, 0, 2, 0.0, math.inf, 12.5e6)


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    t_send: SimTime
    size_bytes: int
    payload: Any

    def __post_init__(self) -> None:
        if self.size_bytes <= 0:
            raise ValueError("message size_bytes must be > 0")


@dataclass(frozen=True)
class Delivery:
    status: DeliveryStatus
    arrival: Optional[SimTime] = None
    queue_delay_ms: int = 0


@dataclass
class LinkState:
    backlog_bytes: float = 0.0
    last_update_ms: SimTime = 0


@dataclass
class ChannelStats:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    out_of_coverage: int = 0
    bytes_delivered: int = 0


LinkKey = Tuple[str, str, ChannelKind]


@dataclass
class LinkLedger:
    """Per-link token buckets plus per-second byte counts for rate checks."""

    links: Dict[LinkKey, LinkState] = field(default_factory=dict)
    per_second: Dict[Tuple[LinkKey, int], int] = field(default_factory=dict)

    def _drained(self, link: LinkKey, t: SimTime, spec: ChannelSpec) -> float:
        state = self.links.get(link)
        if state is None:
            return 0.0
        elapsed_s = max(0, t - state.last_update_ms) / 1000.0
        return max(0.0, state.backlog_bytes - spec.bandwidth_Bps * elapsed_s)

    def queue_delay_ms(self, link: LinkKey, t: SimTime, spec: ChannelSpec) -> int:
        """Queueing delay a message sent on ``link`` at ``t`` would see; changes nothing."""
        backlog = self._drained(link, t, spec)
        return max(0, math.ceil(backlog * 1000.0 / spec.bandwidth_Bps - 1e-9))

    def account_bandwidth(self, link: LinkKey, msg: Message, spec: ChannelSpec) -> int:
        """Queueing delay (whole ms, rounded up) for ``msg`` on ``link`` at ``msg.t_send``."""
        delay_ms = self.queue_delay_ms(link, msg.t_send, spec)
        backlog = self._drained(link, msg.t_send, spec)
        state = self.links.setdefault(link, LinkState(last_update_ms=msg.t_send))
        state.last_update_ms = msg.t_send
        state.backlog_bytes = backlog + msg.size_bytes
        start_second = (msg.t_send + delay_ms) // 1000
        key = (link, start_second)
        self.per_second[key] = self.per_second.get(key, 0) + msg.size_bytes
        return delay_ms

    def max_rate_Bps(self, kind: Optional[ChannelKind] = None) -> int:
        rates: List[int] = [
            n for (link, _sec), n in self.per_second.items() if kind is None or link[2] is kind
        ]
        return max(rates) if rates else 0


class Network:
    """Channel specs, per-link bandwidth state and delivery statistics for one run."""

    def __init__(self, specs: Dict[ChannelKind, ChannelSpec], streams: Dict[ChannelKind, RngStream]) -> None:
        self.specs = dict(specs)
        self.streams = dict(streams)
        self.ledger = LinkLedger()
        self.stats: Dict[ChannelKind, ChannelStats] = {k: ChannelStats() for k in self.specs}

    def send(self, msg: Message, kind: ChannelKind, src_pos: Vec2, dst_pos: Vec2) -> Delivery:
        spec = self.specs[kind]
        result = deliver(msg, spec, src_pos, dst_pos, self.streams[kind], self.ledger)
        st = self.stats[kind]
        st.sent += 1
        if result.status is DeliveryStatus.DELIVERED:
            st.delivered += 1
            st.bytes_delivered += msg.size_bytes
        elif result.status is DeliveryStatus.DROPPED:
            st.dropped += 1
        else:
            st.out_of_coverage += 1
        return result


def deliver(
    msg: Message,
    spec: ChannelSpec,
    src_pos: Vec2,
    dst_pos: Vec2,
    rng: RngStream,
    ledger: Optional[LinkLedger] = None,
) -> Delivery:
    if distance(src_pos, dst_pos) > spec.coverage_m:
        return Delivery(DeliveryStatus.OUT_OF_COVERAGE)
    # loss and jitter are always drawn, delivered or not
    lost = rng.random() < spec.loss_prob
    jitter = rng.uniform_int(spec.jitter_min_ms, spec.jitter_max_ms)
    if lost:
        return Delivery(DeliveryStatus.DROPPED)
    link = (msg.src, msg.dst, spec.kind)
    queue = ledger.queue_delay_ms(link, msg.t_send, spec) if ledger is not None else 0
    arrival = msg.t_send + spec.base_latency_ms + jitter + queue
    if spec.in_outage(msg.t_send, arrival):
        logger.debug("%s message %s->%s lost to outage at t=%d", spec.kind.value, msg.src, msg.dst, msg.t_send)
        return Delivery(DeliveryStatus.DROPPED)
    if ledger is not None:
        ledger.account_bandwidth(link, msg, spec)
    return Delivery(DeliveryStatus.DELIVERED, arrival=arrival, queue_delay_ms=queue)
