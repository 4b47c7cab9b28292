"""Roadside perception units (SoRs): sensing, 20 Hz frame emission, placement and power."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple

from sim.simcore import Engine, Event, EventKind, RngStream, SimTime
from sim.world import AgentClass, GroundTruthSnapshot, Vec2, World, wrap_heading

logger = logging.getLogger("sim.sor")

FRAME_HEADER_BYTES = 200
OBJECT_BYTES = 100


class ObjectType(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    UNKNOWN = "unknown"

    @classmethod
    def from_agent(cls, agent_cls: AgentClass) -> "ObjectType":
        return cls(agent_cls.value)


class SourceKind(str, Enum):
    SOR = "SOR"
    SOV = "SOV"


@dataclass(frozen=True)
class SemanticObject:
    # Trackers are ideal: the track id is the ground-truth agent id.
    object_id: str
    timestamp: SimTime
    object_type: ObjectType
    shape: Tuple[float, float]
    location: Vec2
    speed: float
    heading: float

    def problems(self) -> List[str]:
        out: List[str] = []
        if not self.speed >= 0.0:
            out.append(f"object {self.object_id}: speed {self.speed} < 0")
        if not 0.0 <= self.heading < 2.0 * math.pi:
            out.append(f"object {self.object_id}: heading {self.heading} outside [0, 2pi)")
        if not (self.shape[0] > 0.0 and self.shape[1] > 0.0):
            out.append(f"object {self.object_id}: shape must be positive")
        return out

    @property
    def velocity(self) -> Vec2:
        return self.speed * math.cos(self.heading), self.speed * math.sin(self.heading)


@dataclass(frozen=True)
class SemanticFrame:
    source_id: str
    source_kind: SourceKind
    frame_time: SimTime
    objects: Tuple[SemanticObject, ...]

    @property
    def size_bytes(self) -> int:
        return FRAME_HEADER_BYTES + OBJECT_BYTES * len(self.objects)

    def problems(self) -> List[str]:
        out: List[str] = []
        for obj in self.objects:
            out.extend(obj.problems())
            if obj.timestamp != self.frame_time:
                out.append(f"object {obj.object_id}: timestamp {obj.timestamp} != frame_time {self.frame_time}")
        return out


@dataclass
class SoRNode:
    id: str
    position: Vec2
    coverage_each_direction_m: float = 125.0
    lateral_reach_m: float = 40.0
    axis_heading: float = 0.0
    update_rate_hz: float = 20.0
    processing_latency_ms: int = 50
    power_w: float = 800.0
    noise_sigma_m: float = 0.2
    outages: Tuple[Tuple[int, int], ...] = ()
    frames_emitted: int = 0
    bytes_emitted: int = 0

    @property
    def period_ms(self) -> int:
        return int(round(1000.0 / self.update_rate_hz))

    def covers(self, point: Vec2) -> bool:
        """Along-corridor reach on the SoR's road axis, with a lateral band."""
        dx = point[0] - self.position[0]
        dy = point[1] - self.position[1]
        ux, uy = math.cos(self.axis_heading), math.sin(self.axis_heading)
        along = dx * ux + dy * uy
        lateral = -dx * uy + dy * ux
        return abs(along) <= self.coverage_each_direction_m + 1e-9 and abs(lateral) <= self.lateral_reach_m

    def is_down(self, t: SimTime) -> bool:
        return any(a <= t < b for a, b in self.outages)


def to_semantic_object(state, t: SimTime, location: Optional[Vec2] = None) -> SemanticObject:
    return SemanticObject(
        object_id=state.id,
        timestamp=t,
        object_type=ObjectType.from_agent(state.cls),
        shape=(state.length_m, state.width_m),
        location=state.position if location is None else location,
        speed=state.speed,
        heading=wrap_heading(state.heading),
    )


def sense(
    node: SoRNode,
    snapshot: GroundTruthSnapshot,
    rng: Optional[RngStream] = None,
    noise_sigma_m: Optional[float] = None,
) -> SemanticFrame:
    # Elevated mounting: ground-level occluders do not apply here.
    sigma = node.noise_sigma_m if noise_sigma_m is None else noise_sigma_m
    objects = []
    for state in snapshot.agents:
        if not node.covers(state.position):
            continue
        loc = state.position
        if sigma > 0.0 and rng is not None:
            loc = (loc[0] + rng.normal(sigma), loc[1] + rng.normal(sigma))
        objects.append(to_semantic_object(state, snapshot.time, loc))
    return SemanticFrame(node.id, SourceKind.SOR, snapshot.time, tuple(objects))


FrameSink = Callable[[SoRNode, SemanticFrame, GroundTruthSnapshot], None]


def emit_loop(
    node: SoRNode,
    engine: Engine,
    world: World,
    rng: Optional[RngStream],
    on_frame_ready: FrameSink,
    end_ms: SimTime,
    start_ms: SimTime = 0,
) -> None:
    """Schedule periodic sensing; each frame is handed to ``on_frame_ready`` after processing latency."""

    def _emit(ev: Event) -> None:
        t = ev.fire_at
        nxt = t + node.period_ms
        if nxt < end_ms:
            engine.call_at(nxt, EventKind.FRAME_EMIT, _emit, payload=node.id)
        if node.is_down(t):
            return
        snapshot = world.snapshot(t)
        frame = sense(node, snapshot, rng)
        node.frames_emitted += 1
        node.bytes_emitted += frame.size_bytes
        engine.call_at(
            t + node.processing_latency_ms,
            EventKind.FRAME_READY,
            lambda _ev, f=frame, s=snapshot: on_frame_ready(node, f, s),
            payload=node.id,
        )

    engine.call_at(start_ms, EventKind.FRAME_EMIT, _emit, payload=node.id)


def plan_placement(corridor_length_m: float, coverage_each_direction_m: float = 125.0) -> List[float]:
    """Along-corridor SoR positions giving gap-free coverage of ``[0, length]``."""
    if corridor_length_m <= 0:
        raise ValueError("corridor_length_m must be > 0")
    if coverage_each_direction_m <= 0:
        raise ValueError("coverage_each_direction_m must be > 0")
    spacing = 2.0 * coverage_each_direction_m
    count = math.ceil(round(corridor_length_m / spacing, 9))
    return [coverage_each_direction_m + spacing * i for i in range(count)]


def deployment_power(sor_count: int, power_w: float = 800.0) -> float:
    if sor_count < 0:
        raise ValueError("sor_count must be >= 0")
    return sor_count * power_w
