"""SoV model: occlusion-limited local sensing, deadline-driven fusion, disengagement and failover.

The fusion engine never touches the world directly. Each tick returns a
:class:`TickOutcome` and the runner applies braking, shoulder stops and
speed targets to the vehicle's ground-truth body.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, Iterable, List, Optional, Set, Tuple

from sim.itcs import TrajectoryPlan
from sim.network import ChannelKind
from sim.sor import SemanticFrame, SemanticObject, SourceKind, to_semantic_object
from sim.world import AgentState, GroundTruthSnapshot, Occluder, distance, line_of_sight

logger = logging.getLogger("sim.vehicle")


class Mode(str, Enum):
    VEHICLE_ONLY = "VEHICLE_ONLY"
    IAAD = "IAAD"
    IGAD = "IGAD"
    IPAD = "IPAD"

    @property
    def uses_roadside(self) -> bool:
        return self is not Mode.VEHICLE_ONLY

    @property
    def has_failover(self) -> bool:
        return self in (Mode.IGAD, Mode.IPAD)


class LinkState(str, Enum):
    CV2X_OK = "CV2X_OK"
    FALLBACK_5G = "FALLBACK_5G"
    SAFE_STOP = "SAFE_STOP"


_ALLOWED_TRANSITIONS = {
    (LinkState.CV2X_OK, LinkState.FALLBACK_5G),
    (LinkState.FALLBACK_5G, LinkState.SAFE_STOP),
    (LinkState.FALLBACK_5G, LinkState.CV2X_OK),
    (LinkState.SAFE_STOP, LinkState.CV2X_OK),
}


class Provenance(str, Enum):
    LOCAL = "LOCAL"
    ROADSIDE = "ROADSIDE"
    MERGED = "MERGED"


@dataclass
class SoVNode:
    id: str
    agent_id: str
    local_range_m: float = 70.0
    local_rate_hz: float = 10.0

    def __post_init__(self) -> None:
        if self.local_range_m <= 0:
            raise ValueError(f"sov {self.id}: local_range_m must be > 0")


def local_sense(
    sov: SoVNode,
    snapshot: GroundTruthSnapshot,
    occluders: Iterable[Occluder] = (),
    range_m: Optional[float] = None,
) -> SemanticFrame:
    """Objects within range and in line of sight of the vehicle body."""
    reach = sov.local_range_m if range_m is None else range_m
    occ = list(occluders)
    states = snapshot.by_id()
    me = states.get(sov.agent_id)
    objects: List[SemanticObject] = []
    if me is not None:
        for state in snapshot.agents:
            if state.id == sov.agent_id:
                continue
            if distance(me.position, state.position) > reach:
                continue
            if not line_of_sight(me.position, state.position, occ):
                continue
            objects.append(to_semantic_object(state, snapshot.time))
    return SemanticFrame(sov.id, SourceKind.SOV, snapshot.time, tuple(objects))


@dataclass(frozen=True)
class FusionParams:
    tick_period_ms: int = 100
    freshness_budget_ms: int = 100
    source_expiry_ms: int = 200
    gate_m: float = 2.0
    conflict_position_m: float = 0.5
    conflict_speed_mps: float = 1.0
    history_ticks: int = 50
    ttc_threshold_s: float = 2.0
    conflict_band_m: float = 2.0
    conflict_horizon_s: float = 3.0
    disengage_brake_mps2: float = 4.0
    disengage_brake_ms: int = 500
    failover_silent_ticks: int = 5
    safe_stop_decel_mps2: float = 3.0
    handoff_gap_m: float = 1.0
    reactive_range_m: float = 20.0

    def problems(self) -> List[str]:
        out: List[str] = []
        if not 0 < self.tick_period_ms <= 100:
            out.append("fusion.tick_period_ms must lie in (0, 100]")
        if self.freshness_budget_ms <= 0:
            out.append("fusion.freshness_budget_ms must be > 0")
        if self.source_expiry_ms < self.freshness_budget_ms:
            out.append("fusion.source_expiry_ms must be >= fusion.freshness_budget_ms")
        if self.gate_m <= 0:
            out.append("fusion.gate_m must be > 0")
        if self.history_ticks < 1:
            out.append("fusion.history_ticks must be >= 1")
        if self.failover_silent_ticks < 1:
            out.append("fusion.failover_silent_ticks must be >= 1")
        if self.safe_stop_decel_mps2 <= 0:
            out.append("fusion.safe_stop_decel_mps2 must be > 0")
        return out


@dataclass(frozen=True)
class FusedObject:
    obj: SemanticObject
    provenance: Provenance
    sources: Tuple[str, ...]


@dataclass(frozen=True)
class LocalMap:
    time: int
    objects: Tuple[FusedObject, ...]
    deadline_missed: Dict[str, bool]
    sources_used: Tuple[str, ...]

    def ids(self) -> Set[str]:
        return {f.obj.object_id for f in self.objects}

    def get(self, object_id: str) -> Optional[FusedObject]:
        for f in self.objects:
            if f.obj.object_id == object_id:
                return f
        return None


@dataclass(frozen=True)
class DisengagementEvent:
    time: int
    vehicle_id: str
    cause_object_id: str
    first_detection_ttc_s: float


@dataclass(frozen=True)
class ControlAction:
    target_speed: Optional[float]
    source: Optional[str]
    handoff_discontinuity: bool = False

    @property
    def onboard(self) -> bool:
        return self.source is None


@dataclass(frozen=True)
class FusionLogEntry:
    time: int
    vehicle_id: str
    sources_used: Tuple[str, ...]
    misses: Tuple[str, ...]
    object_count: int


@dataclass
class TickOutcome:
    local_map: LocalMap
    local_frame: Optional[SemanticFrame] = None
    disengagements: List[DisengagementEvent] = field(default_factory=list)
    control: Optional[ControlAction] = None


@dataclass
class _Received:
    frame: SemanticFrame
    received_at: int


def _closest(objs: List[FusedObject], obj: SemanticObject, gate_m: float) -> Optional[int]:
    best: Optional[Tuple[float, int]] = None
    for idx, f in enumerate(objs):
        if f.obj.object_type is not obj.object_type:
            continue
        d = distance(f.obj.location, obj.location)
        if d <= gate_m and (best is None or d < best[0]):
            best = (d, idx)
    return best[1] if best else None


class FusionEngine:
    """Per-vehicle fusion state: roadside frame cache, detection history and link state."""

    def __init__(self, sov: SoVNode, mode: Mode, params: Optional[FusionParams] = None) -> None:
        self.sov = sov
        self.mode = mode
        self.params = params or FusionParams()
        self.latest: Dict[str, _Received] = {}
        self.heard: Set[ChannelKind] = set()
        self.link_state = LinkState.CV2X_OK
        self.silent_ticks: Dict[ChannelKind, int] = {ChannelKind.CV2X: 0, ChannelKind.FIVE_G: 0}
        self.transitions: List[Tuple[int, LinkState, LinkState]] = []
        self.dwell_ms: Dict[LinkState, int] = {s: 0 for s in LinkState}
        self.history: Deque[Set[str]] = deque(maxlen=self.params.history_ticks)
        self.first_detection_m: Dict[str, float] = {}
        self.disengagements: List[DisengagementEvent] = []
        self.fusion_log: List[FusionLogEntry] = []
        self.plans: Dict[str, TrajectoryPlan] = {}
        self.plan_source: Optional[str] = None
        self.last_plan: Optional[TrajectoryPlan] = None
        self.ticks = 0
        self.source_checks = 0
        self.misses = 0
        self.conflicts_resolved = 0
        self.onboard_ticks = 0
        self.handoff_discontinuities = 0
        self.safety_stops = 0

    @property
    def local_range_m(self) -> float:
        if self.mode.has_failover:
            return min(self.sov.local_range_m, self.params.reactive_range_m)
        return self.sov.local_range_m

    # ---- inputs ----

    def receive(self, frame: SemanticFrame, channel: ChannelKind, t: int) -> None:
        # only unexpired roadside perception counts as link activity
        if frame.source_kind is SourceKind.SOR and t - frame.frame_time <= self.params.source_expiry_ms:
            self.heard.add(channel)
        prev = self.latest.get(frame.source_id)
        if prev is None or frame.frame_time > prev.frame.frame_time:
            self.latest[frame.source_id] = _Received(frame, t)

    def receive_plan(self, plan: TrajectoryPlan, channel: ChannelKind) -> None:
        prev = self.plans.get(plan.issuer)
        if prev is None or plan.issued_at >= prev.issued_at:
            self.plans[plan.issuer] = plan

    # ---- fusion ----

    def fuse_tick(self, t: int, local_frame: Optional[SemanticFrame] = None) -> LocalMap:
        p = self.params
        own = self.sov.agent_id
        eligible: List[SemanticFrame] = []
        missed: Dict[str, bool] = {}
        for source_id in sorted(self.latest):
            frame = self.latest[source_id].frame
            age = t - frame.frame_time
            if age <= p.freshness_budget_ms:
                eligible.append(frame)
                missed[source_id] = False
            elif age <= p.source_expiry_ms:
                missed[source_id] = True

        objs: List[FusedObject] = []
        if local_frame is not None:
            for obj in local_frame.objects:
                if obj.object_id == own:
                    continue
                idx = _closest(objs, obj, p.gate_m)
                if idx is None:
                    objs.append(FusedObject(obj, Provenance.LOCAL, (local_frame.source_id,)))
        for frame in eligible:
            for obj in frame.objects:
                if obj.object_id == own:
                    continue
                idx = _closest(objs, obj, p.gate_m)
                if idx is None:
                    objs.append(FusedObject(obj, Provenance.ROADSIDE, (frame.source_id,)))
                    continue
                objs[idx] = self._merge(objs[idx], obj, frame.source_id)

        objs = self._dedup(objs)
        used = tuple(f.source_id for f in eligible)
        local_map = LocalMap(t, tuple(objs), missed, used)

        self.ticks += 1
        self.source_checks += len(missed)
        misses = tuple(s for s, m in missed.items() if m)
        self.misses += len(misses)
        self.fusion_log.append(FusionLogEntry(t, self.sov.id, used, misses, len(objs)))
        if misses:
            logger.debug("%s t=%d deadline missed for %s", self.sov.id, t, ",".join(misses))
        return local_map

    def _merge(self, kept: FusedObject, obj: SemanticObject, source_id: str) -> FusedObject:
        p = self.params
        sources = tuple(sorted(set(kept.sources) | {source_id}))
        if kept.provenance in (Provenance.LOCAL, Provenance.MERGED):
            gap = distance(kept.obj.location, obj.location)
            if gap > p.conflict_position_m or abs(kept.obj.speed - obj.speed) > p.conflict_speed_mps:
                self.conflicts_resolved += 1
            return FusedObject(kept.obj, Provenance.MERGED, sources)
        # roadside vs roadside: fresher report wins
        winner = obj if obj.timestamp > kept.obj.timestamp else kept.obj
        return FusedObject(winner, Provenance.ROADSIDE, sources)

    def _dedup(self, objs: List[FusedObject]) -> List[FusedObject]:
        out: List[FusedObject] = []
        for f in objs:
            idx = _closest(out, f.obj, self.params.gate_m)
            if idx is None:
                out.append(f)
                continue
            kept = out[idx]
            prov = kept.provenance if kept.provenance is f.provenance else Provenance.MERGED
            out[idx] = FusedObject(kept.obj, prov, tuple(sorted(set(kept.sources) | set(f.sources))))
        return out

    # ---- disengagement ----

    def check_disengagement(self, local_map: LocalMap, own: AgentState) -> List[DisengagementEvent]:
        """First-detection TTC check over objects unseen in the recent tick history.

        Yields at most one event per object per tick.
        """
        p = self.params
        recent: Set[str] = set().union(*self.history) if self.history else set()
        fx, fy = math.cos(own.heading), math.sin(own.heading)
        events: List[DisengagementEvent] = []
        flagged: Set[str] = set()
        for f in local_map.objects:
            o = f.obj
            rx, ry = o.location[0] - own.position[0], o.location[1] - own.position[1]
            d_long = rx * fx + ry * fy
            if o.object_id not in self.first_detection_m and d_long > 0.0:
                self.first_detection_m[o.object_id] = math.hypot(rx, ry)
            if o.object_id in recent or d_long <= 0.0:
                continue
            vx, vy = o.velocity
            closing = own.speed - (vx * fx + vy * fy)
            if closing <= 0.0:
                continue
            ttc = d_long / closing
            if ttc >= p.ttc_threshold_s or not self._in_path(fx, fy, rx, ry, vx, vy):
                continue
            if o.object_id in flagged:
                continue
            flagged.add(o.object_id)
            events.append(DisengagementEvent(local_map.time, self.sov.id, o.object_id, ttc))
        self.history.append(local_map.ids())
        for event in events:
            self.disengagements.append(event)
            logger.info(
                "%s disengaged at t=%d: %s first seen at TTC %.2f s",
                self.sov.id, event.time, event.cause_object_id, event.first_detection_ttc_s,
            )
        return events

    def _in_path(self, fx: float, fy: float, rx: float, ry: float, vx: float, vy: float) -> bool:
        band = self.params.conflict_band_m
        lat = fx * ry - fy * rx
        if abs(lat) <= band:
            return True
        v_lat = fx * vy - fy * vx
        if lat * v_lat >= 0.0:
            return False
        return (abs(lat) - band) / abs(v_lat) <= self.params.conflict_horizon_s

    # ---- failover ----

    def failover_step(self, t: int) -> Optional[Tuple[LinkState, LinkState]]:
        p = self.params
        heard, self.heard = self.heard, set()
        before = self.link_state
        if ChannelKind.CV2X in heard:
            self.silent_ticks[ChannelKind.CV2X] = 0
            self.silent_ticks[ChannelKind.FIVE_G] = 0
            after = LinkState.CV2X_OK
        else:
            self.silent_ticks[ChannelKind.CV2X] += 1
            after = before
            if before is LinkState.CV2X_OK and self.silent_ticks[ChannelKind.CV2X] >= p.failover_silent_ticks:
                after = LinkState.FALLBACK_5G
                self.silent_ticks[ChannelKind.FIVE_G] = 0
            elif before is LinkState.FALLBACK_5G:
                if ChannelKind.FIVE_G in heard:
                    self.silent_ticks[ChannelKind.FIVE_G] = 0
                else:
                    self.silent_ticks[ChannelKind.FIVE_G] += 1
                    if self.silent_ticks[ChannelKind.FIVE_G] >= p.failover_silent_ticks:
                        after = LinkState.SAFE_STOP
        self.dwell_ms[after] += p.tick_period_ms
        if after is before:
            return None
        if (before, after) not in _ALLOWED_TRANSITIONS:
            raise RuntimeError(f"illegal link transition {before.value} -> {after.value}")
        self.link_state = after
        self.transitions.append((t, before, after))
        if after is LinkState.SAFE_STOP:
            self.safety_stops += 1
        logger.info("%s link %s -> %s at t=%d", self.sov.id, before.value, after.value, t)
        return before, after

    # ---- IPAD plan following ----

    def ipad_follow(self, t: int) -> ControlAction:
        valid = [pl for pl in self.plans.values() if pl.covers(t)]
        if not valid:
            self.onboard_ticks += 1
            self.plan_source = None
            return ControlAction(None, None)
        newest = max(pl.issued_at for pl in valid)
        candidates = [pl for pl in valid if pl.issued_at == newest]
        chosen = next((pl for pl in candidates if pl.issuer == self.plan_source), None)
        if chosen is None:
            chosen = min(candidates, key=lambda pl: pl.issuer)
        flagged = False
        if self.last_plan is not None and chosen.issuer != self.last_plan.issuer:
            gap = distance(chosen.sample(t)[0], self.last_plan.sample(t)[0])
            if gap >= self.params.handoff_gap_m:
                flagged = True
                self._flag_handoff(t, chosen, gap)
        self.plan_source = chosen.issuer
        self.last_plan = chosen
        return ControlAction(chosen.sample(t)[1], chosen.issuer, flagged)

    def _flag_handoff(self, t: int, plan: TrajectoryPlan, gap: float) -> None:
        self.handoff_discontinuities += 1
        logger.warning("%s handoff to %s at t=%d jumps %.2f m", self.sov.id, plan.issuer, t, gap)

    # ---- one tick ----

    def tick(self, t: int, snapshot: GroundTruthSnapshot, occluders: Iterable[Occluder]) -> Optional[TickOutcome]:
        own = snapshot.by_id().get(self.sov.agent_id)
        if own is None:
            self.heard.clear()
            return None
        local_frame = local_sense(self.sov, snapshot, occluders, self.local_range_m)
        local_map = self.fuse_tick(t, local_frame)
        outcome = TickOutcome(local_map, local_frame=local_frame)
        outcome.disengagements.extend(self.check_disengagement(local_map, own))
        if not self.mode.has_failover:
            # failover_step runs as its own event in failover modes
            self.heard.clear()
            self.dwell_ms[self.link_state] += self.params.tick_period_ms
        if self.mode is Mode.IPAD:
            outcome.control = self.ipad_follow(t)
        return outcome
