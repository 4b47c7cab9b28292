"""Cloud pipeline: semantic ingest, global map fusion, prediction, lane monitoring and routing.

The cloud also evaluates two ways of sharding its work over compute units:

- vertical: a unit owns areas and runs every task for objects in them;
- horizontal: a unit owns a task and runs it for every area.

Functional results never depend on the scheme; only the analytic timing
reported in :class:`PartitionMetrics` does.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx

from sim.sor import ObjectType, SemanticFrame, SemanticObject, SourceKind
from sim.world import RoadGraph, Vec2, World, congestion_factor, distance

logger = logging.getLogger("sim.itcs")

TASKS = ("fusion", "prediction", "planning")
AREA_LENGTH_M = 250.0


class RoutingError(ValueError):
    pass


# ---------- plans dispatched to vehicles ----------


@dataclass(frozen=True)
class RoutePlan:
    vehicle_id: str
    edges: Tuple[str, ...]
    cost_s: float
    free_flow_cost_s: float
    issued_at: int = 0

    @property
    def size_bytes(self) -> int:
        return 100 + 16 * len(self.edges)


@dataclass(frozen=True)
class TrajectoryPlan:
    vehicle_id: str
    issuer: str
    issued_at: int
    valid_from: int
    valid_until: int
    waypoints: Tuple[Tuple[int, Vec2, float], ...]

    def __post_init__(self) -> None:
        if self.valid_until <= self.valid_from:
            raise ValueError("trajectory plan validity window must be nonempty")

    @property
    def size_bytes(self) -> int:
        return 100 + 24 * len(self.waypoints)

    def covers(self, t: int) -> bool:
        return self.valid_from <= t < self.valid_until

    def sample(self, t: int) -> Tuple[Vec2, float]:
        """Linear interpolation of position and speed, clamped to the plan ends."""
        pts = self.waypoints
        if t <= pts[0][0]:
            return pts[0][1], pts[0][2]
        for (t0, p0, v0), (t1, p1, v1) in zip(pts, pts[1:]):
            if t0 <= t <= t1:
                w = (t - t0) / (t1 - t0)
                return (p0[0] + (p1[0] - p0[0]) * w, p0[1] + (p1[1] - p0[1]) * w), v0 + (v1 - v0) * w
        return pts[-1][1], pts[-1][2]


def plan_local_trajectory(
    issuer: str,
    world: World,
    vehicle_id: str,
    t0: int,
    horizon_ms: int = 2000,
    step_ms: int = 100,
    densities: Optional[Dict[str, float]] = None,
) -> TrajectoryPlan:
    """Roadside trajectory for one vehicle: follow its route at the congestion-limited speed."""
    agent = world.agents[vehicle_id]
    speed = agent.desired_speed
    if agent.edge_id is not None:
        speed = min(speed, world.congestion_speed(agent.edge_id, densities))
    waypoints = []
    for k in range(horizon_ms // step_ms + 1):
        ahead = speed * k * step_ms / 1000.0
        pos, _heading = world.project_along_route(vehicle_id, ahead)
        waypoints.append((t0 + k * step_ms, pos, speed))
    return TrajectoryPlan(vehicle_id, issuer, t0, t0, t0 + horizon_ms, tuple(waypoints))


# ---------- global perception map ----------


@dataclass(frozen=True)
class Observation:
    obj: SemanticObject
    source_id: str
    source_kind: SourceKind
    frame_time: int
    area: int


@dataclass(frozen=True)
class Track:
    global_id: str
    obj: SemanticObject
    sources: Tuple[str, ...]
    last_update: int


@dataclass
class GlobalPerceptionMap:
    tracks: Dict[str, Track] = field(default_factory=dict)
    areas: Set[int] = field(default_factory=set)
    next_gid: int = 1
    predictions: Dict[str, "Trajectory"] = field(default_factory=dict)

    def canonical(self) -> str:
        rows = []
        for gid in sorted(self.tracks, key=_gid_key):
            tr = self.tracks[gid]
            o = tr.obj
            rows.append(
                [gid, o.object_id, o.object_type.value, o.timestamp, list(o.location), o.speed, o.heading,
                 list(tr.sources), tr.last_update]
            )
        return json.dumps({"tracks": rows, "areas": sorted(self.areas)}, sort_keys=True)


def _gid_key(gid: str) -> int:
    return int(gid[1:])


def heading_gap(a: float, b: float) -> float:
    d = abs(a - b) % (2.0 * math.pi)
    return min(d, 2.0 * math.pi - d)


def _winner_key(o: Observation) -> Tuple[int, int, str]:
    # newest frame first, then SoV before SoR, then lowest source id
    return (-o.frame_time, 0 if o.source_kind is SourceKind.SOV else 1, o.source_id)


@dataclass
class _Cluster:
    members: List[Observation]
    rep: Observation


def cluster_observations(
    observations: Sequence[Observation],
    gate_m: float,
    heading_gate_rad: float,
) -> List[_Cluster]:
    clusters: List[_Cluster] = []
    for ob in observations:
        best: Optional[Tuple[float, int]] = None
        for idx, cl in enumerate(clusters):
            r = cl.rep.obj
            if r.object_type is not ob.obj.object_type:
                continue
            d = distance(r.location, ob.obj.location)
            if d > gate_m or heading_gap(r.heading, ob.obj.heading) >= heading_gate_rad:
                continue
            if best is None or d < best[0]:
                best = (d, idx)
        if best is None:
            clusters.append(_Cluster([ob], ob))
        else:
            cl = clusters[best[1]]
            cl.members.append(ob)
            cl.rep = min(cl.members, key=_winner_key)
    return clusters


def area_of(location: Vec2, n_areas: Optional[int] = None, area_length_m: float = AREA_LENGTH_M) -> int:
    area = max(0, int(math.floor(location[0] / area_length_m)))
    if n_areas is not None:
        area = min(area, n_areas - 1)
    return area


# ---------- prediction & lane monitoring ----------


@dataclass(frozen=True)
class Trajectory:
    track_id: str
    waypoints: Tuple[Tuple[int, Vec2, float], ...]


def predict(track: Track, horizon_ms: int = 3000, step_ms: int = 100) -> Trajectory:
    o = track.obj
    vx, vy = o.velocity
    pts = []
    for k in range(1, horizon_ms // step_ms + 1):
        dt = k * step_ms / 1000.0
        pts.append((o.timestamp + k * step_ms, (o.location[0] + vx * dt, o.location[1] + vy * dt), o.speed))
    return Trajectory(track.global_id, tuple(pts))


@dataclass(frozen=True)
class LaneStats:
    edge_id: str
    density_vpkm: float
    flow_vph: float
    mean_speed_mps: float


def monitor_lanes(gmap: GlobalPerceptionMap, graph: RoadGraph, lateral_tolerance_m: float = 2.0) -> Dict[str, LaneStats]:
    speeds: Dict[str, List[float]] = {eid: [] for eid in graph.edges}
    for gid in sorted(gmap.tracks, key=_gid_key):
        tr = gmap.tracks[gid]
        if tr.obj.object_type is not ObjectType.VEHICLE:
            continue
        eid = graph.locate(tr.obj.location, lateral_tolerance_m)
        if eid is not None:
            speeds[eid].append(tr.obj.speed)
    stats: Dict[str, LaneStats] = {}
    for eid, edge in graph.edges.items():
        vals = speeds[eid]
        if not vals:
            stats[eid] = LaneStats(eid, 0.0, 0.0, edge.free_speed_mps)
            continue
        density = len(vals) / (edge.length_m / 1000.0)
        mean_speed = sum(vals) / len(vals)
        stats[eid] = LaneStats(eid, density, density * mean_speed * 3.6, mean_speed)
    return stats


# ---------- routing ----------


@dataclass(frozen=True)
class RouteRequest:
    vehicle_id: str
    origin: str
    destination: str


@dataclass
class RoutingResult:
    plans: Dict[str, RoutePlan] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)


def edge_weight_s(graph: RoadGraph, edge_id: str, density_vpkm: float) -> float:
    e = graph.edges[edge_id]
    return e.length_m / (e.free_speed_mps * congestion_factor(density_vpkm, e.jam_density_vpkm))


def plan_routes(
    requests: Iterable[RouteRequest],
    stats: Dict[str, LaneStats],
    graph: RoadGraph,
    issued_at: int = 0,
) -> RoutingResult:
    """Greedy sequential load-aware routing; each assignment loads the projected density."""
    g = graph.to_networkx()
    projected = {eid: (stats[eid].density_vpkm if eid in stats else 0.0) for eid in graph.edges}

    def weight(u: str, v: str, data: dict) -> float:
        return edge_weight_s(graph, data["id"], projected[data["id"]])

    def free_weight(u: str, v: str, data: dict) -> float:
        return edge_weight_s(graph, data["id"], 0.0)

    result = RoutingResult()
    for req in sorted(requests, key=lambda r: r.vehicle_id):
        try:
            if req.origin not in g or req.destination not in g:
                raise RoutingError(f"unknown node for {req.vehicle_id}")
            try:
                path = nx.dijkstra_path(g, req.origin, req.destination, weight=weight)
                free_cost = nx.dijkstra_path_length(g, req.origin, req.destination, weight=free_weight)
            except nx.NetworkXNoPath as exc:
                raise RoutingError(f"{req.destination} unreachable from {req.origin}") from exc
        except RoutingError as exc:
            logger.warning("route planning failed for %s: %s", req.vehicle_id, exc)
            result.errors[req.vehicle_id] = str(exc)
            continue
        edges = graph.node_path_to_edges(path)
        cost = sum(edge_weight_s(graph, eid, projected[eid]) for eid in edges)
        for eid in edges:
            projected[eid] += 1.0 / (graph.edges[eid].length_m / 1000.0)
        result.plans[req.vehicle_id] = RoutePlan(req.vehicle_id, tuple(edges), cost, free_cost, issued_at)
    return result


# ---------- compute partitioning ----------


class PartitionScheme(str, Enum):
    VERTICAL = "VERTICAL"
    HORIZONTAL = "HORIZONTAL"


@dataclass(frozen=True)
class ComputeUnit:
    id: str
    service_us: Dict[str, float]

    def cost(self, task: str) -> float:
        return float(self.service_us.get(task, 0.0))


@dataclass(frozen=True)
class PartitionPlan:
    scheme: PartitionScheme
    units: Tuple[ComputeUnit, ...]
    area_assignment: Dict[int, str] = field(default_factory=dict)
    task_assignment: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def vertical(cls, units: Sequence[ComputeUnit], n_areas: int) -> "PartitionPlan":
        units = tuple(units)
        return cls(PartitionScheme.VERTICAL, units, {a: units[a % len(units)].id for a in range(n_areas)})

    @classmethod
    def horizontal(cls, units: Sequence[ComputeUnit]) -> "PartitionPlan":
        units = tuple(units)
        assignment: Dict[str, List[str]] = {t: [] for t in TASKS}
        for i, u in enumerate(units):
            assignment[TASKS[i % len(TASKS)]].append(u.id)
        return cls(PartitionScheme.HORIZONTAL, units, task_assignment={t: tuple(v) for t, v in assignment.items()})

    def unit(self, unit_id: str) -> ComputeUnit:
        for u in self.units:
            if u.id == unit_id:
                return u
        raise KeyError(unit_id)

    def problems(self, n_areas: int) -> List[str]:
        out: List[str] = []
        ids = {u.id for u in self.units}
        if not self.units:
            out.append("partition plan needs at least one unit")
        if self.scheme is PartitionScheme.VERTICAL:
            for a in range(n_areas):
                if a not in self.area_assignment:
                    out.append(f"area {a} is not assigned to a unit")
            for a, uid in self.area_assignment.items():
                if uid not in ids:
                    out.append(f"area {a} assigned to unknown unit {uid}")
        else:
            for task in TASKS:
                assigned = self.task_assignment.get(task, ())
                if not assigned:
                    out.append(f"task {task} is not assigned to a unit")
                for uid in assigned:
                    if uid not in ids:
                        out.append(f"task {task} assigned to unknown unit {uid}")
        return out


@dataclass(frozen=True)
class PartitionMetrics:
    scheme: PartitionScheme
    objects: int
    makespan_ms: float
    throughput_obj_per_s: float
    utilization: Dict[str, float]


def partition_timing(plan: PartitionPlan, per_area: Dict[int, int]) -> Tuple[float, Dict[str, float]]:
    """Analytic makespan (µs) and busy time per unit (µs)."""
    busy: Dict[str, float] = {u.id: 0.0 for u in plan.units}
    total = sum(per_area.values())
    if plan.scheme is PartitionScheme.VERTICAL:
        for area, n in sorted(per_area.items()):
            uid = plan.area_assignment[area]
            unit = plan.unit(uid)
            busy[uid] += sum(unit.cost(task) * n for task in TASKS)
        makespan = max(busy.values()) if busy else 0.0
        return makespan, busy
    makespan = 0.0
    for task in TASKS:
        uids = plan.task_assignment[task]
        share = total / len(uids)
        for uid in uids:
            t_us = plan.unit(uid).cost(task) * share
            busy[uid] += t_us
            makespan = max(makespan, t_us)
    # a unit serving several stages is bounded by its summed busy time
    return max([makespan] + list(busy.values())), busy


class ItcsPipeline:
    """Online cloud pipeline owned by one simulation run."""

    def __init__(
        self,
        gate_m: float = 3.0,
        heading_gate_deg: float = 45.0,
        staleness_ms: int = 1000,
        n_areas: Optional[int] = None,
        horizon_ms: int = 3000,
    ) -> None:
        self.gate_m = gate_m
        self.heading_gate_rad = math.radians(heading_gate_deg)
        self.staleness_ms = staleness_ms
        self.n_areas = n_areas
        self.horizon_ms = horizon_ms
        self.inbox: List[Observation] = []
        self.map = GlobalPerceptionMap()
        self.predictions: Dict[str, Trajectory] = {}
        self.rejected = 0
        self.bytes_ingested = 0
        self.frames_ingested = 0
        self._next_gid = 1

    # ---- ingest ----

    def ingest(self, frame: SemanticFrame) -> bool:
        problems = frame.problems()
        if problems:
            self.rejected += 1
            logger.warning("rejected frame from %s at t=%d: %s", frame.source_id, frame.frame_time, "; ".join(problems))
            return False
        for obj in frame.objects:
            self.inbox.append(
                Observation(obj, frame.source_id, frame.source_kind, frame.frame_time, area_of(obj.location, self.n_areas))
            )
        self.frames_ingested += 1
        self.bytes_ingested += frame.size_bytes
        return True

    def drain(self) -> List[Observation]:
        batch, self.inbox = self.inbox, []
        return batch

    # ---- fusion ----

    def fuse_global(self, t: int, observations: Optional[Sequence[Observation]] = None) -> GlobalPerceptionMap:
        batch = self.drain() if observations is None else list(observations)
        gmap = self._fused(t, batch)
        self.commit(gmap)
        return GlobalPerceptionMap(dict(gmap.tracks), set(gmap.areas), gmap.next_gid)

    def commit(self, gmap: GlobalPerceptionMap) -> None:
        """Adopt a fused map and the predictions it carries as the pipeline state."""
        self.map = GlobalPerceptionMap(dict(gmap.tracks), set(gmap.areas), gmap.next_gid)
        self._next_gid = gmap.next_gid
        self.predictions = dict(gmap.predictions)

    def _fused(self, t: int, batch: Sequence[Observation]) -> GlobalPerceptionMap:
        # reads pipeline state, never writes it
        tracks = dict(self.map.tracks)
        next_gid = self._next_gid
        matched: Set[str] = set()

        for cl in cluster_observations(batch, self.gate_m, self.heading_gate_rad):
            win = cl.rep
            sources = tuple(sorted({m.source_id for m in cl.members}))
            gid = self._match(tracks, win.obj, matched)
            if gid is None:
                gid = f"g{next_gid}"
                next_gid += 1
            matched.add(gid)
            tracks[gid] = Track(gid, win.obj, sources, win.frame_time)

        for gid in [g for g, tr in tracks.items() if tr.last_update < t - self.staleness_ms]:
            del tracks[gid]

        self._merge_duplicates(tracks)
        areas = set(self.map.areas) | {ob.area for ob in batch}
        return GlobalPerceptionMap(tracks, areas, next_gid)

    def _match(self, tracks: Dict[str, Track], obj: SemanticObject, taken: Set[str]) -> Optional[str]:
        best: Optional[Tuple[float, int, str]] = None
        for gid, tr in tracks.items():
            if gid in taken or tr.obj.object_type is not obj.object_type:
                continue
            d = distance(tr.obj.location, obj.location)
            if d > self.gate_m or heading_gap(tr.obj.heading, obj.heading) >= self.heading_gate_rad:
                continue
            key = (d, _gid_key(gid), gid)
            if best is None or key < best:
                best = key
        return best[2] if best else None

    def _merge_duplicates(self, tracks: Dict[str, Track]) -> None:
        gids = sorted(tracks, key=_gid_key)
        removed: Set[str] = set()
        for i, a in enumerate(gids):
            if a in removed:
                continue
            for b in gids[i + 1:]:
                if b in removed:
                    continue
                ta, tb = tracks[a], tracks[b]
                if ta.obj.object_type is not tb.obj.object_type:
                    continue
                if heading_gap(ta.obj.heading, tb.obj.heading) >= self.heading_gate_rad:
                    continue
                if distance(ta.obj.location, tb.obj.location) <= self.gate_m:
                    merged = tuple(sorted(set(ta.sources) | set(tb.sources)))
                    tracks[a] = Track(a, ta.obj, merged, max(ta.last_update, tb.last_update))
                    removed.add(b)
        for gid in removed:
            del tracks[gid]

    # ---- downstream tasks ----

    def predict_all(self, gmap: GlobalPerceptionMap, track_ids: Optional[Iterable[str]] = None) -> Dict[str, Trajectory]:
        ids = sorted(gmap.tracks if track_ids is None else track_ids, key=_gid_key)
        return {gid: predict(gmap.tracks[gid], self.horizon_ms) for gid in ids}

    def run_partitioned(
        self,
        plan: PartitionPlan,
        workload: Sequence[Observation],
        t: int = 0,
    ) -> Tuple[GlobalPerceptionMap, PartitionMetrics]:
        """Fuse and predict ``workload`` under ``plan`` without touching pipeline state.

        The returned map carries its predictions; pass it to :meth:`commit` to adopt it.
        """
        n_areas = self.n_areas if self.n_areas is not None else (max((o.area for o in workload), default=-1) + 1)
        problems = plan.problems(n_areas)
        if problems:
            raise ValueError("; ".join(problems))

        gmap = self._fused(t, workload)

        predictions: Dict[str, Trajectory] = {}
        if plan.scheme is PartitionScheme.VERTICAL:
            for unit in plan.units:
                owned = {a for a, uid in plan.area_assignment.items() if uid == unit.id}
                ids = [g for g, tr in gmap.tracks.items() if area_of(tr.obj.location, n_areas) in owned]
                predictions.update(self.predict_all(gmap, ids))
        else:
            uids = plan.task_assignment["prediction"]
            ordered = sorted(gmap.tracks, key=_gid_key)
            for i, _uid in enumerate(uids):
                predictions.update(self.predict_all(gmap, ordered[i::len(uids)]))
        gmap.predictions = {gid: predictions[gid] for gid in sorted(predictions, key=_gid_key)}

        per_area: Dict[int, int] = {}
        for ob in workload:
            per_area[ob.area] = per_area.get(ob.area, 0) + 1
        makespan_us, busy = partition_timing(plan, per_area)
        total = len(workload)
        makespan_ms = makespan_us / 1000.0
        throughput = total / (makespan_us / 1e6) if makespan_us > 0 else 0.0
        utilization = {uid: (b / makespan_us if makespan_us > 0 else 0.0) for uid, b in busy.items()}
        return gmap, PartitionMetrics(plan.scheme, total, makespan_ms, throughput, utilization)
