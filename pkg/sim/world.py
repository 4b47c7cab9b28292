from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx

logger = logging.getLogger("sim.world")

Vec2 = Tuple[float, float]

DEFAULT_LANE_CAPACITY_VPH = 1900.0
HEADWAY_S = 2.0
MIN_CONGESTION_FACTOR = 0.1
SHOULDER_OFFSET_M = 3.5


# ---------- basic vector helpers ----------

def distance(a: Vec2, b: Vec2) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def wrap_heading(rad: float) -> float:
    """Wrap an angle to ``[0, 2*pi)``."""
    wrapped = math.fmod(rad, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    if wrapped >= 2.0 * math.pi:
        wrapped = 0.0
    return wrapped


def jam_density_vpkm(capacity_vph: float, free_speed_mps: float) -> float:
    """Jam density for a parabolic speed-density relation with the given capacity."""
    free_kmh = free_speed_mps * 3.6
    if free_kmh <= 0.0:
        return math.inf
    return 4.0 * capacity_vph / free_kmh


def congestion_factor(density_vpkm: float, jam_vpkm: float) -> float:
    if jam_vpkm <= 0.0 or math.isinf(jam_vpkm):
        return 1.0
    return max(MIN_CONGESTION_FACTOR, 1.0 - density_vpkm / jam_vpkm)


# ---------- road graph ----------


@dataclass(frozen=True)
class Edge:
    id: str
    src: str
    dst: str
    length_m: float
    free_speed_mps: float
    capacity_vph: float = DEFAULT_LANE_CAPACITY_VPH

    @property
    def jam_density_vpkm(self) -> float:
        return jam_density_vpkm(self.capacity_vph, self.free_speed_mps)


class RoadGraph:
    """Directed lanes between 2-D intersections in the corridor frame.

    x runs along the corridor, y is lateral. Edges are straight, so an edge's
    length always equals the distance between its end nodes.
    """

    def __init__(self, nodes: Dict[str, Vec2], edges: Iterable[Edge]) -> None:
        self.nodes: Dict[str, Vec2] = {nid: (float(p[0]), float(p[1])) for nid, p in nodes.items()}
        self.edges: Dict[str, Edge] = {}
        self._by_pair: Dict[Tuple[str, str], str] = {}
        for e in edges:
            self.add_edge(e)

    def add_edge(self, edge: Edge) -> None:
        if edge.src not in self.nodes or edge.dst not in self.nodes:
            raise ValueError(f"edge {edge.id} references unknown node")
        expected = distance(self.nodes[edge.src], self.nodes[edge.dst])
        if abs(edge.length_m - expected) > 1e-6:
            raise ValueError(
                f"edge {edge.id} length {edge.length_m} differs from node distance {expected}"
            )
        if edge.capacity_vph <= 0:
            raise ValueError(f"edge {edge.id} capacity must be > 0")
        if (edge.src, edge.dst) in self._by_pair:
            raise ValueError(f"parallel edge {edge.id} between {edge.src} and {edge.dst}")
        self.edges[edge.id] = edge
        self._by_pair[(edge.src, edge.dst)] = edge.id

    @classmethod
    def straight_corridor(
        cls,
        length_m: float,
        free_speed_mps: float = 13.9,
        capacity_vph: float = DEFAULT_LANE_CAPACITY_VPH,
    ) -> "RoadGraph":
        nodes = {"c0": (0.0, 0.0), "c1": (float(length_m), 0.0)}
        return cls(nodes, [Edge("main", "c0", "c1", float(length_m), free_speed_mps, capacity_vph)])

    def edge_between(self, src: str, dst: str) -> str:
        return self._by_pair[(src, dst)]

    def edge_unit(self, edge_id: str) -> Vec2:
        e = self.edges[edge_id]
        a = self.nodes[e.src]
        b = self.nodes[e.dst]
        return (b[0] - a[0]) / e.length_m, (b[1] - a[1]) / e.length_m

    def edge_heading(self, edge_id: str) -> float:
        ux, uy = self.edge_unit(edge_id)
        return wrap_heading(math.atan2(uy, ux))

    def point_on_edge(self, edge_id: str, s: float, lateral: float = 0.0) -> Vec2:
        e = self.edges[edge_id]
        ax, ay = self.nodes[e.src]
        ux, uy = self.edge_unit(edge_id)
        # left-hand normal
        return ax + ux * s - uy * lateral, ay + uy * s + ux * lateral

    def route_is_contiguous(self, route: Sequence[str]) -> bool:
        for prev, nxt in zip(route, route[1:]):
            if self.edges[prev].dst != self.edges[nxt].src:
                return False
        return True

    def route_length(self, route: Sequence[str]) -> float:
        return sum(self.edges[e].length_m for e in route)

    def node_path_to_edges(self, path: Sequence[str]) -> List[str]:
        return [self.edge_between(u, v) for u, v in zip(path, path[1:])]

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for nid, pos in self.nodes.items():
            g.add_node(nid, pos=pos)
        for e in self.edges.values():
            g.add_edge(e.src, e.dst, id=e.id, length=e.length_m, free_speed=e.free_speed_mps)
        return g

    def locate(self, point: Vec2, lateral_tolerance_m: float = 2.0) -> Optional[str]:
        """Edge whose centreline is nearest ``point`` within the tolerance."""
        best: Optional[Tuple[float, str]] = None
        for eid in sorted(self.edges):
            e = self.edges[eid]
            ax, ay = self.nodes[e.src]
            ux, uy = self.edge_unit(eid)
            dx, dy = point[0] - ax, point[1] - ay
            s = dx * ux + dy * uy
            if s < 0.0 or s > e.length_m:
                continue
            lat = abs(-dx * uy + dy * ux)
            if lat > lateral_tolerance_m:
                continue
            if best is None or lat < best[0]:
                best = (lat, eid)
        return best[1] if best else None


# ---------- agents & occluders ----------


class AgentClass(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"


@dataclass(frozen=True)
class Occluder:
    a: Vec2
    b: Vec2

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("occluder endpoints must be distinct")


@dataclass
class CrossingScript:
    """Scripted straight-line walk triggered by time or vehicle proximity."""

    heading: float
    speed_mps: float
    distance_m: float
    trigger_time_ms: Optional[int] = None
    trigger_proximity_m: Optional[float] = None
    triggered: bool = False
    walked_m: float = 0.0


@dataclass
class Agent:
    id: str
    cls: AgentClass
    length_m: float = 4.5
    width_m: float = 1.8
    route: List[str] = field(default_factory=list)
    edge_index: int = 0
    s: float = 0.0
    lateral: float = 0.0
    position: Vec2 = (0.0, 0.0)
    heading: float = 0.0
    speed: float = 0.0
    desired_speed: float = 0.0
    accel_mps2: float = 2.0
    controlled: bool = False
    depart_ms: int = 0
    crossing: Optional[CrossingScript] = None
    active: bool = False
    retired: bool = False
    distance_m: float = 0.0
    active_ms: int = 0
    target_speed: Optional[float] = None
    brake_decel: float = 0.0
    brake_until_ms: Optional[int] = None
    hold_stop: bool = False
    on_shoulder: bool = False
    lane_lateral: float = 0.0

    @property
    def edge_id(self) -> Optional[str]:
        if not self.route or self.edge_index >= len(self.route):
            return None
        return self.route[self.edge_index]

    @property
    def is_road_user(self) -> bool:
        return bool(self.route)


@dataclass(frozen=True)
class AgentState:
    id: str
    cls: AgentClass
    position: Vec2
    speed: float
    heading: float
    length_m: float
    width_m: float
    controlled: bool
    edge_id: Optional[str]


@dataclass(frozen=True)
class GroundTruthSnapshot:
    time: int
    agents: Tuple[AgentState, ...]

    def by_id(self) -> Dict[str, AgentState]:
        return {a.id: a for a in self.agents}


# ---------- geometry ----------


def _orient(p: Vec2, q: Vec2, r: Vec2) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def segments_cross(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool:
    """True iff the two segments properly cross (touching or collinear does not count)."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    return ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4))


def line_of_sight(a: Vec2, b: Vec2, occluders: Iterable[Occluder]) -> bool:
    for occ in occluders:
        if segments_cross(a, b, occ.a, occ.b):
            return False
    return True


# ---------- world ----------


class World:
    """Ground-truth corridor state, advanced in fixed steps by the engine."""

    def __init__(
        self,
        graph: RoadGraph,
        agents: Iterable[Agent],
        occluders: Iterable[Occluder] = (),
    ) -> None:
        self.graph = graph
        self.agents: Dict[str, Agent] = {}
        for agent in agents:
            if agent.id in self.agents:
                raise ValueError(f"duplicate agent id {agent.id}")
            self.agents[agent.id] = agent
        self.occluders: List[Occluder] = list(occluders)
        self.time = 0
        for agent in self.agents.values():
            if agent.is_road_user:
                if not graph.route_is_contiguous(agent.route):
                    raise ValueError(f"agent {agent.id} route is not contiguous")
                self._place_on_route(agent)
        self._activate_departures()

    # ---- queries ----

    def live_agents(self) -> List[Agent]:
        return [a for a in self.agents.values() if a.active and not a.retired]

    def snapshot(self, t: int) -> GroundTruthSnapshot:
        if t != self.time:
            raise ValueError(f"snapshot requested for t={t} but world is at t={self.time}")
        states = tuple(agent_state(a) for a in sorted(self.live_agents(), key=lambda x: x.id))
        return GroundTruthSnapshot(time=t, agents=states)

    def edge_densities(self) -> Dict[str, float]:
        """Vehicles per km on each edge."""
        counts: Dict[str, int] = {eid: 0 for eid in self.graph.edges}
        for a in self.live_agents():
            if a.cls is AgentClass.VEHICLE and a.edge_id is not None:
                counts[a.edge_id] += 1
        return {eid: counts[eid] / (self.graph.edges[eid].length_m / 1000.0) for eid in counts}

    def congestion_speed(self, edge_id: str, densities: Optional[Dict[str, float]] = None) -> float:
        e = self.graph.edges[edge_id]
        dens = (densities or self.edge_densities())[edge_id]
        return e.free_speed_mps * congestion_factor(dens, e.jam_density_vpkm)

    def project_along_route(self, agent_id: str, ahead_m: float) -> Tuple[Vec2, float]:
        """Position and heading ``ahead_m`` further along the agent's route (clamped at its end)."""
        a = self.agents[agent_id]
        if not a.is_road_user or a.edge_id is None:
            return a.position, a.heading
        idx = a.edge_index
        s = a.s + ahead_m
        while idx < len(a.route) - 1 and s > self.graph.edges[a.route[idx]].length_m:
            s -= self.graph.edges[a.route[idx]].length_m
            idx += 1
        eid = a.route[idx]
        s = min(s, self.graph.edges[eid].length_m)
        return self.graph.point_on_edge(eid, s, a.lateral), self.graph.edge_heading(eid)

    # ---- control hooks ----

    def brake(self, agent_id: str, decel_mps2: float, duration_ms: int) -> None:
        a = self.agents[agent_id]
        a.brake_decel = decel_mps2
        a.brake_until_ms = self.time + duration_ms

    def request_stop(self, agent_id: str, decel_mps2: float) -> None:
        a = self.agents[agent_id]
        a.hold_stop = True
        a.brake_decel = decel_mps2
        if not a.on_shoulder:
            a.lane_lateral = a.lateral
            # right-hand shoulder, one lane width off the centreline
            a.lateral = -SHOULDER_OFFSET_M
            self._place_on_route(a)
        a.on_shoulder = True
        logger.info("agent %s pulling over to the shoulder at t=%d ms", agent_id, self.time)

    def release_stop(self, agent_id: str) -> None:
        a = self.agents[agent_id]
        if a.hold_stop:
            logger.info("agent %s resuming from shoulder at t=%d ms", agent_id, self.time)
        a.hold_stop = False
        if a.on_shoulder:
            a.lateral = a.lane_lateral
            self._place_on_route(a)
        a.on_shoulder = False
        a.brake_decel = 0.0

    def set_target_speed(self, agent_id: str, speed: Optional[float]) -> None:
        self.agents[agent_id].target_speed = speed

    def set_route(self, agent_id: str, route: Sequence[str]) -> bool:
        a = self.agents[agent_id]
        if a.active:
            return False
        if not self.graph.route_is_contiguous(route):
            raise ValueError(f"route for {agent_id} is not contiguous")
        a.route = list(route)
        a.edge_index = 0
        a.s = 0.0
        self._place_on_route(a)
        return True

    # ---- stepping ----

    def step_agents(self, dt_ms: int) -> None:
        if dt_ms <= 0:
            raise ValueError("dt must be positive")
        dt = dt_ms / 1000.0
        densities = self.edge_densities()
        leaders = self._leader_gaps()
        live = sorted(self.live_agents(), key=lambda x: x.id)

        for agent in live:
            if agent.is_road_user:
                self._step_road_user(agent, dt, densities, leaders.get(agent.id))
            elif agent.crossing is not None:
                self._step_crossing(agent, dt)
            agent.active_ms += dt_ms

        self.time += dt_ms
        self._activate_departures()

    def _activate_departures(self) -> None:
        for a in self.agents.values():
            if not a.active and not a.retired and a.depart_ms <= self.time:
                a.active = True
                if a.is_road_user and a.speed <= 0.0:
                    a.speed = a.desired_speed

    def _place_on_route(self, agent: Agent) -> None:
        eid = agent.edge_id
        if eid is None:
            return
        agent.position = self.graph.point_on_edge(eid, agent.s, agent.lateral)
        agent.heading = self.graph.edge_heading(eid)

    def _leader_gaps(self) -> Dict[str, Tuple[float, float]]:
        """follower id -> (gap m, leader speed) for vehicles sharing an edge or the next one."""
        on_edge: Dict[str, List[Agent]] = {}
        for a in self.live_agents():
            if a.cls is AgentClass.VEHICLE and a.edge_id is not None and not a.on_shoulder:
                on_edge.setdefault(a.edge_id, []).append(a)
        for lst in on_edge.values():
            lst.sort(key=lambda x: (x.s, x.id))

        result: Dict[str, Tuple[float, float]] = {}
        for eid, lst in on_edge.items():
            for i, follower in enumerate(lst):
                leader: Optional[Agent] = None
                gap = 0.0
                for cand in lst[i + 1:]:
                    if cand.s > follower.s:
                        leader = cand
                        gap = cand.s - follower.s
                        break
                if leader is None and follower.edge_index + 1 < len(follower.route):
                    nxt = follower.route[follower.edge_index + 1]
                    ahead = on_edge.get(nxt)
                    if ahead:
                        leader = ahead[0]
                        gap = self.graph.edges[eid].length_m - follower.s + leader.s
                if leader is not None:
                    result[follower.id] = (gap, leader.speed)
        return result

    def _step_road_user(
        self,
        agent: Agent,
        dt: float,
        densities: Dict[str, float],
        leader: Optional[Tuple[float, float]],
    ) -> None:
        eid = agent.edge_id
        assert eid is not None
        wanted = agent.desired_speed if agent.target_speed is None else agent.target_speed
        wanted = min(wanted, self.congestion_speed(eid, densities))

        braking = agent.hold_stop or (
            agent.brake_until_ms is not None and self.time < agent.brake_until_ms
        )
        if braking:
            speed = max(0.0, agent.speed - agent.brake_decel * dt)
        else:
            agent.brake_until_ms = None
            if agent.speed < wanted:
                speed = min(wanted, agent.speed + agent.accel_mps2 * dt)
            else:
                speed = wanted
        if leader is not None:
            gap, leader_speed = leader
            if gap < HEADWAY_S * speed:
                speed = min(speed, leader_speed)
        agent.speed = max(0.0, speed)

        travel = agent.speed * dt
        agent.distance_m += travel
        agent.s += travel
        while agent.edge_id is not None and agent.s > self.graph.edges[agent.edge_id].length_m:
            agent.s -= self.graph.edges[agent.edge_id].length_m
            agent.edge_index += 1
        if agent.edge_id is None:
            agent.retired = True
            logger.debug("agent %s reached route end at t=%d ms", agent.id, self.time)
            return
        self._place_on_route(agent)

    def _step_crossing(self, agent: Agent, dt: float) -> None:
        script = agent.crossing
        assert script is not None
        if not script.triggered:
            if script.trigger_time_ms is not None and self.time >= script.trigger_time_ms:
                script.triggered = True
            elif script.trigger_proximity_m is not None:
                for other in self.live_agents():
                    if other.controlled and distance(other.position, agent.position) <= script.trigger_proximity_m:
                        script.triggered = True
                        break
            if script.triggered:
                logger.debug("crossing for %s triggered at t=%d ms", agent.id, self.time)
                agent.heading = wrap_heading(script.heading)
                agent.speed = script.speed_mps
            else:
                return
        step = min(script.speed_mps * dt, script.distance_m - script.walked_m)
        agent.position = (
            agent.position[0] + math.cos(script.heading) * step,
            agent.position[1] + math.sin(script.heading) * step,
        )
        script.walked_m += step
        agent.distance_m += step
        if script.walked_m >= script.distance_m - 1e-9:
            agent.retired = True


def agent_state(agent: Agent) -> AgentState:
    return AgentState(
        id=agent.id,
        cls=agent.cls,
        position=agent.position,
        speed=agent.speed,
        heading=agent.heading,
        length_m=agent.length_m,
        width_m=agent.width_m,
        controlled=agent.controlled,
        edge_id=agent.edge_id,
    )
