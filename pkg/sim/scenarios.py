"""Scenario specs: validated scenario files turned into the objects a run is built from."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from config.canonical_loader import load_scenario_raw
from sim.config_validation import ConfigError, validate_scenario_config
from sim.costmodel import CostModelError, CostParams
from sim.itcs import ComputeUnit, PartitionPlan, PartitionScheme, TASKS
from sim.network import ChannelKind, ChannelSpec
from sim.sor import SoRNode, plan_placement
from sim.vehicle import FusionParams, Mode, SoVNode
from sim.world import Agent, AgentClass, CrossingScript, Edge, Occluder, RoadGraph, World

logger = logging.getLogger("sim.scenarios")


@dataclass(frozen=True)
class ItcsSettings:
    tick_ms: int = 100
    gate_m: float = 3.0
    heading_gate_deg: float = 45.0
    staleness_ms: int = 1000
    horizon_ms: int = 3000
    area_length_m: float = 250.0
    routing_enabled: bool = True
    routing_period_ms: int = 1000
    plan_horizon_ms: int = 2000


@dataclass
class ScenarioSpec:
    id: str
    title: str
    seed: int
    duration_ms: int
    step_ms: int
    mode: Mode
    graph: RoadGraph
    agents: List[Agent]
    occluders: Tuple[Occluder, ...]
    sors: List[SoRNode]
    sovs: Dict[str, SoVNode]
    channels: Dict[ChannelKind, ChannelSpec]
    fusion: FusionParams
    log_ticks: bool
    itcs: ItcsSettings
    partition: PartitionPlan
    n_areas: int
    cost: CostParams
    sor_unit_cost: float
    power_tariff: float
    corridor_length_m: float
    raw: Dict[str, Any] = field(repr=False, default_factory=dict)

    def build_world(self) -> World:
        """Fresh ground truth for one run; agent templates are never mutated."""
        return World(self.graph, copy.deepcopy(self.agents), self.occluders)

    def build_sors(self) -> List[SoRNode]:
        return [copy.deepcopy(n) for n in self.sors]

    def topology_fingerprint(self) -> str:
        road = self.raw.get("road", {})
        payload = {
            "road": road,
            "agents": sorted(a.id for a in self.agents),
            "occluders": [[list(o.a), list(o.b)] for o in self.occluders],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _build_graph(road: Dict[str, Any]) -> RoadGraph:
    if "corridor" in road:
        c = road["corridor"]
        return RoadGraph.straight_corridor(c["length_m"], c["free_speed_mps"], c["capacity_vph"])
    nodes = {nid: (float(p[0]), float(p[1])) for nid, p in road["nodes"].items()}
    edges = []
    for e in road["edges"]:
        src, dst = nodes[e["src"]], nodes[e["dst"]]
        length = e.get("length_m", math.hypot(dst[0] - src[0], dst[1] - src[1]))
        edges.append(Edge(e["id"], e["src"], e["dst"], float(length), float(e["free_speed_mps"]), float(e["capacity_vph"])))
    return RoadGraph(nodes, edges)


def _build_agents(raw: Dict[str, Any]) -> List[Agent]:
    crossings = {x["agent"]: x for x in raw["crossings"]}
    agents = []
    for a in raw["agents"]:
        agent = Agent(
            id=a["id"],
            cls=AgentClass(a["class"]),
            length_m=float(a["length_m"]),
            width_m=float(a["width_m"]),
            route=list(a["route"]),
            s=float(a["s_m"]),
            lateral=float(a["lateral_m"]),
            heading=math.radians(a["heading_deg"]),
            speed=float(a["speed_mps"]),
            desired_speed=float(a["desired_speed_mps"]),
            controlled=bool(a["controlled"]),
            depart_ms=int(a["depart_ms"]),
        )
        if not agent.route:
            agent.position = (float(a["position"][0]), float(a["position"][1]))
        x = crossings.get(agent.id)
        if x is not None:
            agent.crossing = CrossingScript(
                heading=math.radians(x["heading_deg"]),
                speed_mps=float(x["speed_mps"]),
                distance_m=float(x["distance_m"]),
                trigger_time_ms=x.get("trigger_time_ms"),
                trigger_proximity_m=x.get("trigger_proximity_m"),
            )
        agents.append(agent)
    return agents


def _sor_from(d: Dict[str, Any], sid: str, position: Tuple[float, float], axis_heading: float) -> SoRNode:
    return SoRNode(
        id=sid,
        position=position,
        coverage_each_direction_m=float(d["coverage_each_direction_m"]),
        lateral_reach_m=float(d["lateral_reach_m"]),
        axis_heading=axis_heading,
        update_rate_hz=float(d["update_rate_hz"]),
        processing_latency_ms=int(d["processing_latency_ms"]),
        power_w=float(d["power_w"]),
        noise_sigma_m=float(d["noise_sigma_m"]),
    )


def _build_sors(raw: Dict[str, Any], graph: RoadGraph) -> List[SoRNode]:
    cfg = raw["sors"]
    nodes: List[SoRNode] = []
    if cfg["auto_placement"]:
        length = raw["road"]["corridor"]["length_m"]
        for i, x in enumerate(plan_placement(length, cfg["coverage_each_direction_m"]), start=1):
            nodes.append(_sor_from(cfg, f"sor{i}", graph.point_on_edge("main", min(x, length)), 0.0))
    for n in cfg["nodes"]:
        sor = _sor_from(n, n["id"], (float(n["position"][0]), float(n["position"][1])), math.radians(n["axis_heading_deg"]))
        sor.outages = tuple(tuple(w) for w in n["outages"])
        nodes.append(sor)
    by_id = {n.id: n for n in nodes}
    problems = []
    for sid, windows in cfg["outages"].items():
        if sid not in by_id:
            problems.append(f"'sors.outages.{sid}' references unknown SoR")
            continue
        by_id[sid].outages = by_id[sid].outages + tuple(tuple(w) for w in windows)
    if problems:
        raise ConfigError(problems)
    return nodes


def _build_channels(raw: Dict[str, Any]) -> Dict[ChannelKind, ChannelSpec]:
    out = {}
    for kind in ChannelKind:
        ch = raw["channels"][kind.value]
        out[kind] = ChannelSpec(
            kind=kind,
            base_latency_ms=int(ch["base_latency_ms"]),
            jitter_min_ms=int(ch["jitter_min_ms"]),
            jitter_max_ms=int(ch["jitter_max_ms"]),
            loss_prob=float(ch["loss_prob"]),
            coverage_m=math.inf if ch["coverage_m"] is None else float(ch["coverage_m"]),
            bandwidth_Bps=float(ch["bandwidth_Bps"]),
            outages=tuple(tuple(w) for w in ch["outages"]),
        )
    return out


def _build_partition(cfg: Dict[str, Any], n_areas: int) -> PartitionPlan:
    units = tuple(ComputeUnit(u["id"], {t: float(u["service_us"][t]) for t in TASKS}) for u in cfg["units"])
    scheme = PartitionScheme(cfg["scheme"])
    if scheme is PartitionScheme.VERTICAL:
        if "area_assignment" in cfg:
            plan = PartitionPlan(scheme, units, {int(a): uid for a, uid in cfg["area_assignment"].items()})
        else:
            plan = PartitionPlan.vertical(units, n_areas)
    elif "task_assignment" in cfg:
        assignment = {t: tuple(v if isinstance(v, list) else [v]) for t, v in cfg["task_assignment"].items()}
        plan = PartitionPlan(scheme, units, task_assignment=assignment)
    else:
        plan = PartitionPlan.horizontal(units)
    problems = plan.problems(n_areas)
    if problems:
        raise ConfigError([f"itcs.partition: {p}" for p in problems])
    return plan


def from_raw(raw: Dict[str, Any]) -> ScenarioSpec:
    """Build a ScenarioSpec from an already-validated scenario dict."""
    try:
        graph = _build_graph(raw["road"])
        agents = _build_agents(raw)
        World(graph, copy.deepcopy(agents))
        occluders = tuple(Occluder(tuple(o["a"]), tuple(o["b"])) for o in raw["occluders"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sovs = {}
    for a in agents:
        if a.controlled:
            o = raw["sovs"].get(a.id, {})
            sovs[a.id] = SoVNode(
                id=f"sov-{a.id}",
                agent_id=a.id,
                local_range_m=float(o.get("local_range_m", 70.0)),
                local_rate_hz=float(o.get("local_rate_hz", 10.0)),
            )

    fusion_cfg = dict(raw["fusion"])
    log_ticks = bool(fusion_cfg.pop("log_ticks"))
    fusion = FusionParams(**fusion_cfg)
    problems = fusion.problems()
    if problems:
        raise ConfigError(problems)

    itcs = ItcsSettings(**{k: v for k, v in raw["itcs"].items() if k != "partition"})
    max_x = max(p[0] for p in graph.nodes.values())
    n_areas = max(1, math.ceil(max_x / itcs.area_length_m))

    cost_cfg = dict(raw["cost"])
    sor_unit_cost = float(cost_cfg.pop("sor_unit_cost"))
    power_tariff = float(cost_cfg.pop("power_tariff"))
    try:
        cost = CostParams.from_mapping(cost_cfg)
    except CostModelError as exc:
        raise ConfigError(str(exc)) from exc

    corridor = max(graph.route_length([eid]) for eid in graph.edges)
    if "corridor" in raw["road"]:
        corridor = float(raw["road"]["corridor"]["length_m"])

    return ScenarioSpec(
        id=raw["id"],
        title=raw["title"],
        seed=int(raw["seed"]),
        duration_ms=int(raw["duration_ms"]),
        step_ms=int(raw["step_ms"]),
        mode=Mode(raw["mode"]),
        graph=graph,
        agents=agents,
        occluders=occluders,
        sors=_build_sors(raw, graph),
        sovs=sovs,
        channels=_build_channels(raw),
        fusion=fusion,
        log_ticks=log_ticks,
        itcs=itcs,
        partition=_build_partition(raw["itcs"]["partition"], n_areas),
        n_areas=n_areas,
        cost=cost,
        sor_unit_cost=sor_unit_cost,
        power_tariff=power_tariff,
        corridor_length_m=corridor,
        raw=raw,
    )


def spec_from_dict(data: Dict[str, Any], seed: Optional[int] = None, mode: Optional[str] = None) -> ScenarioSpec:
    raw = copy.deepcopy(data)
    if seed is not None:
        raw["seed"] = seed
    if mode is not None:
        raw["mode"] = mode
    validate_scenario_config(raw)
    return from_raw(raw)


def load_scenario(path: Path, seed: Optional[int] = None, mode: Optional[str] = None) -> ScenarioSpec:
    raw = load_scenario_raw(Path(path))
    spec = spec_from_dict(raw, seed=seed, mode=mode)
    logger.info("loaded scenario %s (%s, seed=%d, %d agents, %d SoRs)",
                spec.id, spec.mode.value, spec.seed, len(spec.agents), len(spec.sors))
    return spec
