from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional

MODES = ("VEHICLE_ONLY", "IAAD", "IGAD", "IPAD")
AGENT_CLASSES = ("vehicle", "pedestrian", "cyclist")
PARTITION_SCHEMES = ("VERTICAL", "HORIZONTAL")
PARTITION_TASKS = ("fusion", "prediction", "planning")

AGENT_FOOTPRINT = {
    "vehicle": (4.5, 1.8),
    "pedestrian": (0.5, 0.5),
    "cyclist": (1.8, 0.6),
}

CHANNEL_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "cv2x": {"base_latency_ms": 20, "jitter_min_ms": 3, "jitter_max_ms": 10, "loss_prob": 0.0,
             "coverage_m": 300.0, "bandwidth_Bps": 1.5e6},
    "fiveg": {"base_latency_ms": 40, "jitter_min_ms": 5, "jitter_max_ms": 30, "loss_prob": 0.001,
              "coverage_m": None, "bandwidth_Bps": 1.5e6},
    "backhaul": {"base_latency_ms": 5, "jitter_min_ms": 0, "jitter_max_ms": 2, "loss_prob": 0.0,
                 "coverage_m": None, "bandwidth_Bps": 12.5e6},
}

SOR_DEFAULTS: Dict[str, Any] = {
    "coverage_each_direction_m": 125.0,
    "lateral_reach_m": 40.0,
    "update_rate_hz": 20.0,
    "processing_latency_ms": 50,
    "power_w": 800.0,
    "noise_sigma_m": 0.2,
}

FUSION_DEFAULTS: Dict[str, Any] = {
    "tick_period_ms": 100,
    "freshness_budget_ms": 100,
    "source_expiry_ms": 200,
    "gate_m": 2.0,
    "conflict_position_m": 0.5,
    "conflict_speed_mps": 1.0,
    "history_ticks": 50,
    "ttc_threshold_s": 2.0,
    "conflict_band_m": 2.0,
    "conflict_horizon_s": 3.0,
    "disengage_brake_mps2": 4.0,
    "disengage_brake_ms": 500,
    "failover_silent_ticks": 5,
    "safe_stop_decel_mps2": 3.0,
    "handoff_gap_m": 1.0,
    "reactive_range_m": 20.0,
    "log_ticks": False,
}

ITCS_DEFAULTS: Dict[str, Any] = {
    "tick_ms": 100,
    "gate_m": 3.0,
    "heading_gate_deg": 45.0,
    "staleness_ms": 1000,
    "horizon_ms": 3000,
    "area_length_m": 250.0,
    "routing_enabled": True,
    "routing_period_ms": 1000,
    "plan_horizon_ms": 2000,
}

COST_DEFAULTS: Dict[str, Any] = {
    "n_v": 1.0, "c_p": 180.0, "s": 30.0, "n_s": 1.0, "c_s": 8.5, "cap": 4,
    "h_p": 8.0, "h_s": 24.0, "rtf": 1.0,
    "sor_unit_cost": 0.0, "power_tariff": 0.0,
}


class ConfigError(Exception):
    def __init__(self, problems: Iterable[str] | str) -> None:
        self.problems: List[str] = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ScenarioConfig:
    raw: Dict[str, Any]


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


class _Checker:
    def __init__(self) -> None:
        self.problems: List[str] = []

    def fail(self, msg: str) -> None:
        self.problems.append(msg)

    def obj(self, parent: Dict[str, Any], key: str, path: str, allowed: Iterable[str],
            defaults: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        value = parent.setdefault(key, {})
        if not isinstance(value, dict):
            self.fail(f"'{path}' must be an object")
            parent[key] = {}
            return parent[key]
        self.keys(value, path, allowed)
        for k, v in (defaults or {}).items():
            value.setdefault(k, v)
        return value

    def keys(self, value: Dict[str, Any], path: str, allowed: Iterable[str]) -> None:
        unknown = sorted(set(value) - set(allowed))
        for k in unknown:
            self.fail(f"unknown key '{path}.{k}'" if path else f"unknown key '{k}'")

    def number(self, d: Dict[str, Any], key: str, path: str, minimum: Optional[float] = None,
               strict: bool = False, integer: bool = False, nullable: bool = False) -> None:
        value = d.get(key)
        full = f"{path}.{key}" if path else key
        if value is None and nullable:
            return
        if integer and not _is_int(value):
            self.fail(f"'{full}' must be an integer")
            return
        if not _is_number(value):
            self.fail(f"'{full}' must be a number")
            return
        if minimum is not None:
            if strict and not value > minimum:
                self.fail(f"'{full}' must be > {minimum} (got {value})")
            elif not strict and not value >= minimum:
                self.fail(f"'{full}' must be >= {minimum} (got {value})")

    def boolean(self, d: Dict[str, Any], key: str, path: str) -> None:
        if not isinstance(d.get(key), bool):
            self.fail(f"'{path}.{key}' must be true or false")

    def point(self, value: Any, path: str) -> bool:
        if not isinstance(value, (list, tuple)) or len(value) != 2 or not all(_is_number(x) for x in value):
            self.fail(f"'{path}' must be a [x, y] pair of numbers")
            return False
        return True

    def windows(self, value: Any, path: str) -> None:
        if not isinstance(value, list):
            self.fail(f"'{path}' must be a list of [start_ms, end_ms] windows")
            return
        for i, w in enumerate(value):
            if (not isinstance(w, (list, tuple)) or len(w) != 2 or not all(_is_int(x) for x in w)
                    or not 0 <= w[0] < w[1]):
                self.fail(f"'{path}[{i}]' must be [start_ms, end_ms] with 0 <= start < end")


def _validate_road(c: _Checker, data: Dict[str, Any]) -> None:
    road = c.obj(data, "road", "road", ("corridor", "nodes", "edges"))
    if "corridor" in road:
        if "nodes" in road or "edges" in road:
            c.fail("'road' takes either 'corridor' or 'nodes'/'edges', not both")
        corridor = c.obj(road, "corridor", "road.corridor", ("length_m", "free_speed_mps", "capacity_vph"),
                         {"free_speed_mps": 13.9, "capacity_vph": 1900.0})
        c.number(corridor, "length_m", "road.corridor", 0, strict=True)
        c.number(corridor, "free_speed_mps", "road.corridor", 0, strict=True)
        c.number(corridor, "capacity_vph", "road.corridor", 0, strict=True)
        return
    nodes = road.get("nodes")
    if not isinstance(nodes, dict) or not nodes:
        c.fail("'road.nodes' must be a non-empty object of id -> [x, y]")
        nodes = {}
    for nid, pos in nodes.items():
        c.point(pos, f"road.nodes.{nid}")
    edges = road.get("edges")
    if not isinstance(edges, list) or not edges:
        c.fail("'road.edges' must be a non-empty list")
        return
    seen = set()
    for i, e in enumerate(edges):
        path = f"road.edges[{i}]"
        if not isinstance(e, dict):
            c.fail(f"'{path}' must be an object")
            continue
        c.keys(e, path, ("id", "src", "dst", "length_m", "free_speed_mps", "capacity_vph"))
        e.setdefault("free_speed_mps", 13.9)
        e.setdefault("capacity_vph", 1900.0)
        eid = e.get("id")
        if not isinstance(eid, str) or not eid:
            c.fail(f"'{path}.id' must be a non-empty string")
        elif eid in seen:
            c.fail(f"'{path}.id' duplicates edge '{eid}'")
        else:
            seen.add(eid)
        for end in ("src", "dst"):
            if e.get(end) not in nodes:
                c.fail(f"'{path}.{end}' references unknown node '{e.get(end)}'")
        if "length_m" in e:
            c.number(e, "length_m", path, 0, strict=True)
        c.number(e, "free_speed_mps", path, 0, strict=True)
        c.number(e, "capacity_vph", path, 0, strict=True)


def _edge_ids(data: Dict[str, Any]) -> List[str]:
    road = data.get("road", {})
    if "corridor" in road:
        return ["main"]
    return [e.get("id") for e in road.get("edges", []) if isinstance(e, dict)]


def _validate_agents(c: _Checker, data: Dict[str, Any]) -> None:
    agents = data.setdefault("agents", [])
    if not isinstance(agents, list):
        c.fail("'agents' must be a list")
        data["agents"] = []
        return
    edge_ids = set(_edge_ids(data))
    seen = set()
    allowed = ("id", "class", "route", "position", "s_m", "lateral_m", "speed_mps", "desired_speed_mps",
               "heading_deg", "length_m", "width_m", "controlled", "depart_ms")
    for i, a in enumerate(agents):
        path = f"agents[{i}]"
        if not isinstance(a, dict):
            c.fail(f"'{path}' must be an object")
            continue
        c.keys(a, path, allowed)
        aid = a.get("id")
        if not isinstance(aid, str) or not aid:
            c.fail(f"'{path}.id' must be a non-empty string")
        elif aid in seen:
            c.fail(f"'{path}.id' duplicates agent '{aid}'")
        else:
            seen.add(aid)
        cls = a.setdefault("class", "vehicle")
        if cls not in AGENT_CLASSES:
            c.fail(f"'{path}.class' must be one of {', '.join(AGENT_CLASSES)} (got {cls!r})")
            cls = "vehicle"
        length, width = AGENT_FOOTPRINT[cls]
        a.setdefault("length_m", length)
        a.setdefault("width_m", width)
        a.setdefault("route", [])
        a.setdefault("s_m", 0.0)
        a.setdefault("lateral_m", 0.0)
        a.setdefault("speed_mps", 0.0)
        a.setdefault("desired_speed_mps", a["speed_mps"])
        a.setdefault("heading_deg", 0.0)
        a.setdefault("controlled", False)
        a.setdefault("depart_ms", 0)
        if not isinstance(a["route"], list) or not all(isinstance(e, str) for e in a["route"]):
            c.fail(f"'{path}.route' must be a list of edge ids")
        else:
            for eid in a["route"]:
                if eid not in edge_ids:
                    c.fail(f"'{path}.route' references unknown edge '{eid}'")
        if not a["route"]:
            if "position" not in a:
                c.fail(f"'{path}' needs either a 'route' or a 'position'")
            else:
                c.point(a["position"], f"{path}.position")
            if a["controlled"]:
                c.fail(f"'{path}.controlled' requires a route")
        for key in ("length_m", "width_m"):
            c.number(a, key, path, 0, strict=True)
        for key in ("speed_mps", "desired_speed_mps", "s_m"):
            c.number(a, key, path, 0)
        c.number(a, "lateral_m", path)
        c.number(a, "heading_deg", path)
        c.number(a, "depart_ms", path, 0, integer=True)
        c.boolean(a, "controlled", path)


def _validate_occluders(c: _Checker, data: Dict[str, Any]) -> None:
    occluders = data.setdefault("occluders", [])
    if not isinstance(occluders, list):
        c.fail("'occluders' must be a list")
        data["occluders"] = []
        return
    for i, o in enumerate(occluders):
        path = f"occluders[{i}]"
        if not isinstance(o, dict):
            c.fail(f"'{path}' must be an object")
            continue
        c.keys(o, path, ("a", "b", "height"))
        o.setdefault("height", "ground")
        if o["height"] != "ground":
            c.fail(f"'{path}.height' only supports 'ground'")
        if c.point(o.get("a"), f"{path}.a") and c.point(o.get("b"), f"{path}.b"):
            if list(o["a"]) == list(o["b"]):
                c.fail(f"'{path}' endpoints must be distinct")


def _validate_crossings(c: _Checker, data: Dict[str, Any]) -> None:
    crossings = data.setdefault("crossings", [])
    if not isinstance(crossings, list):
        c.fail("'crossings' must be a list")
        data["crossings"] = []
        return
    agents = {a.get("id"): a for a in data.get("agents", []) if isinstance(a, dict)}
    for i, x in enumerate(crossings):
        path = f"crossings[{i}]"
        if not isinstance(x, dict):
            c.fail(f"'{path}' must be an object")
            continue
        c.keys(x, path, ("agent", "heading_deg", "speed_mps", "distance_m", "trigger_time_ms", "trigger_proximity_m"))
        x.setdefault("speed_mps", 1.5)
        x.setdefault("heading_deg", -90.0)
        agent = agents.get(x.get("agent"))
        if agent is None:
            c.fail(f"'{path}.agent' references unknown agent '{x.get('agent')}'")
        elif agent.get("route"):
            c.fail(f"'{path}.agent' must be an off-route agent with a 'position'")
        c.number(x, "heading_deg", path)
        c.number(x, "speed_mps", path, 0, strict=True)
        c.number(x, "distance_m", path, 0, strict=True)
        if "trigger_time_ms" not in x and "trigger_proximity_m" not in x:
            c.fail(f"'{path}' needs 'trigger_time_ms' or 'trigger_proximity_m'")
        if "trigger_time_ms" in x:
            c.number(x, "trigger_time_ms", path, 0, integer=True)
        if "trigger_proximity_m" in x:
            c.number(x, "trigger_proximity_m", path, 0, strict=True)


def _validate_sor_fields(c: _Checker, d: Dict[str, Any], path: str) -> None:
    c.number(d, "coverage_each_direction_m", path, 0, strict=True)
    c.number(d, "lateral_reach_m", path, 0, strict=True)
    c.number(d, "update_rate_hz", path, 0, strict=True)
    c.number(d, "processing_latency_ms", path, 0, integer=True)
    c.number(d, "power_w", path, 0)
    c.number(d, "noise_sigma_m", path, 0)


def _validate_sors(c: _Checker, data: Dict[str, Any]) -> None:
    sor_keys = tuple(SOR_DEFAULTS)
    sors = c.obj(data, "sors", "sors", ("auto_placement", "nodes", "outages") + sor_keys,
                 dict(SOR_DEFAULTS, auto_placement=False, nodes=[], outages={}))
    c.boolean(sors, "auto_placement", "sors")
    _validate_sor_fields(c, sors, "sors")
    if sors.get("auto_placement") is True:
        if "corridor" not in data.get("road", {}):
            c.fail("'sors.auto_placement' requires 'road.corridor'")
        if sors.get("nodes"):
            c.fail("'sors.auto_placement' and 'sors.nodes' are mutually exclusive")
    nodes = sors.get("nodes")
    if not isinstance(nodes, list):
        c.fail("'sors.nodes' must be a list")
        nodes = []
    seen = set()
    for i, n in enumerate(nodes):
        path = f"sors.nodes[{i}]"
        if not isinstance(n, dict):
            c.fail(f"'{path}' must be an object")
            continue
        c.keys(n, path, ("id", "position", "axis_heading_deg", "outages") + sor_keys)
        if not isinstance(n.get("id"), str) or not n.get("id"):
            c.fail(f"'{path}.id' must be a non-empty string")
        elif n["id"] in seen:
            c.fail(f"'{path}.id' duplicates SoR '{n['id']}'")
        else:
            seen.add(n["id"])
        c.point(n.get("position"), f"{path}.position")
        n.setdefault("axis_heading_deg", 0.0)
        c.number(n, "axis_heading_deg", path)
        for k in sor_keys:
            n.setdefault(k, sors.get(k))
        _validate_sor_fields(c, n, path)
        n.setdefault("outages", [])
        c.windows(n["outages"], f"{path}.outages")
    outages = sors.get("outages")
    if not isinstance(outages, dict):
        c.fail("'sors.outages' must be an object of sor id -> windows")
    else:
        for sid, windows in outages.items():
            c.windows(windows, f"sors.outages.{sid}")


def _validate_sovs(c: _Checker, data: Dict[str, Any]) -> None:
    sovs = data.setdefault("sovs", {})
    if not isinstance(sovs, dict):
        c.fail("'sovs' must be an object of agent id -> overrides")
        data["sovs"] = {}
        return
    controlled = {a.get("id") for a in data.get("agents", []) if isinstance(a, dict) and a.get("controlled")}
    for aid, o in sovs.items():
        path = f"sovs.{aid}"
        if aid not in controlled:
            c.fail(f"'{path}' references an agent that is not controlled")
        if not isinstance(o, dict):
            c.fail(f"'{path}' must be an object")
            continue
        c.keys(o, path, ("local_range_m", "local_rate_hz"))
        o.setdefault("local_range_m", 70.0)
        o.setdefault("local_rate_hz", 10.0)
        c.number(o, "local_range_m", path, 0, strict=True)
        c.number(o, "local_rate_hz", path, 0, strict=True)


def _validate_channels(c: _Checker, data: Dict[str, Any]) -> None:
    channels = c.obj(data, "channels", "channels", tuple(CHANNEL_DEFAULTS))
    for name, defaults in CHANNEL_DEFAULTS.items():
        path = f"channels.{name}"
        ch = c.obj(channels, name, path, tuple(defaults) + ("outages",), dict(defaults, outages=[]))
        c.number(ch, "base_latency_ms", path, 0, integer=True)
        c.number(ch, "jitter_min_ms", path, 0, integer=True)
        c.number(ch, "jitter_max_ms", path, 0, integer=True)
        if _is_int(ch.get("jitter_min_ms")) and _is_int(ch.get("jitter_max_ms")):
            if ch["jitter_min_ms"] > ch["jitter_max_ms"]:
                c.fail(
                    f"'{path}.jitter_min_ms' ({ch['jitter_min_ms']}) must be <= "
                    f"'{path}.jitter_max_ms' ({ch['jitter_max_ms']})"
                )
        c.number(ch, "loss_prob", path, 0)
        if _is_number(ch.get("loss_prob")) and ch["loss_prob"] > 1:
            c.fail(f"'{path}.loss_prob' must be <= 1 (got {ch['loss_prob']})")
        c.number(ch, "coverage_m", path, 0, strict=True, nullable=True)
        c.number(ch, "bandwidth_Bps", path, 0, strict=True)
        c.windows(ch["outages"], f"{path}.outages")


def _validate_fusion(c: _Checker, data: Dict[str, Any]) -> None:
    fusion = c.obj(data, "fusion", "fusion", tuple(FUSION_DEFAULTS), dict(FUSION_DEFAULTS))
    for key, default in FUSION_DEFAULTS.items():
        if isinstance(default, bool):
            c.boolean(fusion, key, "fusion")
        else:
            c.number(fusion, key, "fusion", 0, integer=_is_int(default))
    if _is_int(fusion.get("tick_period_ms")) and not 0 < fusion["tick_period_ms"] <= 100:
        c.fail(f"'fusion.tick_period_ms' must lie in (0, 100] (got {fusion['tick_period_ms']})")
    if _is_int(fusion.get("history_ticks")) and fusion["history_ticks"] < 1:
        c.fail("'fusion.history_ticks' must be >= 1")
    if _is_int(fusion.get("failover_silent_ticks")) and fusion["failover_silent_ticks"] < 1:
        c.fail("'fusion.failover_silent_ticks' must be >= 1")


def _validate_itcs(c: _Checker, data: Dict[str, Any]) -> None:
    itcs = c.obj(data, "itcs", "itcs", tuple(ITCS_DEFAULTS) + ("partition",), dict(ITCS_DEFAULTS))
    for key, default in ITCS_DEFAULTS.items():
        if isinstance(default, bool):
            c.boolean(itcs, key, "itcs")
        else:
            c.number(itcs, key, "itcs", 0, strict=True, integer=_is_int(default))
    part = c.obj(itcs, "partition", "itcs.partition", ("scheme", "units", "area_assignment", "task_assignment"),
                 {"scheme": "VERTICAL"})
    if part.get("scheme") not in PARTITION_SCHEMES:
        c.fail(f"'itcs.partition.scheme' must be one of {', '.join(PARTITION_SCHEMES)}")
    units = part.setdefault("units", [{"id": "cu1", "service_us": {t: 10.0 for t in PARTITION_TASKS}}])
    if not isinstance(units, list) or not units:
        c.fail("'itcs.partition.units' must be a non-empty list")
        return
    ids = set()
    for i, u in enumerate(units):
        path = f"itcs.partition.units[{i}]"
        if not isinstance(u, dict):
            c.fail(f"'{path}' must be an object")
            continue
        c.keys(u, path, ("id", "service_us"))
        ids.add(u.get("id"))
        svc = u.get("service_us")
        if not isinstance(svc, dict):
            c.fail(f"'{path}.service_us' must be an object of task -> microseconds per object")
            continue
        c.keys(svc, f"{path}.service_us", PARTITION_TASKS)
        for task in PARTITION_TASKS:
            svc.setdefault(task, 0.0)
            c.number(svc, task, f"{path}.service_us", 0)
    for key in ("area_assignment", "task_assignment"):
        assignment = part.get(key)
        if assignment is None:
            continue
        if not isinstance(assignment, dict):
            c.fail(f"'itcs.partition.{key}' must be an object")
            continue
        for k, v in assignment.items():
            targets = v if isinstance(v, list) else [v]
            for uid in targets:
                if uid not in ids:
                    c.fail(f"'itcs.partition.{key}.{k}' references unknown unit '{uid}'")


def _validate_cost(c: _Checker, data: Dict[str, Any]) -> None:
    cost = c.obj(data, "cost", "cost", tuple(COST_DEFAULTS), dict(COST_DEFAULTS))
    for key in COST_DEFAULTS:
        c.number(cost, key, "cost", 0, integer=(key == "cap"))
    if _is_int(cost.get("cap")) and cost["cap"] < 1:
        c.fail("'cost.cap' must be >= 1")


TOP_LEVEL_KEYS = (
    "id", "title", "seed", "duration_ms", "step_ms", "mode", "road", "agents", "occluders", "crossings",
    "sors", "sovs", "channels", "fusion", "itcs", "cost", "metadata",
)


def validate_scenario_config(data: Dict[str, Any]) -> ScenarioConfig:
    """Apply documented defaults in place and reject anything malformed or unknown."""
    if not isinstance(data, dict):
        raise ConfigError("Scenario must be an object")
    c = _Checker()
    c.keys(data, "", TOP_LEVEL_KEYS)

    sid = data.get("id")
    if not isinstance(sid, str) or not sid.strip():
        c.fail("Scenario requires non-empty 'id'")
    data.setdefault("title", "")
    data.setdefault("seed", 0)
    data.setdefault("duration_ms", 10000)
    data.setdefault("step_ms", 50)
    data.setdefault("mode", "IAAD")
    data.setdefault("metadata", {})
    c.number(data, "seed", "", 0, integer=True)
    c.number(data, "duration_ms", "", 0, strict=True, integer=True)
    c.number(data, "step_ms", "", 0, strict=True, integer=True)
    if data.get("mode") not in MODES:
        c.fail(f"'mode' must be one of {', '.join(MODES)} (got {data.get('mode')!r})")
    if not isinstance(data.get("metadata"), dict):
        c.fail("'metadata' must be an object")

    _validate_road(c, data)
    _validate_agents(c, data)
    _validate_occluders(c, data)
    _validate_crossings(c, data)
    _validate_sors(c, data)
    _validate_sovs(c, data)
    _validate_channels(c, data)
    _validate_fusion(c, data)
    _validate_itcs(c, data)
    _validate_cost(c, data)

    step = data.get("step_ms")
    if _is_int(step) and step > 0:
        tick = data.get("fusion", {}).get("tick_period_ms")
        if _is_int(tick) and tick % step:
            c.fail(f"'fusion.tick_period_ms' ({tick}) must be a multiple of 'step_ms' ({step})")
        sors = data.get("sors", {})
        rates = [("sors.update_rate_hz", sors.get("update_rate_hz"))]
        for i, n in enumerate(sors.get("nodes") or []):
            if isinstance(n, dict):
                rates.append((f"sors.nodes[{i}].update_rate_hz", n.get("update_rate_hz")))
        for where, rate in rates:
            if _is_number(rate) and rate > 0 and round(1000.0 / rate) % step:
                c.fail(f"SoR period {round(1000.0 / rate)} ms (from '{where}') must be a multiple of 'step_ms' ({step})")

    if c.problems:
        raise ConfigError(c.problems)
    return ScenarioConfig(raw=data)
