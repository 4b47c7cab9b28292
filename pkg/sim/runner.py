"""Scenario orchestration: wires world, SoRs, network, SoV fusion and the cloud per operating mode."""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from sim.config_validation import ConfigError
from sim.costmodel import deployment_cost, ratios
from sim.itcs import (
    ItcsPipeline,
    PartitionMetrics,
    RoutePlan,
    RouteRequest,
    monitor_lanes,
    plan_local_trajectory,
    plan_routes,
)
from sim.network import ChannelKind, DeliveryStatus, Message, Network
from sim.report import MetricsReport
from sim.scenarios import ScenarioSpec, spec_from_dict
from sim.simcore import Engine, Event, EventKind
from sim.sor import SemanticFrame, SoRNode, emit_loop
from sim.vehicle import FusionEngine, LinkState, Mode
from sim.world import GroundTruthSnapshot, Vec2

logger = logging.getLogger("sim.runner")

ITCS_ID = "itcs"
ITCS_POSITION: Vec2 = (0.0, 0.0)
METRICS_PERIOD_MS = 1000


class CooperativeSimController:
    """One run of one scenario.

    - Builds ground truth, SoRs, channels, per-vehicle fusion engines and the cloud.
    - Schedules every periodic activity on a single :class:`Engine`.
    - Applies fusion decisions (braking, shoulder stops, plan speeds, routes) to the world.
    """

    def __init__(self, spec: ScenarioSpec) -> None:
        self.spec = spec
        self.mode = spec.mode
        self.engine = Engine(spec.seed)
        self.world = spec.build_world()
        self.sors: List[SoRNode] = spec.build_sors()

        self.sor_noise = self.engine.fork_rng("sor.noise")
        streams = {kind: self.engine.fork_rng(f"net.{kind.value}") for kind in ChannelKind}
        self.network = Network(spec.channels, streams)

        self.fusion: Dict[str, FusionEngine] = {
            aid: FusionEngine(sov, spec.mode, spec.fusion) for aid, sov in sorted(spec.sovs.items())
        }
        self.itcs = ItcsPipeline(
            gate_m=spec.itcs.gate_m,
            heading_gate_deg=spec.itcs.heading_gate_deg,
            staleness_ms=spec.itcs.staleness_ms,
            n_areas=spec.n_areas,
            horizon_ms=spec.itcs.horizon_ms,
        )

        self.frame_latencies_ms: List[int] = []
        self.partition_runs: List[PartitionMetrics] = []
        self.lane_stats: Dict[str, Any] = {}
        self.route_plans_sent = 0
        self.route_plans_applied = 0
        self.routing_errors = 0
        self.itcs_track_samples: List[int] = []
        self._snapshot: Optional[GroundTruthSnapshot] = None
        self._finished = False

        self._schedule()

    # ------------------------------------------------------------------
    # scheduling
    # ------------------------------------------------------------------

    def _schedule(self) -> None:
        spec = self.spec
        end = spec.duration_ms
        # world steps are queued first; at equal times they fire before sensing and fusion
        t = spec.step_ms
        while t <= end:
            self.engine.call_at(t, EventKind.AGENT_STEP, self._step_world)
            t += spec.step_ms

        if self.mode.uses_roadside:
            for node in self.sors:
                emit_loop(node, self.engine, self.world, self.sor_noise, self._on_frame_ready, end)
            self._periodic(spec.itcs.tick_ms, spec.itcs.tick_ms, EventKind.CLOUD_TICK, self._cloud_tick)
        for aid in self.fusion:
            self._periodic(spec.fusion.tick_period_ms, spec.fusion.tick_period_ms, EventKind.FUSION_TICK,
                           self._fusion_tick, payload=aid)
        if self.mode is Mode.IPAD and spec.itcs.routing_enabled:
            self._periodic(0, spec.itcs.routing_period_ms, EventKind.ROUTE_PLANNING, self._plan_routes)
        self._periodic(METRICS_PERIOD_MS, METRICS_PERIOD_MS, EventKind.METRICS_SAMPLE, self._sample_metrics)

    def _periodic(self, start: int, period: int, kind: EventKind, handler, payload: Any = None) -> None:
        end = self.spec.duration_ms

        def _fire(ev: Event) -> None:
            nxt = ev.fire_at + period
            if nxt < end:
                self.engine.call_at(nxt, kind, _fire, payload=ev.payload)
            handler(ev)

        if start < end:
            self.engine.call_at(start, kind, _fire, payload=payload)

    def _step_world(self, ev: Event) -> None:
        self.world.step_agents(self.spec.step_ms)

    def _current_snapshot(self) -> GroundTruthSnapshot:
        t = self.engine.now
        if self._snapshot is None or self._snapshot.time != t:
            self._snapshot = self.world.snapshot(t)
        return self._snapshot

    def _live_vehicle(self, aid: str) -> bool:
        agent = self.world.agents[aid]
        return agent.active and not agent.retired

    # ------------------------------------------------------------------
    # messaging
    # ------------------------------------------------------------------

    def _send(self, kind: ChannelKind, src: str, dst: str, size: int, payload: Any,
              src_pos: Vec2, dst_pos: Vec2, on_arrival) -> bool:
        msg = Message(src, dst, self.engine.now, size, payload)
        result = self.network.send(msg, kind, src_pos, dst_pos)
        if result.status is not DeliveryStatus.DELIVERED:
            return False
        self.engine.call_at(result.arrival, EventKind.MESSAGE_ARRIVAL, lambda ev: on_arrival(ev.fire_at),
                            payload=(kind.value, src, dst))
        return True

    def _channels_for(self, aid: str) -> List[ChannelKind]:
        engine = self.fusion[aid]
        if engine.mode.has_failover and engine.link_state is not LinkState.CV2X_OK:
            return [ChannelKind.CV2X, ChannelKind.FIVE_G]
        return [ChannelKind.CV2X]

    def _on_frame_ready(self, node: SoRNode, frame: SemanticFrame, snapshot: GroundTruthSnapshot) -> None:
        t = self.engine.now
        plan_due = self.mode is Mode.IPAD and frame.frame_time % self.spec.fusion.tick_period_ms == 0
        densities = self.world.edge_densities() if plan_due else None
        for aid, engine in self.fusion.items():
            if not self._live_vehicle(aid):
                continue
            pos = self.world.agents[aid].position
            for kind in self._channels_for(aid):
                self._send(kind, node.id, engine.sov.id, frame.size_bytes, frame, node.position, pos,
                           lambda at, e=engine, k=kind: self._deliver_frame(e, frame, k, at))
            if plan_due and node.covers(pos):
                plan = plan_local_trajectory(node.id, self.world, aid, t, self.spec.itcs.plan_horizon_ms,
                                             densities=densities)
                for kind in self._channels_for(aid):
                    self._send(kind, node.id, engine.sov.id, plan.size_bytes, plan, node.position, pos,
                               lambda at, e=engine, p=plan, k=kind: e.receive_plan(p, k))
        self._send(ChannelKind.BACKHAUL, node.id, ITCS_ID, frame.size_bytes, frame, node.position, ITCS_POSITION,
                   lambda at: self.itcs.ingest(frame))

    def _deliver_frame(self, engine: FusionEngine, frame: SemanticFrame, kind: ChannelKind, at: int) -> None:
        engine.receive(frame, kind, at)
        self.frame_latencies_ms.append(at - frame.frame_time)

    # ------------------------------------------------------------------
    # vehicles
    # ------------------------------------------------------------------

    def _fusion_tick(self, ev: Event) -> None:
        aid = ev.payload
        engine = self.fusion[aid]
        snapshot = self._current_snapshot()
        outcome = engine.tick(ev.fire_at, snapshot, self.world.occluders)
        if outcome is None:
            return
        p = engine.params
        for _event in outcome.disengagements:
            self.world.brake(aid, p.disengage_brake_mps2, p.disengage_brake_ms)
        if outcome.control is not None:
            self.world.set_target_speed(aid, outcome.control.target_speed)
        if self.mode.uses_roadside and outcome.local_frame is not None:
            frame = outcome.local_frame
            self._send(ChannelKind.FIVE_G, engine.sov.id, ITCS_ID, frame.size_bytes, frame,
                       self.world.agents[aid].position, ITCS_POSITION, lambda at: self.itcs.ingest(frame))
        if self.mode.has_failover:
            self.engine.call_at(ev.fire_at, EventKind.FAILOVER_CHECK, self._failover_check, payload=aid)

    def _failover_check(self, ev: Event) -> None:
        aid = ev.payload
        engine = self.fusion[aid]
        transition = engine.failover_step(ev.fire_at)
        if transition is None:
            return
        _before, after = transition
        if after is LinkState.SAFE_STOP:
            self.world.request_stop(aid, engine.params.safe_stop_decel_mps2)
        elif after is LinkState.CV2X_OK:
            self.world.release_stop(aid)

    # ------------------------------------------------------------------
    # cloud
    # ------------------------------------------------------------------

    def _cloud_tick(self, ev: Event) -> None:
        batch = self.itcs.drain()
        gmap, metrics = self.itcs.run_partitioned(self.spec.partition, batch, ev.fire_at)
        self.itcs.commit(gmap)
        self.partition_runs.append(metrics)
        self.lane_stats = monitor_lanes(gmap, self.spec.graph)

    def _plan_routes(self, ev: Event) -> None:
        requests = []
        for aid in self.fusion:
            agent = self.world.agents[aid]
            if agent.active or agent.retired or not agent.route:
                continue
            graph = self.spec.graph
            requests.append(RouteRequest(aid, graph.edges[agent.route[0]].src, graph.edges[agent.route[-1]].dst))
        if not requests:
            return
        stats = self.lane_stats or monitor_lanes(self.itcs.map, self.spec.graph)
        result = plan_routes(requests, stats, self.spec.graph, issued_at=ev.fire_at)
        self.routing_errors += len(result.errors)
        for aid, plan in sorted(result.plans.items()):
            self.route_plans_sent += 1
            self._send(ChannelKind.FIVE_G, ITCS_ID, self.fusion[aid].sov.id, plan.size_bytes, plan, ITCS_POSITION,
                       self.world.agents[aid].position, lambda at, p=plan: self._apply_route(p))

    def _apply_route(self, plan: RoutePlan) -> None:
        if self.world.set_route(plan.vehicle_id, plan.edges):
            self.route_plans_applied += 1
            logger.debug("route for %s set to %s", plan.vehicle_id, ",".join(plan.edges))

    def _sample_metrics(self, ev: Event) -> None:
        self.itcs_track_samples.append(len(self.itcs.map.tracks))

    # ------------------------------------------------------------------
    # run
    # ------------------------------------------------------------------

    def run(self) -> MetricsReport:
        if self._finished:
            raise RuntimeError("controller already ran; build a new one per run")
        logger.info("run start: %s mode=%s seed=%d duration=%d ms",
                    self.spec.id, self.mode.value, self.spec.seed, self.spec.duration_ms)
        self.engine.run_until(self.spec.duration_ms)
        self._finished = True
        report = build_report(self)
        logger.info("run finished: %s, %d events", self.spec.id, self.engine.processed)
        return report


# ------------------------------------------------------------------
# metrics
# ------------------------------------------------------------------


def _percentile(values: Sequence[int], q: float) -> float:
    if not values:
        return 0.0
    return float(np.percentile(np.asarray(values, dtype=float), q))


def build_report(ctl: CooperativeSimController) -> MetricsReport:
    spec = ctl.spec
    engines = list(ctl.fusion.values())
    controlled = [ctl.world.agents[aid] for aid in ctl.fusion]

    km = sum(a.distance_m for a in controlled) / 1000.0
    active_s = sum(a.active_ms for a in controlled) / 1000.0
    disengagements = sum(len(e.disengagements) for e in engines)
    checks = sum(e.source_checks for e in engines)
    misses = sum(e.misses for e in engines)
    detections = [d for e in engines for d in e.first_detection_m.values()]
    lat = ctl.frame_latencies_ms
    transitions = [tr for e in engines for tr in e.transitions]
    first_fallback = min((t for t, _b, a in transitions if a is LinkState.FALLBACK_5G), default=None)
    first_stop = min((t for t, _b, a in transitions if a is LinkState.SAFE_STOP), default=None)
    duration_s = spec.duration_ms / 1000.0

    r = MetricsReport(spec.id, spec.mode.value, spec.seed, spec.topology_fingerprint())
    r.add("disengagements", disengagements, "count")
    r.add("disengagement_rate_per_1000km", disengagements / km * 1000.0 if km > 0 else 0.0, "1/1000km")
    r.add("deadline_miss_rate", misses / checks if checks else 0.0, "fraction")
    r.add("mean_first_detection_distance_m", float(np.mean(detections)) if detections else 0.0, "m")
    r.add("frame_latency_mean_ms", float(np.mean(lat)) if lat else 0.0, "ms")
    r.add("frame_latency_p50_ms", _percentile(lat, 50), "ms")
    r.add("frame_latency_p95_ms", _percentile(lat, 95), "ms")
    r.add("frame_latency_p99_ms", _percentile(lat, 99), "ms")
    r.add("mean_vehicle_speed_mps", km * 1000.0 / active_s if active_s > 0 else 0.0, "m/s")
    r.add("controlled_distance_km", km, "km")
    r.add("completed_trips", sum(1 for a in controlled if a.retired), "count")
    for state in LinkState:
        r.add(f"dwell_{state.value.lower()}_ms", sum(e.dwell_ms[state] for e in engines), "ms")
    r.add("link_transitions", len(transitions), "count")
    r.add("first_fallback_ms", first_fallback, "ms")
    r.add("first_safe_stop_ms", first_stop, "ms")
    r.add("safety_stops", sum(e.safety_stops for e in engines), "count")
    r.add("stopped_on_shoulder", sum(1 for a in controlled if a.on_shoulder and a.speed == 0.0), "count")
    r.add("handoff_discontinuities", sum(e.handoff_discontinuities for e in engines), "count")
    r.add("onboard_planner_ticks", sum(e.onboard_ticks for e in engines), "count")
    r.add("trust_conflicts_resolved", sum(e.conflicts_resolved for e in engines), "count")
    r.add("sor_frames", sum(n.frames_emitted for n in ctl.sors), "count")
    r.add("sor_semantic_rate_kBps",
          max((n.bytes_emitted for n in ctl.sors), default=0) / duration_s / 1000.0, "kB/s")
    r.add("max_cv2x_link_rate_Bps", ctl.network.ledger.max_rate_Bps(ChannelKind.CV2X), "B/s")
    r.add("messages_dropped", sum(s.dropped for s in ctl.network.stats.values()), "count")
    r.add("itcs_tracks", len(ctl.itcs.map.tracks), "count")
    r.add("itcs_tracks_peak", max(ctl.itcs_track_samples, default=0), "count")
    r.add("itcs_frames_ingested", ctl.itcs.frames_ingested, "count")
    r.add("itcs_frames_rejected", ctl.itcs.rejected, "count")
    r.add("itcs_ingest_rate_kBps", ctl.itcs.bytes_ingested / duration_s / 1000.0, "kB/s")
    runs = ctl.partition_runs
    total_objects = sum(m.objects for m in runs)
    total_makespan_ms = sum(m.makespan_ms for m in runs)
    utils = [u for m in runs if m.makespan_ms > 0 for u in m.utilization.values()]
    r.add("partition_scheme", spec.partition.scheme.value, "")
    r.add("partition_makespan_max_ms", max((m.makespan_ms for m in runs), default=0.0), "ms")
    r.add("partition_throughput_obj_per_s",
          total_objects / (total_makespan_ms / 1000.0) if total_makespan_ms > 0 else 0.0, "obj/s")
    r.add("partition_utilization_mean", float(np.mean(utils)) if utils else 0.0, "fraction")
    r.add("route_plans_sent", ctl.route_plans_sent, "count")
    r.add("route_plans_applied", ctl.route_plans_applied, "count")
    r.add("routing_errors", ctl.routing_errors, "count")
    deploy = deployment_cost(spec.corridor_length_m / 1000.0, spec.sor_unit_cost, spec.power_tariff)
    r.add("sor_count", len(ctl.sors), "count")
    r.add("deployment_power_w", sum(n.power_w for n in ctl.sors), "W")
    r.add("deployment_capex", deploy.capex, "$")
    r.add("deployment_power_cost_per_day", deploy.power_cost_per_day, "$/day")
    efficiency, cost_ratio = ratios(spec.cost)
    r.add("efficiency_ratio", efficiency, "x")
    r.add("cost_per_km_ratio", cost_ratio, "x")
    r.add("events_processed", ctl.engine.processed, "count")
    r.add("trace_digest", ctl.engine.trace_digest(), "sha256")

    if spec.log_ticks:
        for e in engines:
            for entry in e.fusion_log:
                r.fusion_log.append({
                    "t": entry.time,
                    "vehicle": entry.vehicle_id,
                    "sources": list(entry.sources_used),
                    "misses": list(entry.misses),
                    "objects": entry.object_count,
                })
    return r


# ------------------------------------------------------------------
# entry points
# ------------------------------------------------------------------


def run_scenario(spec: ScenarioSpec) -> MetricsReport:
    return CooperativeSimController(spec).run()


def set_dotted(raw: Dict[str, Any], path: str, value: Any) -> None:
    """Set a numeric config value addressed by ``a.b.c``; the target must already exist."""
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"sweep value {value!r} for '{path}' is not numeric")
    parts = path.split(".")
    node: Any = raw
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"sweep parameter '{path}' does not exist")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"sweep parameter '{path}' does not exist")
    current = node[leaf]
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ConfigError(f"sweep parameter '{path}' is not numeric")
    if isinstance(current, int) and isinstance(value, float) and value.is_integer():
        value = int(value)
    node[leaf] = value


def _run_raw(raw: Dict[str, Any]) -> MetricsReport:
    return run_scenario(spec_from_dict(raw))


def sweep(raw: Dict[str, Any], param: str, values: Sequence[Any], workers: Optional[int] = None) -> List[MetricsReport]:
    """One run per value with the same seed, in value order."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    variants = []
    for v in values:
        variant = copy.deepcopy(raw)
        set_dotted(variant, param, v)
        spec_from_dict(variant)
        variants.append(variant)
    if workers and workers > 1 and len(variants) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_raw, variants))
    return [_run_raw(v) for v in variants]
