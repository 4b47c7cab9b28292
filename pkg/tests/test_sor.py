from __future__ import annotations

import math

import pytest

from sim.simcore import Engine, EventKind, RngStream
from sim.sor import (
    ObjectType,
    SemanticFrame,
    SemanticObject,
    SoRNode,
    SourceKind,
    deployment_power,
    emit_loop,
    plan_placement,
    sense,
)
from sim.world import Agent, AgentClass, Occluder, RoadGraph, World


def _world(*agents: Agent, occluders=()) -> World:
    return World(RoadGraph.straight_corridor(1000.0), list(agents), occluders)


def _ped(aid: str, x: float, y: float) -> Agent:
    return Agent(id=aid, cls=AgentClass.PEDESTRIAN, length_m=0.5, width_m=0.5, position=(x, y))


def _step_world(engine: Engine, world: World, until: int, step_ms: int = 50) -> None:
    for t in range(step_ms, until + 1, step_ms):
        engine.call_at(t, EventKind.AGENT_STEP, lambda ev: world.step_agents(step_ms))


def test_coverage_is_along_axis_with_a_lateral_band():
    node = SoRNode("sor1", (125.0, 0.0))
    assert node.covers((0.0, 0.0))
    assert node.covers((250.0, 10.0))
    assert not node.covers((251.0, 0.0))
    assert not node.covers((125.0, 41.0))

    tilted = SoRNode("sor2", (0.0, 0.0), axis_heading=math.pi / 2)
    assert tilted.covers((0.0, 120.0))
    assert not tilted.covers((120.0, 0.0))


def test_sense_reports_every_covered_agent_despite_occluders():
    wall = Occluder((100.0, 2.5), (150.0, 2.5))
    world = _world(_ped("p1", 120.0, 4.0), _ped("p2", 400.0, 4.0), occluders=[wall])
    frame = sense(SoRNode("sor1", (125.0, 0.0), noise_sigma_m=0.0), world.snapshot(0))

    assert frame.source_kind is SourceKind.SOR
    assert [o.object_id for o in frame.objects] == ["p1"]
    obj = frame.objects[0]
    assert obj.object_type is ObjectType.PEDESTRIAN
    assert obj.location == (120.0, 4.0)
    assert obj.timestamp == frame.frame_time == 0
    assert frame.problems() == []


def test_frame_size_grows_linearly_with_objects():
    objs = tuple(
        SemanticObject(f"o{i}", 0, ObjectType.VEHICLE, (4.5, 1.8), (float(i), 0.0), 1.0, 0.0) for i in range(3)
    )
    assert SemanticFrame("s", SourceKind.SOR, 0, ()).size_bytes == 200
    assert SemanticFrame("s", SourceKind.SOR, 0, objs).size_bytes == 500


def test_object_problems_flag_bad_fields():
    bad = SemanticObject("x", 10, ObjectType.VEHICLE, (0.0, 1.0), (0.0, 0.0), -1.0, 7.0)
    assert len(bad.problems()) == 3
    frame = SemanticFrame("s", SourceKind.SOV, 20, (SemanticObject("y", 10, ObjectType.VEHICLE, (1, 1), (0, 0), 0, 0),))
    assert any("frame_time" in p for p in frame.problems())


def test_noise_perturbs_location_only():
    world = _world(_ped("p1", 120.0, 4.0))
    frame = sense(SoRNode("sor1", (125.0, 0.0), noise_sigma_m=0.5), world.snapshot(0), RngStream(1, "sor.noise"))
    obj = frame.objects[0]
    assert obj.location != (120.0, 4.0)
    assert obj.location == pytest.approx((120.0, 4.0), abs=5.0)
    assert obj.speed == 0.0


def test_emit_loop_runs_at_20hz_with_processing_latency():
    world = _world(_ped("p1", 120.0, 4.0))
    engine = Engine(seed=1)
    _step_world(engine, world, 400)
    node = SoRNode("sor1", (125.0, 0.0))
    ready = []
    emit_loop(node, engine, world, None, lambda n, f, s: ready.append((engine.now, f.frame_time)), end_ms=200)
    engine.run_until(400)

    assert [t for _, t in ready] == [0, 50, 100, 150]
    assert all(now - t == 50 for now, t in ready)
    assert node.frames_emitted == 4
    assert node.bytes_emitted == 4 * 300
    assert engine.processed_by_kind[EventKind.FRAME_EMIT.value] == 4


def test_emit_loop_skips_frames_during_outage():
    engine = Engine()
    world = _world()
    _step_world(engine, world, 300)
    node = SoRNode("sor1", (125.0, 0.0), outages=((50, 150),))
    ready = []
    emit_loop(node, engine, world, None, lambda n, f, s: ready.append(f.frame_time), end_ms=200)
    engine.run_until(300)
    assert ready == [0, 150]


def test_placement_gives_gap_free_coverage():
    assert plan_placement(1000.0) == [125.0, 375.0, 625.0, 875.0]
    assert plan_placement(250.0) == [125.0]
    assert len(plan_placement(1001.0)) == 5
    assert deployment_power(4) == 3200.0
    with pytest.raises(ValueError):
        plan_placement(0.0)


@pytest.mark.parametrize("length_m", [250.0, 999.0, 1000.0, 1001.0, 5000.0])
def test_placed_nodes_cover_every_metre_of_the_corridor(length_m):
    nodes = [SoRNode(f"sor{i}", (x, 0.0)) for i, x in enumerate(plan_placement(length_m))]
    assert len(nodes) == math.ceil(length_m / 250.0)
    samples = [float(x) for x in range(int(length_m) + 1)] + [length_m]
    uncovered = [x for x in samples if not any(n.covers((x, 0.0)) for n in nodes)]
    assert uncovered == []
