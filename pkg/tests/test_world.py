from __future__ import annotations

import math

import numpy as np
import pytest

from sim.world import (
    Agent,
    AgentClass,
    CrossingScript,
    Edge,
    Occluder,
    RoadGraph,
    SHOULDER_OFFSET_M,
    World,
    congestion_factor,
    jam_density_vpkm,
    line_of_sight,
    segments_cross,
)


def _car(aid: str, **kw) -> Agent:
    kw.setdefault("route", ["main"])
    kw.setdefault("speed", 10.0)
    kw.setdefault("desired_speed", 10.0)
    return Agent(id=aid, cls=AgentClass.VEHICLE, **kw)


def test_corridor_geometry():
    g = RoadGraph.straight_corridor(1000.0)
    assert g.point_on_edge("main", 250.0) == (250.0, 0.0)
    assert g.point_on_edge("main", 250.0, lateral=3.0) == (250.0, 3.0)
    assert g.edge_heading("main") == 0.0
    assert g.locate((400.0, 1.5)) == "main"
    assert g.locate((400.0, 5.0)) is None
    assert g.locate((1200.0, 0.0)) is None


def test_edge_length_must_match_node_distance():
    nodes = {"a": (0.0, 0.0), "b": (300.0, 400.0)}
    with pytest.raises(ValueError):
        RoadGraph(nodes, [Edge("ab", "a", "b", 450.0, 13.9)])
    g = RoadGraph(nodes, [Edge("ab", "a", "b", 500.0, 13.9)])
    assert g.edge_unit("ab") == pytest.approx((0.6, 0.8))


def test_node_path_maps_to_edge_ids_and_networkx_view():
    nodes = {"o": (0.0, 0.0), "a": (100.0, 0.0), "d": (200.0, 0.0)}
    g = RoadGraph(nodes, [Edge("oa", "o", "a", 100.0, 10.0), Edge("ad", "a", "d", 100.0, 10.0)])
    assert g.node_path_to_edges(["o", "a", "d"]) == ["oa", "ad"]
    assert g.route_is_contiguous(["oa", "ad"])
    assert not g.route_is_contiguous(["ad", "oa"])
    nxg = g.to_networkx()
    assert nxg["o"]["a"]["id"] == "oa"
    assert nxg["a"]["d"]["length"] == 100.0


def test_greenshields_congestion_factor():
    jam = jam_density_vpkm(1900.0, 13.9)
    assert jam == pytest.approx(4.0 * 1900.0 / (13.9 * 3.6))
    assert congestion_factor(0.0, jam) == 1.0
    assert congestion_factor(jam / 2.0, jam) == pytest.approx(0.5)
    assert congestion_factor(jam * 3.0, jam) == 0.1


def test_edge_density_derates_speed_before_the_headway_clamp():
    graph = RoadGraph.straight_corridor(1000.0, free_speed_mps=13.9, capacity_vph=300.0)
    cars = [_car(f"c{i}", s=100.0 * i, speed=13.9, desired_speed=13.9) for i in range(4)]
    world = World(graph, cars)
    world.step_agents(100)
    factor = 1.0 - 4.0 / jam_density_vpkm(300.0, 13.9)
    for car in world.agents.values():
        assert car.speed == pytest.approx(13.9 * factor)


def test_segments_cross_requires_a_proper_crossing():
    assert segments_cross((0, 0), (10, 10), (0, 10), (10, 0))
    # touching at an endpoint is not a crossing
    assert not segments_cross((0, 0), (5, 5), (5, 5), (10, 0))
    # collinear overlap is not a crossing
    assert not segments_cross((0, 0), (10, 0), (5, 0), (15, 0))


def test_line_of_sight_blocked_by_parked_car():
    wall = Occluder((30.0, 2.5), (59.5, 2.5))
    assert not line_of_sight((10.0, 0.0), (60.0, 4.0), [wall])
    assert line_of_sight((10.0, 0.0), (60.0, 2.0), [wall])
    with pytest.raises(ValueError):
        Occluder((1.0, 1.0), (1.0, 1.0))


@pytest.mark.parametrize("seed", range(5))
def test_line_of_sight_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    for _ in range(200):
        occluders = []
        for _k in range(int(rng.integers(0, 4))):
            a = tuple(rng.uniform(-50.0, 50.0, size=2))
            b = tuple(rng.uniform(-50.0, 50.0, size=2))
            if a != b:
                occluders.append(Occluder(a, b))
        p = tuple(rng.uniform(-50.0, 50.0, size=2))
        q = tuple(rng.uniform(-50.0, 50.0, size=2))
        assert line_of_sight(p, q, occluders) == line_of_sight(q, p, occluders)


def test_snapshot_is_taken_at_the_world_clock():
    world = World(RoadGraph.straight_corridor(500.0), [_car("a")])
    world.step_agents(50)
    assert world.time == 50
    snap = world.snapshot(50)
    assert snap.by_id()["a"].position == pytest.approx((0.5, 0.0))
    with pytest.raises(ValueError):
        world.snapshot(0)


def test_departure_time_gates_activation():
    world = World(RoadGraph.straight_corridor(500.0), [_car("late", depart_ms=100)])
    assert world.live_agents() == []
    world.step_agents(50)
    world.step_agents(50)
    assert [a.id for a in world.live_agents()] == ["late"]


def test_follower_clamps_to_leader_speed_inside_headway():
    leader = _car("lead", s=10.0, speed=5.0, desired_speed=5.0)
    follower = _car("follow", s=0.0, speed=10.0, desired_speed=10.0)
    world = World(RoadGraph.straight_corridor(500.0), [leader, follower])
    world.step_agents(100)
    assert world.agents["follow"].speed == 5.0


def test_vehicle_retires_at_route_end():
    world = World(RoadGraph.straight_corridor(10.0), [_car("a", s=9.0)])
    world.step_agents(500)
    assert world.agents["a"].retired
    assert world.live_agents() == []


def test_proximity_triggered_crossing_walks_then_retires():
    ped = Agent(id="ped", cls=AgentClass.PEDESTRIAN, position=(20.0, 4.0),
                crossing=CrossingScript(heading=-math.pi / 2, speed_mps=2.0, distance_m=1.0,
                                        trigger_proximity_m=15.0))
    car = _car("ego", controlled=True, speed=0.0, desired_speed=0.0)
    world = World(RoadGraph.straight_corridor(100.0), [ped, car])
    world.step_agents(100)
    assert world.agents["ped"].position == (20.0, 4.0)

    world.agents["ego"].s = 10.0
    world.agents["ego"].position = (10.0, 0.0)
    world.step_agents(100)
    assert world.agents["ped"].position == pytest.approx((20.0, 3.8))
    for _ in range(5):
        world.step_agents(100)
    assert world.agents["ped"].retired


def test_brake_and_stop_hooks():
    world = World(RoadGraph.straight_corridor(1000.0), [_car("a")])
    world.brake("a", 4.0, 500)
    world.step_agents(100)
    assert world.agents["a"].speed == pytest.approx(9.6)

    world.request_stop("a", 5.0)
    for _ in range(30):
        world.step_agents(100)
    assert world.agents["a"].speed == 0.0
    assert world.agents["a"].on_shoulder

    world.release_stop("a")
    world.step_agents(100)
    assert world.agents["a"].speed > 0.0


def test_safe_stop_moves_onto_the_shoulder_and_back():
    world = World(RoadGraph.straight_corridor(1000.0), [_car("a", s=100.0), _car("b", s=80.0)])
    world.step_agents(100)
    world.request_stop("a", 5.0)
    a = world.agents["a"]
    assert a.lateral == -SHOULDER_OFFSET_M
    assert a.position[1] == pytest.approx(-SHOULDER_OFFSET_M)
    # a stopped car on the shoulder does not hold back the lane
    for _ in range(50):
        world.step_agents(100)
    assert a.speed == 0.0
    assert a.position[1] == pytest.approx(-SHOULDER_OFFSET_M)
    assert world.agents["b"].s > a.s
    assert world.agents["b"].speed == pytest.approx(10.0)

    world.release_stop("a")
    assert a.lateral == 0.0
    assert a.position[1] == pytest.approx(0.0)


def test_target_speed_caps_the_desired_speed():
    world = World(RoadGraph.straight_corridor(1000.0), [_car("a")])
    world.set_target_speed("a", 6.0)
    world.step_agents(100)
    assert world.agents["a"].speed == 6.0


def test_set_route_only_before_departure():
    nodes = {"o": (0.0, 0.0), "a": (100.0, 0.0), "b": (0.0, 100.0)}
    g = RoadGraph(nodes, [Edge("oa", "o", "a", 100.0, 10.0), Edge("ob", "o", "b", 100.0, 10.0)])
    world = World(g, [_car("v", route=["oa"], depart_ms=1000)])
    assert world.set_route("v", ["ob"])
    assert world.agents["v"].position == (0.0, 0.0)
    assert world.agents["v"].heading == pytest.approx(math.pi / 2)

    for _ in range(10):
        world.step_agents(100)
    assert world.agents["v"].active
    assert not world.set_route("v", ["oa"])


def test_edge_densities_count_vehicles_only():
    ped = Agent(id="p", cls=AgentClass.PEDESTRIAN, position=(5.0, 4.0))
    world = World(RoadGraph.straight_corridor(500.0), [_car("a"), _car("b", s=50.0), ped])
    assert world.edge_densities() == {"main": pytest.approx(4.0)}
