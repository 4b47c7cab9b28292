"""End-to-end checks against the bundled reference scenarios."""

from __future__ import annotations

import pytest

from config.canonical_loader import load_scenario_raw
from sim.runner import run_scenario, sweep
from sim.scenarios import load_scenario, spec_from_dict


def _run(path, mode: str | None = None, seed: int | None = None):
    return run_scenario(load_scenario(path, seed=seed, mode=mode))


def test_occluded_pedestrians_disengage_only_without_roadside_view(scenario_path):
    alone = _run(scenario_path("occlusion_suite.json"))
    assert alone.get("disengagements") >= 18
    assert alone.get("disengagement_rate_per_1000km") > 0.0

    assisted = _run(scenario_path("occlusion_suite.json"), mode="IAAD")
    assert assisted.get("disengagements") <= 0.1 * alone.get("disengagements")
    assert assisted.get("mean_first_detection_distance_m") > alone.get("mean_first_detection_distance_m")


def test_roadside_frames_extend_detection_range(scenario_path):
    alone = _run(scenario_path("extended_perception.json"), mode="VEHICLE_ONLY")
    assisted = _run(scenario_path("extended_perception.json"))
    assert assisted.get("mean_first_detection_distance_m") >= 1.7 * alone.get("mean_first_detection_distance_m")


def test_deadline_misses_track_cv2x_jitter(scenario_path):
    raw = load_scenario_raw(scenario_path("jitter_sweep.json"))
    reports = sweep(raw, "channels.cv2x.jitter_max_ms", [5, 25, 50, 100])
    rates = [r.get("deadline_miss_rate") for r in reports]
    assert rates[0] < 0.01
    assert rates[1] < 0.01
    assert rates[2] > 0.10
    assert rates[3] > 0.10
    assert rates[3] >= rates[2]


def test_saturated_sor_semantic_rate_stays_near_100_kBps(scenario_path):
    report = _run(scenario_path("saturated_sor.json"))
    assert report.get("sor_count") == 1
    assert 95.0 <= report.get("sor_semantic_rate_kBps") <= 105.0
    assert report.get("max_cv2x_link_rate_Bps") <= 1.5e6


def test_cv2x_outage_falls_back_to_5g(scenario_path):
    report = _run(scenario_path("igad_cv2x_outage.json"))
    assert report.get("first_fallback_ms") == 2500
    assert report.get("first_safe_stop_ms") is None
    assert report.get("safety_stops") == 0
    assert report.get("dwell_fallback_5g_ms") > 0


def test_total_outage_ends_on_the_shoulder(scenario_path):
    report = _run(scenario_path("igad_total_outage.json"))
    assert report.get("first_fallback_ms") == 2500
    assert report.get("first_safe_stop_ms") == 3000
    assert report.get("safety_stops") == 1
    assert report.get("stopped_on_shoulder") == 1


def test_healthy_links_never_leave_cv2x(scenario_path):
    raw = load_scenario_raw(scenario_path("igad_cv2x_outage.json"))
    raw["channels"]["cv2x"]["outages"] = []
    report = run_scenario(spec_from_dict(raw))
    assert report.get("link_transitions") == 0
    assert report.get("safety_stops") == 0
    assert report.get("dwell_fallback_5g_ms") == 0


def test_congestion_aware_routing_beats_fixed_routes(scenario_path):
    raw = load_scenario_raw(scenario_path("two_route.json"))
    routed = run_scenario(spec_from_dict(raw))
    raw["itcs"]["routing_enabled"] = False
    fixed = run_scenario(spec_from_dict(raw))
    assert routed.get("route_plans_applied") > 0
    assert fixed.get("route_plans_sent") == 0
    assert routed.get("mean_vehicle_speed_mps") > 1.1 * fixed.get("mean_vehicle_speed_mps")


def test_identical_runs_share_a_trace_digest(scenario_path):
    a = _run(scenario_path("jitter_sweep.json"))
    b = _run(scenario_path("jitter_sweep.json"))
    c = _run(scenario_path("jitter_sweep.json"), seed=4)
    assert a.get("trace_digest") == b.get("trace_digest")
    assert a.get("trace_digest") != c.get("trace_digest")


def test_reference_cost_ratios_are_reported(scenario_path):
    report = _run(scenario_path("saturated_sor.json"))
    assert report.get("efficiency_ratio") == 12.0
    assert report.get("cost_per_km_ratio") == pytest.approx(84.70588, rel=1e-6)


def test_partition_schemes_build_the_same_global_map(scenario_path):
    raw = load_scenario_raw(scenario_path("extended_perception.json"))
    raw["duration_ms"] = 20000
    vertical = run_scenario(spec_from_dict(raw))
    raw.setdefault("itcs", {})["partition"] = {
        "scheme": "HORIZONTAL",
        "units": [
            {"id": "cu1", "service_us": {"fusion": 10.0, "prediction": 10.0, "planning": 10.0}},
            {"id": "cu2", "service_us": {"fusion": 10.0, "prediction": 10.0, "planning": 10.0}},
        ],
        "task_assignment": {"fusion": "cu1", "prediction": "cu2", "planning": "cu2"},
    }
    horizontal = run_scenario(spec_from_dict(raw))
    assert horizontal.get("partition_scheme") == "HORIZONTAL"
    for name in ("itcs_tracks", "itcs_tracks_peak", "itcs_frames_ingested", "disengagements"):
        assert horizontal.get(name) == vertical.get(name)
    assert horizontal.get("partition_makespan_max_ms") > 0.0
