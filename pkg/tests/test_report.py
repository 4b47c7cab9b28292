from __future__ import annotations

import json

import pytest

from sim.report import (
    MetricsReport,
    ReportMismatchError,
    compare,
    delta_records,
    delta_table,
    emit,
    series_records,
    series_table,
)


def _report(mode: str = "IAAD", topology: str = "abc", **metrics) -> MetricsReport:
    r = MetricsReport("demo", mode, 7, topology)
    for name, value in metrics.items():
        r.add(name, value, "count")
    return r


def test_records_are_one_json_object_per_line():
    r = _report(disengagements=3, trace_digest="ff")
    lines = emit(r).splitlines()
    first = json.loads(lines[0])
    assert first == {"name": "scenario", "value": "demo", "unit": ""}
    assert json.loads(lines[3]) == {"name": "disengagements", "value": 3, "unit": "count"}
    assert len(lines) == 5


def test_fusion_log_is_appended_only_when_requested():
    r = _report(disengagements=0)
    r.fusion_log.append({"t": 100, "vehicle": "sov-ego", "sources": ["sor1"], "misses": [], "objects": 2})
    assert "fusion_tick" not in emit(r)
    last = json.loads(emit(r, include_fusion_log=True).splitlines()[-1])
    assert last["name"] == "fusion_tick"
    assert last["value"]["sources"] == ["sor1"]


def test_table_format_aligns_columns():
    r = _report(disengagements=3)
    r.add("mean_speed", 9.87654, "m/s")
    r.add("first_safe_stop_ms", None, "ms")
    text = emit(r, "table")
    lines = text.splitlines()
    assert lines[0].split() == ["name", "value", "unit"]
    assert "9.8765" in text
    assert any(line.startswith("first_safe_stop_ms") and " - " in line for line in lines)
    with pytest.raises(ValueError):
        emit(r, "xml")


def test_duplicate_metric_names_are_rejected():
    r = _report(disengagements=1)
    with pytest.raises(ValueError):
        r.add("disengagements", 2)
    with pytest.raises(KeyError):
        r.get("missing")


def test_compare_reports_absolute_and_relative_deltas():
    a = _report("VEHICLE_ONLY", disengagements=20, misses=0, scheme="VERTICAL")
    b = _report("IAAD", disengagements=0, misses=0, scheme="VERTICAL")
    deltas = {d.name: d for d in compare(a, b)}
    assert deltas["disengagements"].delta == -20.0
    assert deltas["disengagements"].relative == pytest.approx(-1.0)
    assert deltas["misses"].relative == 0.0
    assert deltas["scheme"].delta is None

    grow = {d.name: d for d in compare(b, a)}
    assert grow["disengagements"].relative is None


def test_compare_refuses_different_topologies():
    with pytest.raises(ReportMismatchError):
        compare(_report(topology="one"), _report(topology="two"))


def test_delta_outputs():
    deltas = compare(_report(x=10), _report(x=15))
    rec = json.loads(delta_records(deltas).strip())
    assert rec == {"name": "x", "a": 10, "b": 15, "delta": 5.0, "relative": 0.5, "unit": "count"}
    assert "+50.0%" in delta_table(deltas)


def test_series_outputs_keep_value_order():
    reports = [_report(rate=0.0), _report(rate=0.4)]
    table = series_table("channels.cv2x.jitter_max_ms", [5, 50], reports)
    header = table.splitlines()[0]
    assert header.index("=5") < header.index("=50")
    rows = [json.loads(line) for line in series_records("p", [5, 50], reports).splitlines()]
    assert [(row["param_value"], row["value"]) for row in rows] == [(5, 0.0), (50, 0.4)]
