"""Run reports: metric records, table rendering and A/B comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

Value = Union[int, float, str, None]


class ReportMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Metric:
    name: str
    value: Value
    unit: str

    def record(self) -> Dict[str, Any]:
        return {"name": self.name, "value": self.value, "unit": self.unit}


@dataclass
class MetricsReport:
    scenario_id: str
    mode: str
    seed: int
    topology: str
    metrics: List[Metric] = field(default_factory=list)
    fusion_log: List[Dict[str, Any]] = field(default_factory=list)

    def add(self, name: str, value: Value, unit: str = "") -> None:
        if any(m.name == name for m in self.metrics):
            raise ValueError(f"metric {name} already recorded")
        self.metrics.append(Metric(name, value, unit))

    def get(self, name: str) -> Value:
        for m in self.metrics:
            if m.name == name:
                return m.value
        raise KeyError(name)

    def as_dict(self) -> Dict[str, Value]:
        return {m.name: m.value for m in self.metrics}

    def header(self) -> List[Metric]:
        return [
            Metric("scenario", self.scenario_id, ""),
            Metric("mode", self.mode, ""),
            Metric("seed", self.seed, ""),
        ]


def to_records(report: MetricsReport, include_fusion_log: bool = False) -> str:
    lines = [json.dumps(m.record(), sort_keys=True) for m in report.header() + report.metrics]
    if include_fusion_log:
        for entry in report.fusion_log:
            lines.append(json.dumps({"name": "fusion_tick", "value": entry, "unit": ""}, sort_keys=True))
    return "\n".join(lines) + "\n"


def _fmt(value: Value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def render_table(rows: Sequence[Sequence[str]]) -> str:
    if not rows:
        return ""
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    out = []
    for r in rows:
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return "\n".join(out) + "\n"


def to_table(report: MetricsReport) -> str:
    rows = [("name", "value", "unit")]
    rows += [(m.name, _fmt(m.value), m.unit) for m in report.header() + report.metrics]
    return render_table(rows)


def emit(report: MetricsReport, fmt: str = "records", include_fusion_log: bool = False) -> str:
    if fmt == "records":
        return to_records(report, include_fusion_log)
    if fmt == "table":
        return to_table(report)
    raise ValueError(f"unknown report format {fmt!r}")


# ------------------------------------------------------------------
# comparison
# ------------------------------------------------------------------


@dataclass(frozen=True)
class MetricDelta:
    name: str
    a: Value
    b: Value
    delta: Optional[float]
    relative: Optional[float]
    unit: str


def _numeric(v: Value) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def compare(report_a: MetricsReport, report_b: MetricsReport) -> List[MetricDelta]:
    """Per-metric ``b - a`` deltas; relative deltas are against ``|a|``."""
    if report_a.topology != report_b.topology:
        raise ReportMismatchError(
            f"cannot compare {report_a.scenario_id} and {report_b.scenario_id}: road topologies differ"
        )
    b_values = {m.name: m for m in report_b.metrics}
    out: List[MetricDelta] = []
    for m in report_a.metrics:
        other = b_values.get(m.name)
        if other is None:
            continue
        if _numeric(m.value) and _numeric(other.value):
            delta = float(other.value) - float(m.value)
            rel = delta / abs(float(m.value)) if m.value != 0 else (0.0 if delta == 0 else None)
            out.append(MetricDelta(m.name, m.value, other.value, delta, rel, m.unit))
        else:
            out.append(MetricDelta(m.name, m.value, other.value, None, None, m.unit))
    return out


def delta_records(deltas: Iterable[MetricDelta]) -> str:
    lines = []
    for d in deltas:
        lines.append(json.dumps(
            {"name": d.name, "a": d.a, "b": d.b, "delta": d.delta, "relative": d.relative, "unit": d.unit},
            sort_keys=True,
        ))
    return "\n".join(lines) + "\n"


def delta_table(deltas: Iterable[MetricDelta]) -> str:
    rows: List[Tuple[str, ...]] = [("name", "a", "b", "delta", "relative", "unit")]
    for d in deltas:
        rel = "-" if d.relative is None else f"{d.relative * 100:+.1f}%"
        rows.append((d.name, _fmt(d.a), _fmt(d.b), _fmt(d.delta), rel, d.unit))
    return render_table(rows)


def series_table(param: str, values: Sequence[Any], reports: Sequence[MetricsReport]) -> str:
    """One row per metric, one column per swept value."""
    if not reports:
        return ""
    rows: List[Tuple[str, ...]] = [("name",) + tuple(f"{param}={v}" for v in values) + ("unit",)]
    for m in reports[0].metrics:
        rows.append((m.name,) + tuple(_fmt(r.get(m.name)) for r in reports) + (m.unit,))
    return render_table(rows)


def series_records(param: str, values: Sequence[Any], reports: Sequence[MetricsReport]) -> str:
    lines = []
    for v, r in zip(values, reports):
        for m in r.metrics:
            rec = m.record()
            rec["param"] = param
            rec["param_value"] = v
            lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"
