"""Physical-vs-simulation test economics and SoR deployment cost.

All figures are exact closed-form evaluations; nothing here depends on a run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Mapping

from sim.sor import deployment_power, plan_placement

EDGE_CONSOLIDATION_NOTE = (
    "edge consolidation over fiber can pool SoR compute into shared roadside "
    "cabinets; its power saving is not modelled"
)


class CostModelError(ValueError):
    pass


@dataclass(frozen=True)
class CostParams:
    n_v: float = 1.0
    c_p: float = 180.0
    s: float = 30.0
    n_s: float = 1.0
    c_s: float = 8.5
    cap: int = 4
    h_p: float = 8.0
    h_s: float = 24.0
    rtf: float = 1.0

    def __post_init__(self) -> None:
        problems = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                problems.append(f"{f.name} must be a number")
            elif value < 0:
                problems.append(f"{f.name} must be >= 0 (got {value})")
        if isinstance(self.cap, float) and not self.cap.is_integer():
            problems.append(f"cap must be an integer (got {self.cap})")
        elif isinstance(self.cap, (int, float)) and self.cap < 1:
            problems.append(f"cap must be >= 1 (got {self.cap})")
        if problems:
            raise CostModelError("; ".join(problems))

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "CostParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise CostModelError(f"unknown cost parameter(s): {', '.join(unknown)}")
        return cls(**dict(values))

    def with_overrides(self, **overrides: Any) -> "CostParams":
        return replace(self, **overrides)


def physical_cost_per_day(p: CostParams) -> float:
    return p.h_p * p.n_v * p.c_p


def physical_km_per_day(p: CostParams) -> float:
    return p.h_p * p.s


def sim_cost_per_day(p: CostParams) -> float:
    return p.h_s * p.n_s * p.c_s


def sim_km_per_day(p: CostParams) -> float:
    return p.h_s * p.s * p.cap * p.rtf


def ratios(p: CostParams) -> tuple[float, float]:
    """``(efficiency_ratio, cost_per_km_ratio)``; the speed cancels out of the second."""
    if p.h_p == 0:
        raise CostModelError("h_p must be > 0 to compute the efficiency ratio")
    if p.c_s == 0:
        raise CostModelError("c_s must be > 0 to compute the cost-per-km ratio")
    if p.s == 0:
        raise CostModelError("s must be > 0 to compute per-km costs")
    efficiency = p.h_s * p.cap * p.rtf / p.h_p
    cost_ratio = p.c_p * p.cap * p.rtf / p.c_s
    return efficiency, cost_ratio


def rtf_for_cost_ratio(target: float, p: CostParams) -> float:
    """Real-time factor that makes the cost-per-km ratio equal ``target``."""
    if p.cap == 0 or p.c_p == 0:
        raise CostModelError("cap and c_p must be > 0")
    return target * p.c_s / (p.cap * p.c_p)


@dataclass(frozen=True)
class DeploymentCost:
    corridor_km: float
    sor_count: int
    capex: float
    power_w: float
    power_cost_per_day: float


def deployment_cost(
    corridor_km: float,
    sor_unit_cost: float,
    power_tariff: float,
    coverage_each_direction_m: float = 125.0,
    sor_power_w: float = 800.0,
) -> DeploymentCost:
    if corridor_km <= 0:
        raise CostModelError("corridor_km must be > 0")
    if sor_unit_cost < 0 or power_tariff < 0:
        raise CostModelError("sor_unit_cost and power_tariff must be >= 0")
    count = len(plan_placement(corridor_km * 1000.0, coverage_each_direction_m))
    watts = deployment_power(count, sor_power_w)
    return DeploymentCost(
        corridor_km=corridor_km,
        sor_count=count,
        capex=count * sor_unit_cost,
        power_w=watts,
        power_cost_per_day=watts * 24.0 / 1000.0 * power_tariff,
    )


@dataclass(frozen=True)
class CostReport:
    params: CostParams
    physical_cost_per_day: float
    sim_cost_per_day: float
    physical_km_per_day: float
    sim_km_per_day: float
    physical_cost_per_km: float
    sim_cost_per_km: float
    efficiency_ratio: float
    cost_per_km_ratio: float
    deployment: DeploymentCost
    note: str = EDGE_CONSOLIDATION_NOTE

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def cost_report(
    p: CostParams,
    corridor_km: float = 1.0,
    sor_unit_cost: float = 0.0,
    power_tariff: float = 0.0,
) -> CostReport:
    efficiency, cost_ratio = ratios(p)
    phys_km = physical_km_per_day(p)
    sim_km = sim_km_per_day(p)
    phys_cost = physical_cost_per_day(p)
    sim_cost = sim_cost_per_day(p)
    return CostReport(
        params=p,
        physical_cost_per_day=phys_cost,
        sim_cost_per_day=sim_cost,
        physical_km_per_day=phys_km,
        sim_km_per_day=sim_km,
        physical_cost_per_km=p.c_p / p.s,
        sim_cost_per_km=p.c_s / (p.s * p.cap * p.rtf) if p.rtf > 0 else float("inf"),
        efficiency_ratio=efficiency,
        cost_per_km_ratio=cost_ratio,
        deployment=deployment_cost(corridor_km, sor_unit_cost, power_tariff),
    )
