from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from config.canonical_loader import load_scenario_raw
from sim.config_validation import COST_DEFAULTS, MODES, ConfigError
from sim.costmodel import CostModelError, CostParams, cost_report, deployment_cost
from sim.itcs import RoutingError
from sim.report import (
    ReportMismatchError,
    compare,
    delta_records,
    delta_table,
    emit,
    render_table,
    series_records,
    series_table,
)
from sim.runner import run_scenario, sweep
from sim.scenarios import spec_from_dict
from sim.simcore import SimulationError
from sim.sor import deployment_power, plan_placement
from version import __version__


def _common(p: argparse.ArgumentParser, scenario_required: bool = True) -> None:
    p.add_argument("--scenario", required=scenario_required, help="Scenario JSON file")
    p.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    p.add_argument("--mode", choices=MODES, default=None, help="Override the operating mode")
    p.add_argument("--out", default=None, help="Write the report here instead of stdout")
    p.add_argument("--format", choices=("records", "table"), default="records")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopsim", description="Cooperative driving simulator")
    parser.add_argument("--log-level", default="WARNING", help="Python logging level")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Run one scenario")
    _common(p_run)

    p_cmp = sub.add_parser("compare", help="Run two variants and print per-metric deltas")
    _common(p_cmp)
    p_cmp.add_argument("--against", default=None, help="Second scenario file (B side)")
    p_cmp.add_argument("--mode-b", choices=MODES, default=None, help="Mode for the B side")

    p_sweep = sub.add_parser("sweep", help="Run one scenario across values of a numeric parameter")
    _common(p_sweep)
    p_sweep.add_argument("--param", required=True, help="Dotted config path, e.g. channels.cv2x.jitter_max_ms")
    p_sweep.add_argument("--values", required=True, help="Comma-separated values")
    p_sweep.add_argument("--workers", type=int, default=None, help="Run variants in parallel processes")

    p_cost = sub.add_parser("cost", help="Physical vs simulation test economics")
    _common(p_cost, scenario_required=False)
    p_cost.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override a cost parameter")
    p_cost.add_argument("--corridor-km", type=float, default=1.0)

    p_place = sub.add_parser("placement", help="SoR placement and power for a corridor")
    p_place.add_argument("--length-m", type=float, required=True)
    p_place.add_argument("--coverage-m", type=float, default=125.0)
    p_place.add_argument("--sor-unit-cost", type=float, default=0.0)
    p_place.add_argument("--power-tariff", type=float, default=0.0)
    p_place.add_argument("--out", default=None)
    p_place.add_argument("--format", choices=("records", "table"), default="records")
    return parser


def _load(path: str, seed: Optional[int], mode: Optional[str]):
    return spec_from_dict(load_scenario_raw(Path(path)), seed=seed, mode=mode)


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_number(text: str) -> float | int:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"value {text!r} is not numeric") from exc


def _records(rows: Sequence[tuple]) -> str:
    return "".join(json.dumps({"name": n, "value": v, "unit": u}, sort_keys=True) + "\n" for n, v, u in rows)


def _rows_table(rows: Sequence[tuple]) -> str:
    return render_table([("name", "value", "unit")] + [(n, str(v), u) for n, v, u in rows])


def cmd_run(args: argparse.Namespace) -> int:
    spec = _load(args.scenario, args.seed, args.mode)
    report = run_scenario(spec)
    _write(emit(report, args.format, include_fusion_log=spec.log_ticks), args.out)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    if args.against is None and args.mode_b is None:
        raise ConfigError("compare needs --against or --mode-b")
    spec_a = _load(args.scenario, args.seed, args.mode)
    spec_b = _load(args.against or args.scenario, args.seed, args.mode_b or args.mode)
    deltas = compare(run_scenario(spec_a), run_scenario(spec_b))
    _write(delta_table(deltas) if args.format == "table" else delta_records(deltas), args.out)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    raw = load_scenario_raw(Path(args.scenario))
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.mode is not None:
        raw["mode"] = args.mode
    values: List[float | int] = [_parse_number(v) for v in args.values.split(",") if v.strip()]
    reports = sweep(raw, args.param, values, workers=args.workers)
    text = series_table(args.param, values, reports) if args.format == "table" else series_records(args.param, values, reports)
    _write(text, args.out)
    return 0


def cmd_cost(args: argparse.Namespace) -> int:
    values = dict(COST_DEFAULTS)
    if args.scenario:
        values.update(load_scenario_raw(Path(args.scenario))["cost"])
    for item in args.set:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE (got {item!r})")
        values[key.strip()] = _parse_number(text.strip())
    unit_cost = float(values.pop("sor_unit_cost"))
    tariff = float(values.pop("power_tariff"))
    params = CostParams.from_mapping(values)
    rep = cost_report(params, args.corridor_km, unit_cost, tariff)
    rows = [
        ("physical_cost_per_day", rep.physical_cost_per_day, "$/day"),
        ("sim_cost_per_day", rep.sim_cost_per_day, "$/day"),
        ("physical_km_per_day", rep.physical_km_per_day, "km/day"),
        ("sim_km_per_day", rep.sim_km_per_day, "km/day"),
        ("physical_cost_per_km", rep.physical_cost_per_km, "$/km"),
        ("sim_cost_per_km", rep.sim_cost_per_km, "$/km"),
        ("efficiency_ratio", rep.efficiency_ratio, "x"),
        ("cost_per_km_ratio", rep.cost_per_km_ratio, "x"),
        ("sor_count", rep.deployment.sor_count, "count"),
        ("deployment_power_w", rep.deployment.power_w, "W"),
        ("deployment_capex", rep.deployment.capex, "$"),
        ("deployment_power_cost_per_day", rep.deployment.power_cost_per_day, "$/day"),
        ("note", rep.note, ""),
    ]
    _write(_rows_table(rows) if args.format == "table" else _records(rows), args.out)
    return 0


def cmd_placement(args: argparse.Namespace) -> int:
    positions = plan_placement(args.length_m, args.coverage_m)
    deploy = deployment_cost(args.length_m / 1000.0, args.sor_unit_cost, args.power_tariff, args.coverage_m)
    per_km = deploy.power_cost_per_day / (args.length_m / 1000.0)
    rows = [
        ("sor_count", len(positions), "count"),
        ("sor_positions_m", positions, "m"),
        ("deployment_power_w", deployment_power(len(positions)), "W"),
        ("deployment_capex", deploy.capex, "$"),
        ("power_cost_per_day_per_km", per_km, "$/day/km"),
    ]
    _write(_rows_table(rows) if args.format == "table" else _records(rows), args.out)
    return 0


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "cost": cmd_cost,
    "placement": cmd_placement,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CostModelError, ReportMismatchError, RoutingError, SimulationError, ValueError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
