from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict

from sim.config_validation import ConfigError, validate_scenario_config


def load_json(path: Path) -> Dict[str, Any]:
    with path.open("r", encoding="utf-8") as f:
        return json.load(f)


def load_scenario_raw(path: Path) -> Dict[str, Any]:
    """Read and validate a scenario file; the returned dict has every default filled in."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Scenario file not found: {path}")
    try:
        data = load_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    cfg = validate_scenario_config(data)
    raw = cfg.raw
    raw["metadata"].setdefault("source_file", str(path))
    return raw
