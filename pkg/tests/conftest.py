import sys
from pathlib import Path

import pytest

# Ensure repository root is on sys.path so tests can import sim/, config/ and tools/
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))


@pytest.fixture
def scenario_path():
    """Resolve a file name under the bundled ``scenarios/`` directory."""

    def _resolve(name: str) -> Path:
        path = ROOT / "scenarios" / name
        assert path.is_file(), f"missing reference scenario {name}"
        return path

    return _resolve
