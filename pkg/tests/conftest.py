import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from fadechan import config  # noqa: E402

_ENV_VARS = (
    "FADECHAN_THREADS",
    "FADECHAN_OUTPUT_DIR",
    "FADECHAN_QUAD_BUDGET",
    "FADECHAN_QMC_POINTS_LOW",
    "FADECHAN_QMC_POINTS_HIGH",
    "FADECHAN_QMC_REPLICATES",
    "FADECHAN_SHARD_SIZE",
    "FADECHAN_LOG_LEVEL",
    "FADECHAN_LOG_FILE",
    "FADECHAN_LOG_KEEP",
)


@pytest.fixture(autouse=True)
def _set_test_environment(monkeypatch, tmp_path):
    """Start every test from default settings and keep logs out of the tree."""

    for name in _ENV_VARS:
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("FADECHAN_LOG_DIR", str(tmp_path / "logs"))
    config.get_settings.cache_clear()
    yield
    config.get_settings.cache_clear()


@pytest.fixture
def small_budget(monkeypatch):
    """Small QMC budgets for statistics runs inside unit tests."""

    monkeypatch.setenv("FADECHAN_QMC_POINTS_LOW", "4096")
    monkeypatch.setenv("FADECHAN_QMC_POINTS_HIGH", "16384")
    monkeypatch.setenv("FADECHAN_QMC_REPLICATES", "8")
    monkeypatch.setenv("FADECHAN_THREADS", "2")
    config.get_settings.cache_clear()
    return config.get_settings()
