"""Runtime configuration utilities."""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

_FALSE_VALUES = {"0", "false", "no", "off"}


@dataclass
class Settings:
    """Settings loaded from environment variables."""

    threads: int = 0
    output_dir: str = "out"

    quad_budget: int = 1_000_000
    qmc_points_low: int = 200_000
    qmc_points_high: int = 2_000_000
    qmc_replicates: int = 16
    shard_size: int = 65_536

    log_dir: Optional[str] = None
    log_level: str = "INFO"
    log_file: bool = True
    log_keep: int = 5

    @property
    def worker_count(self) -> int:
        """Worker cap; zero means use every available core."""

        if self.threads > 0:
            return self.threads
        return os.cpu_count() or 1

    @classmethod
    def from_env(cls) -> "Settings":
        """Construct settings from environment variables."""

        def _optional(name: str) -> Optional[str]:
            value = os.getenv(name)
            return value if value not in {None, ""} else None

        data = {
            "output_dir": os.getenv("FADECHAN_OUTPUT_DIR", cls.output_dir),
            "log_dir": _optional("FADECHAN_LOG_DIR"),
            "log_level": os.getenv("FADECHAN_LOG_LEVEL", cls.log_level).upper(),
            "log_file": os.getenv("FADECHAN_LOG_FILE", "1").strip().lower() not in _FALSE_VALUES,
        }

        integer_fields = {
            "FADECHAN_THREADS": "threads",
            "FADECHAN_QUAD_BUDGET": "quad_budget",
            "FADECHAN_QMC_POINTS_LOW": "qmc_points_low",
            "FADECHAN_QMC_POINTS_HIGH": "qmc_points_high",
            "FADECHAN_QMC_REPLICATES": "qmc_replicates",
            "FADECHAN_SHARD_SIZE": "shard_size",
            "FADECHAN_LOG_KEEP": "log_keep",
        }
        for env_name, field_name in integer_fields.items():
            if (value := _optional(env_name)) is not None:
                data[field_name] = int(value)

        return cls(**data)


@lru_cache
def get_settings() -> Settings:
    """Return cached application settings."""

    return Settings.from_env()
