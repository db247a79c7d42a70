"""Logging for command-line runs: structlog rendered through stdlib handlers.

Importing the package configures nothing. ``fadechan.cli.main`` calls
``configure_logging`` once per process; the console gets readable lines on
stderr and each run writes a JSON log beside its outputs.
"""
from __future__ import annotations

import logging
import logging.config
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import structlog

from fadechan.config import get_settings

_CONFIGURED = False
LOG_FILE_NAME = "fadechan.log"
_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


def _log_directory(out_dir: Optional[Path | str]) -> Optional[Path]:
    """``FADECHAN_LOG_DIR`` wins; otherwise ``<out>/logs``; ``None`` means console only."""

    settings = get_settings()
    if not settings.log_file:
        return None
    if settings.log_dir:
        log_dir = Path(settings.log_dir)
    elif out_dir is not None:
        log_dir = Path(out_dir) / "logs"
    else:
        return None
    log_dir.mkdir(parents=True, exist_ok=True)
    return log_dir


def _rotate_on_start(log_file: Path, keep: int) -> Optional[Path]:
    """Move the previous run's log aside and prune all but ``keep`` older runs."""

    if not log_file.exists():
        return None

    timestamp = datetime.now(tz=timezone.utc).strftime("%Y%m%d_%H%M%S")
    rotated = log_file.with_name(f"{log_file.stem}.{timestamp}{log_file.suffix}")
    try:
        log_file.replace(rotated)
    except OSError:
        return None

    previous: List[Path] = sorted(log_file.parent.glob(f"{log_file.stem}.*{log_file.suffix}"))
    for stale in previous[: max(len(previous) - keep, 0)]:
        try:
            stale.unlink()
        except OSError:
            pass
    return rotated


def _console_level() -> str:
    level = get_settings().log_level.upper()
    return level if level in _LEVELS else "INFO"


def _build_logging_config(log_file: Optional[Path]) -> Dict[str, Any]:
    shared_processors = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso", utc=True),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
    ]

    handlers: Dict[str, Dict[str, Any]] = {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "console",
            "level": _console_level(),
            "stream": "ext://sys.stderr",
        }
    }
    if log_file is not None:
        handlers["file"] = {
            "class": "logging.FileHandler",
            "formatter": "json",
            "level": "DEBUG",
            "filename": str(log_file),
            "mode": "w",
            "encoding": "utf-8",
        }

    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "json": {
                "()": structlog.stdlib.ProcessorFormatter,
                "processor": structlog.processors.JSONRenderer(sort_keys=True),
                "foreign_pre_chain": shared_processors,
            },
            "console": {
                "()": structlog.stdlib.ProcessorFormatter,
                "processor": structlog.dev.ConsoleRenderer(colors=False),
                "foreign_pre_chain": shared_processors,
            },
        },
        "handlers": handlers,
        "root": {
            "handlers": list(handlers),
            "level": "DEBUG",
        },
    }


def configure_logging(out_dir: Optional[Path | str] = None) -> Optional[Path]:
    """Install the handlers once per process; returns the run log path, if any."""

    global _CONFIGURED
    if _CONFIGURED:
        return None

    log_dir = _log_directory(out_dir)
    log_file = log_dir / LOG_FILE_NAME if log_dir is not None else None
    if log_file is not None:
        _rotate_on_start(log_file, get_settings().log_keep)

    logging.config.dictConfig(_build_logging_config(log_file))

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    _CONFIGURED = True
    return log_file


__all__ = ["LOG_FILE_NAME", "configure_logging"]
