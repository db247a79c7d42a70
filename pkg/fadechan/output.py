"""Canonical, byte-stable writers for run summaries and distributions."""
from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Union

import numpy as np
import structlog

log = structlog.get_logger(__name__)

SIGNIFICANT_DIGITS = 12
CSV_HEADER = "eta_bin_left,eta_bin_right,density"

PathLike = Union[str, Path]


def format_float(value: float) -> str:
    return f"{float(value):.{SIGNIFICANT_DIGITS}g}"


def canonical(value: Any) -> Any:
    """Convert results into plain JSON data with floats rounded to 12 significant digits.

    Non-finite floats become ``None``; numpy scalars and arrays become Python values.
    """

    if isinstance(value, dict):
        return {str(key): canonical(val) for key, val in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonical(item) for item in value]
    if isinstance(value, np.ndarray):
        return canonical(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(float(value)):
            return None
        return float(format_float(value))
    if hasattr(value, "to_dict"):
        return canonical(value.to_dict())
    return value


def dumps_canonical(payload: Any) -> str:
    return json.dumps(canonical(payload), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write ``text`` through a temporary file in the same directory, then rename."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    log.debug("output.file_written", path=str(target), bytes=len(text.encode("utf-8")))
    return target


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write_text(path, dumps_canonical(payload))


def distribution_csv(bin_edges: Iterable[float], density: Iterable[float]) -> str:
    edges = np.asarray(list(bin_edges), dtype=float)
    values = np.asarray(list(density), dtype=float)
    if edges.size != values.size + 1:
        raise ValueError("bin_edges must have one more entry than density")
    rows = [CSV_HEADER]
    for left, right, dens in zip(edges[:-1], edges[1:], values):
        rows.append(f"{format_float(left)},{format_float(right)},{format_float(dens)}")
    return "\n".join(rows) + "\n"


def write_distribution_csv(path: PathLike, dist) -> Path:
    """Write a ``TransmittanceDistribution`` as one CSV row per bin."""

    return atomic_write_text(path, distribution_csv(dist.bin_edges, dist.density))


__all__ = [
    "CSV_HEADER",
    "atomic_write_text",
    "canonical",
    "distribution_csv",
    "dumps_canonical",
    "format_float",
    "write_distribution_csv",
    "write_json",
]
