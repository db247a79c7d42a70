"""Scenario loading and run orchestration behind the command-line interface."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import structlog
from pydantic import ValidationError

from fadechan.domain_types import ApertureGeometry, CorrectionSettings, Scenario
from fadechan.errors import ModelDiagnosticError, ScenarioError
from fadechan.numerics import RngStream
from fadechan.output import write_distribution_csv, write_json
from fadechan.pdt import (
    TransmittanceDistribution,
    pdt_beam_wandering,
    pdt_elliptic,
    pdt_weak_bw,
    scan_offset,
    weak_bw_params,
)
from fadechan.turbulence import FieldStatistics, compute_field_statistics

log = structlog.get_logger(__name__)

# The vacuum limit of the phase-approximation mean intensity is a beam focused on the receiver.
VACUUM_SPOT_CONVENTION = "W0/Omega (receiver-focused); a collimated beam would give W0*sqrt(1+Omega^-2)"

PDT_STREAM = 10
MODELS = ("beam_wandering", "elliptic", "weak_bw")


@dataclass
class RunOutcome:
    summary: Dict[str, Any]
    files: List[Path] = field(default_factory=list)


# -- loading -------------------------------------------------------------------


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(item) for item in error.get("loc", ())) or "scenario"
        parts.append(f"{location}: {error.get('msg', 'invalid value')}")
    return "; ".join(parts)


def parse_override(item: str) -> tuple:
    """Split ``dotted.path=value``; the value is read as JSON, falling back to a string."""

    if "=" not in item:
        raise ScenarioError(f"override {item!r} must look like key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ScenarioError(f"override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Return a copy of raw scenario data with ``--set`` overrides applied."""

    result = json.loads(json.dumps(data))
    for item in overrides:
        key, value = parse_override(item)
        node = result
        *parents, leaf = key.split(".")
        for part in parents:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ScenarioError(f"override {key!r} descends into a non-object field {part!r}")
            node = child
        node[leaf] = value
    return result


def build_scenario(data: Dict[str, Any]) -> Scenario:
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(f"invalid scenario: {_format_validation(exc)}") from exc
    for warning in scenario.applicability_warnings():
        log.warning("scenario.applicability", message=warning)
    return scenario


def load_scenario(path: Path | str, overrides: Sequence[str] = ()) -> Scenario:
    """Read, override and validate a scenario file; unset fields take the defaults."""

    source = Path(path)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ScenarioError(f"scenario file {source} not found") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: a scenario must be a JSON object")

    scenario = build_scenario(apply_overrides(data, overrides))
    log.info("scenario.loaded", path=str(source), model=scenario.model, hash=scenario.scenario_hash())
    return scenario


def with_field(scenario: Scenario, section: str, key: str, value: Any) -> Scenario:
    data = scenario.model_dump(mode="json")
    data[section][key] = value
    return build_scenario(data)


# -- statistics ----------------------------------------------------------------


def load_statistics(path: Path | str) -> FieldStatistics:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read statistics file {path}: {exc}") from exc
    return FieldStatistics.from_dict(data)


def obtain_statistics(scenario: Scenario, stats_path: Optional[Path | str] = None) -> FieldStatistics:
    if stats_path is not None:
        log.info("scenario.statistics_cached", path=str(stats_path))
        return load_statistics(stats_path)
    return compute_field_statistics(scenario.channel, scenario.aperture, scenario.sampling)


def _base_summary(scenario: Scenario, command: str) -> Dict[str, Any]:
    return {
        "command": command,
        "model": scenario.model,
        "scenario_hash": scenario.scenario_hash(),
        "seed": scenario.sampling.seed,
        "warnings": scenario.applicability_warnings(),
    }


def stats_summary(scenario: Scenario, stats: FieldStatistics) -> Dict[str, Any]:
    summary = _base_summary(scenario, "stats")
    summary.update(stats.to_dict())
    summary.update(
        {
            "sigma_R2": scenario.channel.rytov2,
            "Omega": scenario.channel.Omega,
            "W_vacuum": scenario.channel.vacuum_spot,
            "W_vacuum_convention": VACUUM_SPOT_CONVENTION,
        }
    )
    return summary


def run_stats(scenario: Scenario, out_dir: Path | str) -> RunOutcome:
    stats = compute_field_statistics(scenario.channel, scenario.aperture, scenario.sampling)
    summary = stats_summary(scenario, stats)
    path = write_json(Path(out_dir) / "stats.json", summary)
    return RunOutcome(summary=summary, files=[path])


# -- distributions -------------------------------------------------------------


def run_model(
    scenario: Scenario,
    stats: FieldStatistics,
    geom: Optional[ApertureGeometry] = None,
    corrections: Optional[CorrectionSettings] = None,
    model: Optional[str] = None,
) -> TransmittanceDistribution:
    """Sample the PDT of one model with the scenario's seed and binning."""

    geom = geom or scenario.aperture
    corrections = corrections or scenario.corrections
    model = model or scenario.model
    plan = scenario.sampling.resolved()
    rng = RngStream(plan.seed, PDT_STREAM)
    common = {
        "shard_size": plan.shard_size,
        "provenance": {"scenario_hash": scenario.scenario_hash(), "seed": plan.seed},
    }

    if model == "beam_wandering":
        return pdt_beam_wandering(
            stats.W_ST, stats.sigma_bw, geom, corrections, plan.n_samples, plan.bins, rng, **common
        )
    if model == "elliptic":
        return pdt_elliptic(
            stats,
            scenario.channel,
            geom,
            corrections,
            plan.n_samples,
            plan.bins,
            rng,
            angle_mode=plan.angle_mode,
            angle_std=plan.angle_std,
            **common,
        )
    if model == "weak_bw":
        wparams = weak_bw_params(stats, geom, corrections, budget=plan.quad_budget)
        dist = pdt_weak_bw(wparams, stats, geom, corrections, plan.n_samples, plan.bins, rng, **common)
        dist.diagnostics["weak_bw_params"] = wparams.to_dict()
        return dist
    raise ScenarioError(f"unknown model {model!r}")


def _reference_moments(stats: FieldStatistics, corrections: CorrectionSettings) -> Dict[str, float]:
    eta_det = corrections.eta_det
    return {
        "mean": stats.annular_mean * eta_det,
        "second_moment": stats.annular_second_moment * eta_det**2,
        "variance": stats.annular_variance * eta_det**2,
    }


def distribution_summary(
    scenario: Scenario, dist: TransmittanceDistribution, stats: FieldStatistics, command: str
) -> Dict[str, Any]:
    summary = _base_summary(scenario, command)
    summary["distribution"] = dist.to_dict()
    summary["reference"] = _reference_moments(stats, scenario.corrections)
    summary["statistics_flags"] = list(stats.flags)
    return summary


def run_pdt(scenario: Scenario, out_dir: Path | str, stats_path: Optional[Path | str] = None) -> RunOutcome:
    stats = obtain_statistics(scenario, stats_path)
    dist = run_model(scenario, stats)
    out = Path(out_dir)
    summary = distribution_summary(scenario, dist, stats, "pdt")
    files = [write_distribution_csv(out / "pdt.csv", dist), write_json(out / "pdt.json", summary)]
    return RunOutcome(summary=summary, files=files)


def _row(index: int, value: float, dist: TransmittanceDistribution, name: str) -> Dict[str, Any]:
    return {
        "index": index,
        "value": value,
        "mean": dist.mean,
        "second_moment": dist.second_moment,
        "variance": dist.variance,
        "flags": list(dist.flags),
        "file": name,
    }


def run_sweep(scenario: Scenario, out_dir: Path | str, stats_path: Optional[Path | str] = None) -> RunOutcome:
    """Run the scenario model over the sweep grid; one CSV per grid point plus a table."""

    if scenario.sweep is None:
        raise ScenarioError("scenario has no sweep section")
    variable = scenario.sweep.variable
    grid = list(scenario.sweep.grid)
    out = Path(out_dir)
    files: List[Path] = []
    rows: List[Dict[str, Any]] = []

    if variable == "L" and stats_path is not None:
        raise ScenarioError("cached statistics cannot be reused across path lengths")

    if variable == "d0":
        stats = obtain_statistics(scenario, stats_path)
        results = scan_offset(lambda geom: run_model(scenario, stats, geom=geom), scenario.aperture, grid)
        dists = [(item.d0, item.distribution) for item in results]
    elif variable == "tracking_ratio":
        stats = obtain_statistics(scenario, stats_path)
        dists = []
        for value in grid:
            corrections = with_field(scenario, "corrections", "tracking_ratio", value).corrections
            dists.append((value, run_model(scenario, stats, corrections=corrections)))
    else:
        dists = []
        for value in grid:
            point = with_field(scenario, "channel", "L", value)
            dists.append((value, run_model(point, obtain_statistics(point))))

    for index, (value, dist) in enumerate(dists):
        name = f"pdt_{variable}_{index:03d}.csv"
        files.append(write_distribution_csv(out / name, dist))
        rows.append(_row(index, value, dist, name))

    best = max(rows, key=lambda row: row["mean"])
    summary = _base_summary(scenario, "sweep")
    summary.update({"variable": variable, "rows": rows, "best": {"value": best["value"], "mean": best["mean"]}})
    files.append(write_json(out / "sweep.json", summary))
    log.info("scenario.sweep_completed", variable=variable, points=len(rows), best=best["value"])
    return RunOutcome(summary=summary, files=files)


def run_compare(scenario: Scenario, out_dir: Path | str, stats_path: Optional[Path | str] = None) -> RunOutcome:
    """All three models on one statistics pass, with moment deviations from first principles."""

    stats = obtain_statistics(scenario, stats_path)
    reference = _reference_moments(stats, scenario.corrections)
    out = Path(out_dir)
    files: List[Path] = []
    rows: Dict[str, Any] = {}

    for model in MODELS:
        try:
            dist = run_model(scenario, stats, model=model)
        except ModelDiagnosticError as exc:
            log.warning("scenario.compare_model_failed", model=model, error=str(exc))
            rows[model] = {"error": str(exc), "diagnostics": exc.diagnostics}
            continue
        name = f"compare_{model}.csv"
        files.append(write_distribution_csv(out / name, dist))
        rows[model] = {
            "mean": dist.mean,
            "variance": dist.variance,
            "mean_deviation": (dist.mean - reference["mean"]) / reference["mean"] if reference["mean"] else None,
            "variance_deviation": (dist.variance - reference["variance"]) / reference["variance"]
            if reference["variance"] > 0
            else None,
            "flags": list(dist.flags),
            "file": name,
        }

    summary = _base_summary(scenario, "compare")
    summary.update({"reference": reference, "models": rows, "statistics_flags": list(stats.flags)})
    files.append(write_json(out / "compare.json", summary))
    return RunOutcome(summary=summary, files=files)


__all__ = [
    "MODELS",
    "RunOutcome",
    "apply_overrides",
    "build_scenario",
    "distribution_summary",
    "load_scenario",
    "load_statistics",
    "obtain_statistics",
    "parse_override",
    "run_compare",
    "run_model",
    "run_pdt",
    "run_stats",
    "run_sweep",
    "stats_summary",
    "with_field",
]
