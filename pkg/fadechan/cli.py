"""Command-line front end: ``fadechan stats|pdt|sweep|compare|validate``."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import structlog

from fadechan.config import get_settings
from fadechan.errors import (
    EXIT_DIAGNOSTIC,
    EXIT_OK,
    IntegrationBudgetError,
    ModelDiagnosticError,
    ScenarioError,
    exit_code_for,
)
from fadechan.logging_config import configure_logging
from fadechan.output import write_json
from fadechan.scenario import (
    RunOutcome,
    load_scenario,
    run_compare,
    run_pdt,
    run_stats,
    run_sweep,
)
from fadechan.validation import load_tolerances, run_validation

log = structlog.get_logger(__name__)


def _overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"sampling.seed={args.seed}")
    return overrides


def _cmd_stats(args: argparse.Namespace) -> RunOutcome:
    return run_stats(load_scenario(args.scenario, _overrides(args)), args.out)


def _cmd_pdt(args: argparse.Namespace) -> RunOutcome:
    return run_pdt(load_scenario(args.scenario, _overrides(args)), args.out, args.stats)


def _cmd_sweep(args: argparse.Namespace) -> RunOutcome:
    return run_sweep(load_scenario(args.scenario, _overrides(args)), args.out, args.stats)


def _cmd_compare(args: argparse.Namespace) -> RunOutcome:
    return run_compare(load_scenario(args.scenario, _overrides(args)), args.out, args.stats)


def _cmd_validate(args: argparse.Namespace) -> RunOutcome:
    tolerances = load_tolerances(args.tolerances) if args.tolerances else None
    scenario = None
    schema_error = None
    if args.scenario is not None:
        try:
            scenario = load_scenario(args.scenario, _overrides(args))
        except ScenarioError as exc:
            schema_error = str(exc)
            log.warning("cli.validate_schema_failed", error=schema_error)

    report = run_validation(scenario, tolerances=tolerances, schema_error=schema_error)
    summary = report.to_dict()
    path = write_json(Path(args.out) / "validate.json", summary)
    return RunOutcome(summary=summary, files=[path])


COMMANDS: Dict[str, Callable[[argparse.Namespace], RunOutcome]] = {
    "stats": _cmd_stats,
    "pdt": _cmd_pdt,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "validate": _cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(
        prog="fadechan",
        description="Transmittance distributions of Gaussian beams through turbulence onto annular apertures.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument(
            "scenario",
            nargs="?" if name == "validate" else None,
            help="scenario JSON file",
        )
        sub.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a scenario field by dotted path, e.g. channel.L=3000 (repeatable)",
        )
        sub.add_argument("--seed", type=int, help="override sampling.seed")
        sub.add_argument("--out", default=settings.output_dir, help="output directory")
        if name in {"pdt", "sweep", "compare"}:
            sub.add_argument("--stats", help="reuse a stats.json written by `fadechan stats`")
        if name == "validate":
            sub.add_argument("--tolerances", help="JSON file mapping check names to tolerances")
    return parser


def _error_payload(command: str, exc: BaseException) -> Dict[str, Any]:
    payload: Dict[str, Any] = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ModelDiagnosticError):
        payload["diagnostics"] = exc.diagnostics
    if isinstance(exc, IntegrationBudgetError):
        payload.update(
            best_estimate=exc.best_estimate,
            error_estimate=exc.error_estimate,
            evaluations=exc.evaluations,
        )
    return payload


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    log_file = configure_logging(args.out)
    started = time.perf_counter()
    log.info(
        "cli.run_started",
        command=args.command,
        scenario=args.scenario,
        out=str(args.out),
        log_file=str(log_file) if log_file else None,
    )

    try:
        outcome = COMMANDS[args.command](args)
    except Exception as exc:
        code = exit_code_for(exc)
        if code is None:
            raise
        if code >= EXIT_DIAGNOSTIC:
            write_json(Path(args.out) / "error.json", _error_payload(args.command, exc))
        log.error("cli.run_failed", command=args.command, error=str(exc), exit_code=code)
        print(f"fadechan {args.command}: {exc}", file=sys.stderr)
        return code

    for path in outcome.files:
        print(path)

    code = EXIT_OK
    if args.command == "validate" and not outcome.summary.get("passed", False):
        code = EXIT_DIAGNOSTIC
    log.info(
        "cli.run_completed",
        command=args.command,
        exit_code=code,
        files=len(outcome.files),
        elapsed_s=round(time.perf_counter() - started, 3),
    )
    return code


__all__ = ["COMMANDS", "build_parser", "main"]
