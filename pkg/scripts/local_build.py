#!/usr/bin/env python3
"""Lint, compile, test and run the oracle suite for fadechan locally."""
from __future__ import annotations

import argparse
import importlib
import os
import shlex
import sys
from pathlib import Path
from tempfile import TemporaryDirectory
# Bandit: subprocess usage restricted to curated commands.
from subprocess import CalledProcessError, run  # nosec B404
from typing import Sequence


PROJECT_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_ENV = os.environ.copy()
DEFAULT_ENV.setdefault("FADECHAN_LOG_LEVEL", "WARNING")
SAFE_MODULES = {"ruff", "bandit", "compileall", "pytest", "fadechan"}
SOURCE_DIRS = ("fadechan", "scripts")


class MissingDependencyError(RuntimeError):
    """Raised when a build step needs a module that is not installed."""


def check_command(command: Sequence[str]) -> None:
    """Allow only ``<this python> -m <allowlisted module> ...``."""

    if len(command) < 3:
        raise ValueError("Commands must look like '<python> -m <module> ...'.")
    if Path(command[0]) != Path(sys.executable):
        raise ValueError(f"Unsupported executable: {command[0]}")
    if command[1] != "-m":
        raise ValueError("Commands must invoke a Python module via '-m'.")
    if command[2] not in SAFE_MODULES:
        raise ValueError(f"Module '{command[2]}' is not in the approved allowlist.")


def run_step(step_name: str, command: list[str], *, env: dict[str, str] | None = None) -> None:
    check_command(command)
    print(f"\n==> {step_name}: {shlex.join(command)}")
    try:
        # Bandit: arguments are checked by check_command.
        run(command, cwd=PROJECT_ROOT, env=env or DEFAULT_ENV, check=True, shell=False)  # nosec B603
    except CalledProcessError as exc:
        raise SystemExit(exc.returncode) from exc


def require(module_name: str) -> None:
    try:
        importlib.import_module(module_name)
    except ModuleNotFoundError as exc:  # pragma: no cover - depends on the local install
        raise MissingDependencyError(
            f"Required module '{module_name}' is not installed; run `pip install {module_name}`."
        ) from exc


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--skip-lint", action="store_true", help="Skip ruff, bandit and compileall.")
    parser.add_argument("--skip-tests", action="store_true", help="Skip pytest.")
    parser.add_argument(
        "--validate",
        action="store_true",
        help="Also run `fadechan validate` on the shipped default scenario.",
    )
    parser.add_argument(
        "--pytest-args",
        nargs=argparse.REMAINDER,
        help="Extra arguments to forward to pytest.",
    )
    return parser.parse_args(argv)


def lint() -> None:
    require("ruff")
    run_step("ruff", [sys.executable, "-m", "ruff", "check", "--ignore", "E402", *SOURCE_DIRS, "tests"])

    require("bandit")
    run_step("bandit", [sys.executable, "-m", "bandit", "-q", "-r", *SOURCE_DIRS])

    with TemporaryDirectory(prefix="fadechan_pycache_") as cache_dir:
        env = DEFAULT_ENV.copy()
        env["PYTHONPYCACHEPREFIX"] = cache_dir
        run_step("compileall", [sys.executable, "-m", "compileall", "-q", *SOURCE_DIRS], env=env)


def test(pytest_args: list[str] | None) -> None:
    run_step("pytest", [sys.executable, "-m", "pytest", *(pytest_args or ["tests"])])


def validate() -> None:
    with TemporaryDirectory(prefix="fadechan_validate_") as out_dir:
        scenario = str(PROJECT_ROOT / "data" / "default_scenario.json")
        run_step("oracle suite", [sys.executable, "-m", "fadechan", "validate", scenario, "--out", out_dir])


def main(argv: list[str] | None = None) -> int:
    args = parse_args(argv)

    if not args.skip_lint:
        lint()
    if not args.skip_tests:
        test(args.pytest_args)
    if args.validate:
        validate()
    return 0


if __name__ == "__main__":  # pragma: no cover - CLI entry point
    raise SystemExit(main())
