"""Exception hierarchy shared by the numerical modules and the CLI."""
from __future__ import annotations

from typing import Optional


class ScenarioError(ValueError):
    """Raised when a scenario file or override cannot be turned into a valid scenario."""


class DomainError(ValueError):
    """Raised when a numerical routine is called outside its domain."""


class ModelDiagnosticError(RuntimeError):
    """Raised when a channel model leaves its range of validity."""

    def __init__(self, message: str, *, diagnostics: Optional[dict] = None) -> None:
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class IntegrationBudgetError(RuntimeError):
    """Raised when adaptive quadrature exhausts its evaluation budget.

    The best estimate reached before giving up is kept on the exception so that
    callers can report partial results.
    """

    def __init__(
        self,
        message: str,
        *,
        best_estimate: float,
        error_estimate: float,
        evaluations: int,
    ) -> None:
        super().__init__(message)
        self.best_estimate = best_estimate
        self.error_estimate = error_estimate
        self.evaluations = evaluations


EXIT_OK = 0
EXIT_INPUT = 1
EXIT_DIAGNOSTIC = 2
EXIT_BUDGET = 3


def exit_code_for(exc: BaseException) -> Optional[int]:
    """Map an exception raised during a run to the documented process exit code."""

    if isinstance(exc, IntegrationBudgetError):
        return EXIT_BUDGET
    if isinstance(exc, ModelDiagnosticError):
        return EXIT_DIAGNOSTIC
    if isinstance(exc, (ScenarioError, DomainError)):
        return EXIT_INPUT
    return None
