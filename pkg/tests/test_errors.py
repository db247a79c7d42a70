import pytest

from fadechan.errors import (
    EXIT_BUDGET,
    EXIT_DIAGNOSTIC,
    EXIT_INPUT,
    DomainError,
    IntegrationBudgetError,
    ModelDiagnosticError,
    ScenarioError,
    exit_code_for,
)


@pytest.mark.parametrize(
    "exc, code",
    [
        (ScenarioError("bad"), EXIT_INPUT),
        (DomainError("bad"), EXIT_INPUT),
        (ModelDiagnosticError("bad", diagnostics={"rejection_rate": 0.7}), EXIT_DIAGNOSTIC),
        (IntegrationBudgetError("bad", best_estimate=1.0, error_estimate=0.1, evaluations=10), EXIT_BUDGET),
    ],
)
def test_exit_codes(exc, code):
    assert exit_code_for(exc) == code


def test_unknown_exception_has_no_exit_code():
    assert exit_code_for(KeyError("x")) is None


def test_errors_keep_standard_bases_and_payloads():
    diag = ModelDiagnosticError("rejections", diagnostics={"rejection_rate": 0.6})
    budget = IntegrationBudgetError("budget", best_estimate=0.5, error_estimate=1e-3, evaluations=42)

    assert isinstance(ScenarioError("x"), ValueError)
    assert isinstance(diag, RuntimeError)
    assert diag.diagnostics == {"rejection_rate": 0.6}
    assert (budget.best_estimate, budget.error_estimate, budget.evaluations) == (0.5, 1e-3, 42)
