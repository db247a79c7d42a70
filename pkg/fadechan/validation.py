"""Desk-scale oracle checks for the special functions, aperture maps and vacuum optics.

Each check measures one error figure and passes when it stays within its
tolerance. Tolerances can be overridden per check name.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog
from scipy import special

from fadechan.aperture import (
    annular_transmittance_approx,
    annular_transmittance_exact,
    effective_spot,
    elliptic_max_transmittance,
)
from fadechan.domain_types import ChannelParams, Scenario
from fadechan.errors import ScenarioError
from fadechan.numerics import adaptive_quad_1d, bessel_i0, bessel_i1, lambert_w0, marcum_q
from fadechan.turbulence import disk_mean_transmittance, gamma2_radial, vacuum_disk_transmittance

log = structlog.get_logger(__name__)

# Published Rytov variances at 800 nm and Cn2 = 1e-14 for 1 to 5 km.
RYTOV_REFERENCE = {1000.0: 0.43, 2000.0: 1.53, 3000.0: 3.22, 4000.0: 5.47, 5000.0: 8.23}


@dataclass
class CheckResult:
    name: str
    passed: bool
    error: Optional[float]
    tolerance: float
    detail: str = ""


CheckFn = Callable[[Scenario], Tuple[float, str]]


def _rytov_table(_: Scenario) -> Tuple[float, str]:
    worst = 0.0
    for length, expected in RYTOV_REFERENCE.items():
        value = ChannelParams(wavelength=800e-9, Cn2=1e-14, L=length).rytov2
        worst = max(worst, abs(value / expected - 1.0))
    return worst, "relative deviation from the published table"


def _marcum_identity(_: Scenario) -> Tuple[float, str]:
    b = np.linspace(0.0, 5.0, 51)
    closed = np.exp(-0.5 * b * b)
    worst = float(np.max(np.abs(np.asarray(marcum_q(0.0, b)) - closed)))
    worst = max(worst, float(np.max(np.abs(np.asarray(marcum_q(np.linspace(0.0, 5.0, 11), 0.0)) - 1.0))))
    return worst, "Q(0, b) = exp(-b^2/2) and Q(a, 0) = 1"


def _marcum_quadrature(_: Scenario) -> Tuple[float, str]:
    worst = 0.0
    for a, b in ((1.0, 1.0), (0.5, 2.0), (2.0, 3.0), (3.0, 1.5)):
        oracle = adaptive_quad_1d(
            lambda x, a=a: x * math.exp(-0.5 * (x - a) ** 2) * special.i0e(a * x),
            b,
            math.inf,
            tol=1e-12,
        ).value
        worst = max(worst, abs(float(marcum_q(a, b)) - oracle))
    return worst, "absolute deviation from direct quadrature"


def _lambert_roundtrip(_: Scenario) -> Tuple[float, str]:
    x = np.linspace(0.0, 50.0, 201)
    w = np.asarray(lambert_w0(x * np.exp(x)))
    return float(np.max(np.abs(w - x) / (1.0 + x))), "|W(x e^x) - x| / (1 + x) on [0, 50]"


def _bessel_series(x: float, order: int) -> float:
    half = 0.5 * x
    terms = []
    k = 0
    term = half**order / math.factorial(order)
    while term > 1e-18 * (sum(terms) or 1.0) or k < 5:
        terms.append(term)
        k += 1
        term *= half * half / (k * (k + order))
    return math.fsum(terms)


def _bessel_reference(_: Scenario) -> Tuple[float, str]:
    worst = 0.0
    for x in (0.5, 1.0, 2.0, 5.0, 10.0, 30.0):
        worst = max(worst, abs(bessel_i0(x) / _bessel_series(x, 0) - 1.0))
        worst = max(worst, abs(bessel_i1(x) / _bessel_series(x, 1) - 1.0))
    return worst, "relative deviation from the power series"


def _annulus_quadrature(r0: float, W: float, a1: float, a2: float) -> float:
    def integrand(rho: float) -> float:
        scaled = 4.0 * rho / (W * W)
        return scaled * math.exp(-2.0 * (rho - r0) ** 2 / (W * W)) * special.i0e(scaled * r0)

    return adaptive_quad_1d(integrand, a2, a1, tol=1e-12).value


def _map_grid(a1: float) -> Tuple[np.ndarray, np.ndarray]:
    return np.linspace(0.25 * a1, 2.5 * a1, 20), np.linspace(0.0, 2.0 * a1, 10)


def _exact_map(scenario: Scenario) -> Tuple[float, str]:
    geom = scenario.aperture
    widths, offsets = _map_grid(geom.a1)
    worst = 0.0
    for W in widths:
        for r0 in offsets:
            exact = annular_transmittance_exact(r0, W, geom)
            worst = max(worst, abs(exact - _annulus_quadrature(r0, W, geom.a1, geom.a2)))
    return worst, "Marcum-Q map against radial quadrature, 20 x 10 grid"


def _approx_map(scenario: Scenario) -> Tuple[float, str]:
    geom = scenario.aperture
    worst = 0.0
    for W in (geom.a2, 0.5 * (geom.a1 + geom.a2), geom.a1, 2.0 * geom.a1):
        if W <= 0:
            continue
        offsets = np.linspace(0.0, 3.0 * W, 200)
        diff = np.asarray(annular_transmittance_approx(offsets, W, geom)) - np.asarray(
            annular_transmittance_exact(offsets, W, geom)
        )
        worst = max(worst, float(np.max(np.abs(diff))))
    return worst, "Weibull approximation against the exact map, W in {a2, (a1+a2)/2, a1, 2a1}, r0 up to 3W"


def _effective_spot_degeneracy(scenario: Scenario) -> Tuple[float, str]:
    a = scenario.aperture.a1
    worst = 0.0
    for W in (0.2 * a, a, 3.0 * a):
        chi = np.linspace(0.0, math.pi, 13)
        worst = max(worst, float(np.max(np.abs(np.asarray(effective_spot(chi, a, W, W)) / W - 1.0))))
    return worst, "W_eff(chi; W, W) / W - 1"


def _eta0_degeneracy(scenario: Scenario) -> Tuple[float, str]:
    a = scenario.aperture.a1
    W = np.linspace(0.2 * a, 3.0 * a, 15)
    closed = -np.expm1(-2.0 * a * a / (W * W))
    return float(np.max(np.abs(np.asarray(elliptic_max_transmittance(a, W, W)) - closed))), (
        "centred elliptic transmittance for equal semi-axes"
    )


def _vacuum_optics(scenario: Scenario) -> Tuple[float, str]:
    params = scenario.channel.model_copy(update={"Cn2": 0.0})
    w_v = params.vacuum_spot
    worst = 0.0
    peak = 2.0 / (math.pi * w_v * w_v)
    for rho in np.linspace(0.0, 2.0 * w_v, 9):
        closed = peak * math.exp(-2.0 * rho * rho / (w_v * w_v))
        worst = max(worst, abs(gamma2_radial(rho, params).value - closed) / peak)
    for a in scenario.aperture.radii:
        if a > 0:
            worst = max(worst, abs(disk_mean_transmittance(a, params).value - vacuum_disk_transmittance(a, params)))
    return worst, "vacuum mean intensity and disk transmittance against Gaussian optics"


DEFAULT_CHECKS: Dict[str, Tuple[float, CheckFn]] = {
    "rytov_table": (0.01, _rytov_table),
    "marcum_identity": (1e-10, _marcum_identity),
    "marcum_quadrature": (1e-10, _marcum_quadrature),
    "lambert_roundtrip": (1e-10, _lambert_roundtrip),
    "bessel_series": (1e-12, _bessel_reference),
    "aperture_exact_map": (1e-8, _exact_map),
    "aperture_approx_map": (0.03, _approx_map),
    "effective_spot_degeneracy": (1e-10, _effective_spot_degeneracy),
    "elliptic_eta0_degeneracy": (1e-10, _eta0_degeneracy),
    "vacuum_optics": (1e-6, _vacuum_optics),
}


def load_tolerances(path: Path | str) -> Dict[str, float]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read tolerance file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError("tolerance file must map check names to numbers")
    unknown = sorted(set(data) - set(DEFAULT_CHECKS))
    if unknown:
        raise ScenarioError(f"unknown checks in tolerance file: {unknown}")
    try:
        return {name: float(value) for name, value in data.items()}
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"tolerances must be numbers: {exc}") from exc


@dataclass
class ValidationReport:
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "failed": [check.name for check in self.checks if not check.passed],
            "checks": [asdict(check) for check in self.checks],
        }


def run_validation(
    scenario: Optional[Scenario],
    *,
    tolerances: Optional[Dict[str, float]] = None,
    schema_error: Optional[str] = None,
) -> ValidationReport:
    """Run every oracle check; a scenario that failed validation is reported as a failed check.

    Without a usable scenario the checks fall back to the default scenario.
    """

    overrides = tolerances or {}
    results = [
        CheckResult(
            name="scenario_schema",
            passed=schema_error is None,
            error=None,
            tolerance=0.0,
            detail=schema_error or "scenario satisfies all field invariants",
        )
    ]
    target = scenario or Scenario()

    for name, (default_tol, check) in DEFAULT_CHECKS.items():
        tolerance = overrides.get(name, default_tol)
        try:
            error, detail = check(target)
            passed = bool(error <= tolerance)
        except Exception as exc:  # noqa: BLE001 - a crashing oracle is a failed check
            error, detail, passed = None, f"check raised {type(exc).__name__}: {exc}", False
        results.append(CheckResult(name, passed, error, tolerance, detail))
        log.info("validation.check", name=name, passed=passed, error=error, tolerance=tolerance)

    report = ValidationReport(results)
    log.info("validation.completed", passed=report.passed, failed=report.to_dict()["failed"])
    return report


__all__ = [
    "CheckResult",
    "DEFAULT_CHECKS",
    "RYTOV_REFERENCE",
    "ValidationReport",
    "load_tolerances",
    "run_validation",
]
