import decimal
import math

import numpy as np
import pytest
from scipy import integrate, special

from fadechan.aperture import (
    EllipticBeamState,
    annular_transmittance_approx,
    annular_transmittance_exact,
    circular_term,
    clamp_unit,
    effective_spot,
    elliptic_max_transmittance,
    elliptic_transmittance,
    elliptic_transmittance_batch,
    rayleigh_density,
    rice_density,
    weibull_params,
)
from fadechan.domain_types import ApertureGeometry
from fadechan.errors import DomainError

GEOM = ApertureGeometry(a1=0.075, a2=0.023)


def _annulus_by_quadrature(r0, W, a1, a2):
    def integrand(rho):
        scaled = 4.0 * rho / (W * W)
        return scaled * math.exp(-2.0 * (rho - r0) ** 2 / (W * W)) * special.i0e(scaled * r0)

    value, _ = integrate.quad(integrand, a2, a1, epsabs=1e-13, epsrel=1e-12, limit=200)
    return value


def _centred_ellipse_by_quadrature(a, W1, W2):
    total = 1.0 / W1**2 + 1.0 / W2**2
    spread = abs(1.0 / W1**2 - 1.0 / W2**2)

    def integrand(rho):
        r2 = rho * rho
        return rho * math.exp(-r2 * (total - spread)) * special.i0e(r2 * spread)

    value, _ = integrate.quad(integrand, 0.0, a, epsabs=1e-13, epsrel=1e-12)
    return 4.0 / (W1 * W2) * value


def _weibull_reference(x):
    """Shape and log inverse scale at ``x = a^2 xi^2`` in 60-digit arithmetic."""

    with decimal.localcontext() as ctx:
        ctx.prec = 60
        x = decimal.Decimal(x)
        half = x / 2
        term = decimal.Decimal(1)
        i0 = i1 = decimal.Decimal(0)
        for k in range(120):
            if k:
                term = term * half * half / (k * k)
            i0 += term
            i1 += term * half / (k + 1)
        decay = (-x).exp()
        deficit = 1 - decay * i0
        eta0 = 1 - (-half).exp()
        log_ratio = (2 * eta0 / deficit).ln()
        shape = 2 * x * decay * i1 / deficit / log_ratio
        return float(shape), float(log_ratio)


def _elliptic_by_quadrature(state, W0, inner, outer):
    inverse = np.linalg.inv(state.shape_matrix(W0))
    w1, w2 = state.semi_axes(W0)
    peak = 2.0 / (math.pi * w1 * w2)

    def integrand(angle, rho):
        dx = rho * math.cos(angle) - state.x0
        dy = rho * math.sin(angle) - state.y0
        q = inverse[0, 0] * dx * dx + 2.0 * inverse[0, 1] * dx * dy + inverse[1, 1] * dy * dy
        return rho * peak * math.exp(-2.0 * q)

    value, _ = integrate.dblquad(integrand, inner, outer, 0.0, 2.0 * math.pi, epsabs=1e-10, epsrel=1e-8)
    return value


def test_clamp_unit_counts_outliers():
    clipped, count = clamp_unit([-0.1, 0.5, 1.2])
    np.testing.assert_array_equal(clipped, [0.0, 0.5, 1.0])
    assert count == 2


def test_weibull_small_argument_limit():
    params = weibull_params(1e-4, 1.0)
    assert params.shape == pytest.approx(2.0, abs=1e-6)
    assert params.eta0 == pytest.approx(0.5e-8, rel=1e-6)
    assert math.isfinite(params.log_inverse_scale)


@pytest.mark.parametrize("x", [1e-9, 5e-7, 0.999e-6, 1.001e-6, 3e-6, 1e-4, 1e-2, 0.5, 1.0, 3.0, 10.0])
def test_weibull_params_match_high_precision_reference(x):
    xi = math.sqrt(x)
    shape, log_ratio = _weibull_reference(xi * xi)
    params = weibull_params(1.0, xi)
    assert params.shape == pytest.approx(shape, rel=1e-11)
    assert params.log_inverse_scale == pytest.approx(log_ratio, rel=1e-11)


def test_weibull_shape_departs_from_two_at_third_order():
    x = 5e-4
    params = weibull_params(1.0, math.sqrt(x))
    assert params.shape - 2.0 == pytest.approx(x**3 / 96.0, rel=0.05)


def test_weibull_rejects_non_positive():
    with pytest.raises(DomainError):
        weibull_params(0.0, 1.0)
    with pytest.raises(DomainError):
        weibull_params(1.0, -1.0)


def test_exact_map_centred_closed_form():
    W = 0.05
    expected = math.exp(-2.0 * GEOM.a2**2 / W**2) - math.exp(-2.0 * GEOM.a1**2 / W**2)
    assert annular_transmittance_exact(0.0, W, GEOM) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("W", [0.02, 0.05, 0.1, 0.18])
@pytest.mark.parametrize("r0", [0.0, 0.03, 0.075, 0.14])
def test_exact_map_matches_radial_quadrature(W, r0):
    expected = _annulus_by_quadrature(r0, W, GEOM.a1, GEOM.a2)
    assert annular_transmittance_exact(r0, W, GEOM) == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize(
    ("W", "bound"),
    [
        (GEOM.a2, 0.029),
        (0.5 * (GEOM.a1 + GEOM.a2), 0.0085),
        (GEOM.a1, 0.0092),
        (2.0 * GEOM.a1, 0.0012),
    ],
)
def test_approx_map_close_to_exact(W, bound):
    r0 = np.linspace(0.0, 3.0 * W, 200)
    diff = annular_transmittance_approx(r0, W, GEOM) - annular_transmittance_exact(r0, W, GEOM)
    assert np.max(np.abs(diff)) <= bound


def test_approx_map_full_disk_worst_case():
    disk = ApertureGeometry(a1=0.075, a2=0.0)
    W = 0.25 * disk.a1
    r0 = np.linspace(0.0, 3.0 * W, 200)
    diff = annular_transmittance_approx(r0, W, disk) - annular_transmittance_exact(r0, W, disk)
    assert np.max(np.abs(diff)) <= 0.03


def test_approx_map_exact_at_centre():
    W = 0.04
    expected = math.exp(-2.0 * GEOM.a2**2 / W**2) - math.exp(-2.0 * GEOM.a1**2 / W**2)
    assert annular_transmittance_approx(0.0, W, GEOM) == pytest.approx(expected, abs=1e-12)


def test_full_disk_has_no_inner_term():
    disk = ApertureGeometry(a1=0.05, a2=0.0)
    assert circular_term(0.01, 0.03, 0.0) == 0.0
    assert annular_transmittance_approx(0.0, 0.03, disk) == pytest.approx(1.0 - math.exp(-2.0 * 0.05**2 / 0.03**2))


def test_transmittance_rejects_bad_beam():
    with pytest.raises(DomainError):
        annular_transmittance_exact(0.0, 0.0, GEOM)
    with pytest.raises(DomainError):
        annular_transmittance_approx(-0.1, 0.02, GEOM)


def test_effective_spot_circular_degeneracy():
    chi = np.linspace(0.0, math.pi, 9)
    for W in (0.01, 0.075, 0.3):
        np.testing.assert_allclose(effective_spot(chi, 0.075, W, W), W, rtol=1e-10)


def test_effective_spot_between_semi_axes():
    w_eff = effective_spot(0.3, 0.075, 0.02, 0.06)
    assert 0.02 < w_eff < 0.06


def test_effective_spot_tiny_axes_do_not_overflow():
    w_eff = effective_spot(0.0, 0.075, 1e-4, 2e-4)
    assert math.isfinite(w_eff)
    assert w_eff > 0


def test_elliptic_eta0_degeneracy():
    W = np.linspace(0.02, 0.2, 10)
    np.testing.assert_allclose(
        elliptic_max_transmittance(0.075, W, W), -np.expm1(-2.0 * 0.075**2 / W**2), atol=1e-10
    )


def test_elliptic_eta0_against_quadrature():
    a, W1, W2 = 0.075, 0.15, 0.075
    assert elliptic_max_transmittance(a, W1, W2) == pytest.approx(_centred_ellipse_by_quadrature(a, W1, W2), abs=0.02)


def test_elliptic_eta0_zero_radius():
    assert elliptic_max_transmittance(0.0, 0.02, 0.03) == 0.0


def test_beam_state_reduces_phi():
    state = EllipticBeamState(x0=0.01, y0=0.0, theta1=0.0, theta2=0.1, phi=0.5 * math.pi + 0.1)
    assert state.phi == pytest.approx(0.1)
    assert state.r0 == pytest.approx(0.01)
    assert state.phi0 == 0.0
    assert state.chi == pytest.approx(0.1)

    negative = EllipticBeamState(x0=0.0, y0=0.0, theta1=0.0, theta2=0.0, phi=-0.1)
    assert negative.phi == pytest.approx(0.5 * math.pi - 0.1)


def test_beam_state_geometry():
    state = EllipticBeamState(x0=0.0, y0=0.0, theta1=math.log(4.0), theta2=0.0, phi=0.0)
    w1, w2 = state.semi_axes(0.02)
    assert (w1, w2) == pytest.approx((0.04, 0.02))
    np.testing.assert_allclose(state.shape_matrix(0.02), np.diag([0.04**2, 0.02**2]), atol=1e-15)

    with pytest.raises(DomainError):
        EllipticBeamState(x0=float("nan"), y0=0.0, theta1=0.0, theta2=0.0)


def test_elliptic_collapses_to_circular_approximation():
    W0 = 0.02
    theta = 2.0 * math.log(0.04 / W0)
    x0 = np.array([0.0, 0.01, 0.03, 0.06])
    y0 = np.array([0.0, 0.02, -0.01, 0.05])
    eta, clamps = elliptic_transmittance_batch(x0, y0, theta, theta, 0.3, GEOM, W0)
    expected = annular_transmittance_approx(np.hypot(x0, y0), 0.04, GEOM)
    np.testing.assert_allclose(eta, expected, rtol=1e-9, atol=1e-12)
    assert clamps == 0


def test_elliptic_transmittance_single_state():
    state = EllipticBeamState(x0=0.02, y0=0.01, theta1=0.2, theta2=-0.1, phi=0.4)
    eta = elliptic_transmittance(state, GEOM, 0.02)
    batch, _ = elliptic_transmittance_batch(0.02, 0.01, 0.2, -0.1, 0.4, GEOM, 0.02)
    assert 0.0 <= eta <= 1.0
    assert eta == pytest.approx(float(batch))


@pytest.mark.parametrize("W2", [0.5 * GEOM.a1, 0.75 * GEOM.a1, GEOM.a1])
def test_centred_elliptic_beam_against_area_quadrature(W2):
    W0 = 0.02
    state = EllipticBeamState(x0=0.0, y0=0.0, theta1=2.0 * math.log(2.0 * W2 / W0), theta2=2.0 * math.log(W2 / W0))
    assert elliptic_max_transmittance(GEOM.a1, 2.0 * W2, W2) == pytest.approx(
        _elliptic_by_quadrature(state, W0, 0.0, GEOM.a1), abs=0.02
    )
    assert elliptic_transmittance(state, GEOM, W0) == pytest.approx(
        _elliptic_by_quadrature(state, W0, GEOM.a2, GEOM.a1), abs=0.03
    )


@pytest.mark.parametrize("seed", range(8))
def test_elliptic_transmittance_against_area_quadrature(seed):
    W0 = 0.02
    rng = np.random.default_rng(seed)
    w1, w2 = rng.uniform(0.5 * GEOM.a1, 2.0 * GEOM.a1, size=2)
    r0 = rng.uniform(0.0, 2.0 * GEOM.a1)
    direction = rng.uniform(0.0, 2.0 * math.pi)
    state = EllipticBeamState(
        x0=r0 * math.cos(direction),
        y0=r0 * math.sin(direction),
        theta1=2.0 * math.log(w1 / W0),
        theta2=2.0 * math.log(w2 / W0),
        phi=rng.uniform(0.0, 0.5 * math.pi),
    )
    expected = _elliptic_by_quadrature(state, W0, GEOM.a2, GEOM.a1)
    assert elliptic_transmittance(state, GEOM, W0) == pytest.approx(expected, abs=0.05)


def test_rayleigh_density_normalised():
    sigma = 0.01
    value, _ = integrate.quad(lambda r: rayleigh_density(r, sigma), 0.0, 20 * sigma)
    assert value == pytest.approx(1.0, abs=1e-10)
    assert rayleigh_density(-1.0, sigma) == 0.0


def test_rice_density_reduces_to_rayleigh_and_normalises():
    sigma = 0.01
    r = np.linspace(0.0, 0.05, 11)
    np.testing.assert_allclose(rice_density(r, 0.0, sigma), rayleigh_density(r, sigma), rtol=1e-12)
    value, _ = integrate.quad(lambda x: rice_density(x, 0.03, sigma), 0.0, 0.2, points=[0.03])
    assert value == pytest.approx(1.0, abs=1e-9)
