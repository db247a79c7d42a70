"""Transmittance maps of Gaussian beams through a circular or annular aperture.

Circular beams use either the exact Marcum-Q form or the Weibull-type
approximation. Elliptic beams use the effective-spot reduction onto the
circular approximation. All maps broadcast over array arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
import structlog
from numpy.typing import ArrayLike
from scipy import special

from fadechan.domain_types import ApertureGeometry
from fadechan.errors import DomainError
from fadechan.numerics import lambert_w0_exp, marcum_q

log = structlog.get_logger(__name__)

Number = Union[float, np.ndarray]

# Below this value of a^2 xi^2 the series limit of the Bessel ratios is used.
_SERIES_THRESHOLD = 1e-6
_QUARTER_PERIOD = 0.5 * math.pi


def _unwrap(arr: np.ndarray) -> Number:
    return float(arr) if np.ndim(arr) == 0 else arr


def clamp_unit(values: ArrayLike) -> Tuple[np.ndarray, int]:
    """Clip to [0, 1] and report how many entries needed it."""

    arr = np.asarray(values, dtype=float)
    outside = int(np.count_nonzero((arr < 0.0) | (arr > 1.0)))
    return np.clip(arr, 0.0, 1.0), outside


@dataclass(frozen=True)
class WeibullParams:
    """Maximal transmittance, scale and shape of the Weibull-type aperture factor.

    ``log_inverse_scale`` holds ``R^(-lambda)`` and stays finite when ``R``
    itself overflows for vanishing apertures.
    """

    eta0: Number
    scale: Number
    shape: Number
    log_inverse_scale: Number

    def factor(self, ratio: ArrayLike) -> Number:
        """Evaluate ``exp(-(ratio / R)^lambda)`` for ``ratio = r0 / a``."""

        ratio = np.asarray(ratio, dtype=float)
        return _unwrap(np.exp(-self.log_inverse_scale * np.power(ratio, self.shape)))


def _scaled_i0_minus_one(x: np.ndarray) -> np.ndarray:
    """``exp(-x) (I0(x) - 1)`` without cancellation at small ``x``."""

    small = x < 1.0
    q = np.where(small, 0.25 * x * x, 0.0)
    term = np.ones_like(q)
    series = np.zeros_like(q)
    for k in range(1, 13):
        term = term * q / (k * k)
        series = series + term
    return np.where(small, np.exp(-x) * series, special.i0e(x) - np.exp(-x))


def weibull_params(a: ArrayLike, xi: ArrayLike) -> WeibullParams:
    """Weibull parameters for aperture radius ``a`` and inverse width ``xi``.

    With ``x = a^2 xi^2`` the maximal transmittance is ``1 - exp(-x/2)``; the
    scale and shape follow from the exponentially scaled Bessel functions,
    ``exp(-x) I_k(x) = ik_e(x)``. The Bessel deficit ``1 - exp(-x) I0(x)`` and the
    log ratio are assembled from cancellation-free pieces. For ``x < 1e-6`` the
    series ``lambda = 2 + x^3/96`` and ``ln(R^-lambda) = x/2 - x^2/8 + x^3/96 + x^4/384``
    take over, giving the Gaussian small-aperture limit.
    """

    a_arr = np.asarray(a, dtype=float)
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(a_arr <= 0) or np.any(xi_arr <= 0) or not np.all(np.isfinite(a_arr * xi_arr)):
        raise DomainError("weibull_params needs finite a > 0 and xi > 0")

    x = np.asarray(a_arr * a_arr * xi_arr * xi_arr)
    eta0 = -np.expm1(-0.5 * x)

    small = x < _SERIES_THRESHOLD
    x_big = np.where(small, 1.0, x)
    excess = _scaled_i0_minus_one(x_big)
    deficit = -np.expm1(-x_big) - excess
    # 2 eta0 - deficit = (1 - exp(-x/2))^2 + exp(-x) (I0 - 1), both non-negative.
    surplus = np.expm1(-0.5 * x_big) ** 2 + excess
    log_big = np.log1p(surplus / deficit)
    shape_big = 2.0 * x_big * special.i1e(x_big) / deficit / log_big

    log_ratio = np.where(small, x / 2.0 - x**2 / 8.0 + x**3 / 96.0 + x**4 / 384.0, log_big)
    shape = np.where(small, 2.0 + x**3 / 96.0, shape_big)

    with np.errstate(divide="ignore", over="ignore"):
        scale = np.power(log_ratio, -1.0 / shape)

    return WeibullParams(
        eta0=_unwrap(eta0),
        scale=_unwrap(scale),
        shape=_unwrap(shape),
        log_inverse_scale=_unwrap(log_ratio),
    )


def _check_beam(r0: np.ndarray, W: np.ndarray) -> None:
    if np.any(W <= 0) or np.any(r0 < 0):
        raise DomainError("beam width must be positive and deflection non-negative")
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(r0))):
        raise DomainError("beam width and deflection must be finite")


def annular_transmittance_exact(r0: ArrayLike, W: ArrayLike, geom: ApertureGeometry) -> Number:
    """Exact transmittance of a circular Gaussian beam through the annulus.

    ``eta = Q(2 r0 / W, 2 a2 / W) - Q(2 r0 / W, 2 a1 / W)`` with the first-order
    Marcum Q-function.
    """

    r0_arr = np.asarray(r0, dtype=float)
    w_arr = np.asarray(W, dtype=float)
    _check_beam(r0_arr, w_arr)

    shift = 2.0 * r0_arr / w_arr
    eta = np.asarray(marcum_q(shift, 2.0 * geom.a2 / w_arr)) - np.asarray(
        marcum_q(shift, 2.0 * geom.a1 / w_arr)
    )
    clipped, _ = clamp_unit(eta)
    return _unwrap(clipped)


def circular_term(r0: ArrayLike, W: ArrayLike, a: float) -> Number:
    """Weibull approximation of the transmittance through a disk of radius ``a``."""

    if a <= 0:
        return _unwrap(np.zeros(np.broadcast(np.asarray(r0), np.asarray(W)).shape))
    params = weibull_params(a, 2.0 / np.asarray(W, dtype=float))
    return _unwrap(np.asarray(params.eta0) * np.asarray(params.factor(np.asarray(r0, dtype=float) / a)))


def annular_transmittance_approx(r0: ArrayLike, W: ArrayLike, geom: ApertureGeometry) -> Number:
    """Weibull-type approximation: outer disk term minus inner disk term, clipped to [0, 1]."""

    r0_arr = np.asarray(r0, dtype=float)
    w_arr = np.asarray(W, dtype=float)
    _check_beam(r0_arr, w_arr)

    eta = np.asarray(circular_term(r0_arr, w_arr, geom.a1)) - np.asarray(
        circular_term(r0_arr, w_arr, geom.a2)
    )
    clipped, _ = clamp_unit(eta)
    return _unwrap(clipped)


def effective_spot(chi: ArrayLike, a: float, W1: ArrayLike, W2: ArrayLike) -> Number:
    """Radius of the circular beam that best matches an elliptic beam on a disk of radius ``a``.

    ``W_eff = 2a / sqrt(W(e^y))`` with
    ``y = ln(4a^2 / (W1 W2)) + (a/W1)^2 (1 + 2 cos^2 chi) + (a/W2)^2 (1 + 2 sin^2 chi)``;
    the Lambert function is taken in log space so small semi-axes cannot overflow.
    """

    w1 = np.asarray(W1, dtype=float)
    w2 = np.asarray(W2, dtype=float)
    if a <= 0 or np.any(w1 <= 0) or np.any(w2 <= 0):
        raise DomainError("effective_spot needs a > 0 and positive semi-axes")

    cos2 = np.cos(np.asarray(chi, dtype=float)) ** 2
    sin2 = 1.0 - cos2
    a2 = a * a
    y = (
        np.log(4.0 * a2 / (w1 * w2))
        + a2 / (w1 * w1) * (1.0 + 2.0 * cos2)
        + a2 / (w2 * w2) * (1.0 + 2.0 * sin2)
    )
    return _unwrap(2.0 * a / np.sqrt(np.asarray(lambert_w0_exp(y))))


def elliptic_max_transmittance(a: float, W1: ArrayLike, W2: ArrayLike) -> Number:
    """Transmittance of a centred elliptic beam through a disk of radius ``a``."""

    w1 = np.asarray(W1, dtype=float)
    w2 = np.asarray(W2, dtype=float)
    if a <= 0:
        return _unwrap(np.zeros(np.broadcast(w1, w2).shape))
    if np.any(w1 <= 0) or np.any(w2 <= 0):
        raise DomainError("semi-axes must be positive")

    a2 = a * a
    inv1 = 1.0 / (w1 * w1)
    inv2 = 1.0 / (w2 * w2)
    x = a2 * np.abs(inv1 - inv2)
    y = a2 * (inv1 + inv2)
    centred = special.i0e(x) * np.exp(x - y)

    xi = np.abs(1.0 / w1 - 1.0 / w2)
    circular = np.abs(w1 - w2) <= 1e-12 * np.maximum(w1, w2)
    xi_safe = np.where(circular, 1.0, xi)
    params = weibull_params(a, xi_safe)
    ratio = (w1 + w2) / np.where(circular, 1.0, np.abs(w1 - w2))
    with np.errstate(over="ignore"):
        tail = np.exp(-np.asarray(params.log_inverse_scale) * np.power(ratio, params.shape))
    correction = np.where(circular, 0.0, 2.0 * np.asarray(params.eta0) * tail)

    eta0, _ = clamp_unit(1.0 - centred - correction)
    return _unwrap(eta0)


@dataclass(frozen=True)
class EllipticBeamState:
    """One realisation of an elliptic beam at the receiver.

    ``theta1``/``theta2`` are log-variables with ``W_i^2 = W0^2 exp(theta_i)``.
    """

    x0: float
    y0: float
    theta1: float
    theta2: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        values = (self.x0, self.y0, self.theta1, self.theta2, self.phi)
        if not all(math.isfinite(v) for v in values):
            raise DomainError("elliptic beam state must be finite")
        object.__setattr__(self, "phi", math.fmod(self.phi, _QUARTER_PERIOD) % _QUARTER_PERIOD)

    @property
    def r0(self) -> float:
        return math.hypot(self.x0, self.y0)

    @property
    def phi0(self) -> float:
        return math.atan2(self.y0, self.x0)

    @property
    def chi(self) -> float:
        return self.phi - self.phi0

    def semi_axes(self, W0: float) -> Tuple[float, float]:
        return W0 * math.exp(0.5 * self.theta1), W0 * math.exp(0.5 * self.theta2)

    def shape_matrix(self, W0: float) -> np.ndarray:
        """Spot-shape matrix with eigenvalues W1^2, W2^2 and the W1 axis at angle phi."""

        w1, w2 = self.semi_axes(W0)
        c, s = math.cos(self.phi), math.sin(self.phi)
        rotation = np.array([[c, -s], [s, c]])
        return rotation @ np.diag([w1 * w1, w2 * w2]) @ rotation.T


def elliptic_transmittance_batch(
    x0: ArrayLike,
    y0: ArrayLike,
    theta1: ArrayLike,
    theta2: ArrayLike,
    phi: ArrayLike,
    geom: ApertureGeometry,
    W0: float,
) -> Tuple[np.ndarray, int]:
    """Vectorised elliptic-beam transmittance; returns the values and the clamp count."""

    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    w1 = W0 * np.exp(0.5 * np.asarray(theta1, dtype=float))
    w2 = W0 * np.exp(0.5 * np.asarray(theta2, dtype=float))
    phi = np.mod(np.asarray(phi, dtype=float), _QUARTER_PERIOD)

    r0 = np.hypot(x0, y0)
    chi = phi - np.arctan2(y0, x0)

    eta = np.zeros(np.broadcast(r0, w1, w2, chi).shape)
    for sign, radius in ((1.0, geom.a1), (-1.0, geom.a2)):
        if radius <= 0:
            continue
        w_eff = np.asarray(effective_spot(chi, radius, w1, w2))
        params = weibull_params(radius, 2.0 / w_eff)
        exponent = np.asarray(params.log_inverse_scale) * np.power(r0 / radius, params.shape)
        eta = eta + sign * np.asarray(elliptic_max_transmittance(radius, w1, w2)) * np.exp(-exponent)

    return clamp_unit(eta)


def elliptic_transmittance(state: EllipticBeamState, geom: ApertureGeometry, W0: float) -> float:
    """Transmittance of one elliptic beam realisation through the annulus."""

    if W0 <= 0:
        raise DomainError("W0 must be positive")
    eta, _ = elliptic_transmittance_batch(
        state.x0, state.y0, state.theta1, state.theta2, state.phi, geom, W0
    )
    return float(eta)


def rayleigh_density(r0: ArrayLike, sigma: float) -> Number:
    """Density of the deflection radius for an isotropic 2-D Gaussian centroid."""

    if sigma <= 0:
        raise DomainError("sigma must be positive")
    r = np.asarray(r0, dtype=float)
    density = np.where(r >= 0, r / sigma**2 * np.exp(-0.5 * (r / sigma) ** 2), 0.0)
    return _unwrap(density)


def rice_density(r0: ArrayLike, nu: float, sigma: float) -> Number:
    """Deflection-radius density for a centroid offset by ``nu`` with per-axis spread ``sigma``."""

    if sigma <= 0 or nu < 0:
        raise DomainError("rice_density needs sigma > 0 and nu >= 0")
    r = np.asarray(r0, dtype=float)
    s2 = sigma * sigma
    density = r / s2 * np.exp(-0.5 * (r - nu) ** 2 / s2) * special.i0e(r * nu / s2)
    return _unwrap(np.where(r >= 0, density, 0.0))


__all__ = [
    "EllipticBeamState",
    "WeibullParams",
    "annular_transmittance_approx",
    "annular_transmittance_exact",
    "circular_term",
    "clamp_unit",
    "effective_spot",
    "elliptic_max_transmittance",
    "elliptic_transmittance",
    "elliptic_transmittance_batch",
    "rayleigh_density",
    "rice_density",
    "weibull_params",
]
