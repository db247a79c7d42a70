"""First-principles channel statistics for the Kolmogorov-Obukhov spectrum.

Mean intensity and intensity correlations come from the phase approximation of
the Huygens-Kirchhoff method. The mean intensity is radially symmetric and is
reduced to one-dimensional Hankel-type integrals. Intensity correlations are
integrated by randomised QMC over the fused aperture and source coordinates,
using the vacuum (Cn2 = 0) integrand as a control variate.

Notation: ``kappa = k / L`` and ``W_v = W0 / Omega`` is the vacuum spot radius.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy import special

from fadechan.domain_types import ApertureGeometry, ChannelParams, SamplingPlan
from fadechan.errors import DomainError, ModelDiagnosticError, ScenarioError
from fadechan.numerics import (
    QuadResult,
    RngStream,
    adaptive_quad_1d,
    gauss_weighted_qmc,
    structure_integral_batch,
)

log = structlog.get_logger(__name__)

# Radial cutoff of the source aperture integrals in units of W0; exp(-81/2) beyond.
_SOURCE_CUTOFF = 9.0
# Cap on the Gamma4 log-integrand; larger values are counted as clipped.
_EXPONENT_CLIP = 60.0
GAMMA4_RELATIVE_ERROR_LIMIT = 0.05

_MOMENT_STREAM = 1
_APERTURE_STREAM = 2
_GAMMA2_STREAM = 3
_GAMMA4_STREAM = 4


def turbulence_regime(rytov2: float) -> str:
    """Classify turbulence strength from the Rytov variance."""

    if rytov2 < 1.0:
        return "weak"
    if rytov2 < 2.0:
        return "moderate"
    return "strong"


def vacuum_spot_radius(params: ChannelParams) -> float:
    return params.vacuum_spot


def _structure_scale(params: ChannelParams) -> float:
    return 2.0 * params.Cn2 * params.k**2 * params.L


def _kappa(params: ChannelParams) -> float:
    return params.k / params.L


# -- phase structure function --------------------------------------------------


def phase_structure(r: Sequence[float], r_prime: Sequence[float], params: ChannelParams) -> float:
    """Phase structure function ``2 Cn2 k^2 L int_0^1 |r xi + r' (1 - xi)|^(5/3) d xi``.

    The integral is split where the segment passes closest to the origin and each
    piece is integrated adaptively to 1e-10.
    """

    r_arr = np.asarray(r, dtype=float)
    rp_arr = np.asarray(r_prime, dtype=float)
    if r_arr.shape != (2,) or rp_arr.shape != (2,):
        raise DomainError("phase_structure takes two 2-vectors")
    if not (np.all(np.isfinite(r_arr)) and np.all(np.isfinite(rp_arr))):
        raise DomainError("phase_structure arguments must be finite")

    scale = _structure_scale(params)
    if scale == 0.0:
        return 0.0

    diff = r_arr - rp_arr
    diff2 = float(diff @ diff)
    split = min(max(-float(rp_arr @ diff) / diff2, 0.0), 1.0) if diff2 > 0 else 0.0

    def integrand(xi: float) -> float:
        point = r_arr * xi + rp_arr * (1.0 - xi)
        return float(np.hypot(point[0], point[1])) ** (5.0 / 3.0)

    total = 0.0
    for lo, hi in ((0.0, split), (split, 1.0)):
        if hi > lo:
            total += adaptive_quad_1d(integrand, lo, hi, tol=1e-10).value
    return scale * total


def phase_structure_batch(r: np.ndarray, r_prime: np.ndarray, params: ChannelParams) -> np.ndarray:
    """Vectorised phase structure function over ``(..., 2)`` arrays."""

    scale = _structure_scale(params)
    shape = np.broadcast_shapes(np.shape(r), np.shape(r_prime))[:-1]
    if scale == 0.0:
        return np.zeros(shape)
    return scale * structure_integral_batch(r, r_prime)


def _origin_structure(r_prime: np.ndarray, scale: float) -> np.ndarray:
    # Closed form of the structure function with a vanishing first argument.
    norm2 = np.einsum("...i,...i->...", r_prime, r_prime)
    return 0.375 * scale * np.power(norm2, 5.0 / 6.0)


def _gamma4_exponent(
    d: np.ndarray, p1: np.ndarray, p2: np.ndarray, p3: np.ndarray, scale: float
) -> Tuple[np.ndarray, int]:
    """Log of the turbulent factor of the Gamma4 integrand, clipped from above."""

    d = np.broadcast_to(d, p1.shape)
    exponent = 0.5 * scale * (
        structure_integral_batch(d, p1 - p2)
        + structure_integral_batch(d, p1 + p2)
        - structure_integral_batch(d, p1 - p3)
        - structure_integral_batch(d, p1 + p3)
    )
    exponent -= 0.5 * (_origin_structure(p2 - p3, scale) + _origin_structure(p2 + p3, scale))
    clipped = int(np.count_nonzero(exponent > _EXPONENT_CLIP))
    return np.minimum(exponent, _EXPONENT_CLIP), clipped


def _gamma4_prefactor(params: ChannelParams) -> float:
    kappa = _kappa(params)
    return kappa**4 / (4.0 * math.pi**5 * params.W0**2)


# -- pointwise correlation functions -------------------------------------------


def _stream(rng: Optional[RngStream], stream_id: int) -> RngStream:
    return rng if rng is not None else RngStream(0, stream_id)


def gamma2(
    r: Sequence[float],
    params: ChannelParams,
    *,
    n_samples: Optional[int] = None,
    rng: Optional[RngStream] = None,
) -> QuadResult:
    """Mean intensity at receiver point ``r`` by 2-D QMC over the source plane."""

    from fadechan.config import get_settings

    r_vec = np.asarray(r, dtype=float)
    kappa = _kappa(params)
    scale = _structure_scale(params)

    def integrand(points: np.ndarray) -> np.ndarray:
        phase = np.exp(-1j * kappa * (points @ r_vec))
        return phase * np.exp(-0.5 * _origin_structure(points, scale))

    result = gauss_weighted_qmc(
        2,
        [params.W0, params.W0],
        integrand,
        n_samples or get_settings().qmc_points_low,
        _stream(rng, _GAMMA2_STREAM),
    )
    prefactor = kappa**2 / (4.0 * math.pi**2)
    value = complex(result.value) * prefactor
    error = float(result.error_estimate) * prefactor
    if abs(value.imag) > 3.0 * error:
        log.warning("turbulence.gamma2_imaginary_residual", imag=value.imag, error=error)
    return QuadResult(value=value.real, error_estimate=error, evaluations=result.evaluations)


def gamma4(
    r1: Sequence[float],
    r2: Sequence[float],
    params: ChannelParams,
    *,
    n_samples: Optional[int] = None,
    rng: Optional[RngStream] = None,
) -> QuadResult:
    """Intensity correlation between receiver points ``r1`` and ``r2`` by 6-D QMC."""

    from fadechan.config import get_settings

    r1_vec = np.asarray(r1, dtype=float)
    r2_vec = np.asarray(r2, dtype=float)
    diff = r1_vec - r2_vec
    total = r1_vec + r2_vec
    kappa = _kappa(params)
    scale = _structure_scale(params)
    clipped = [0]

    def integrand(points: np.ndarray) -> np.ndarray:
        p1, p2, p3 = points[:, 0:2], points[:, 2:4], points[:, 4:6]
        phase = np.exp(-1j * kappa * (p2 @ diff + p3 @ total))
        if scale == 0.0:
            return phase
        exponent, n_clipped = _gamma4_exponent(diff, p1, p2, p3, scale)
        clipped[0] += n_clipped
        return phase * np.exp(exponent)

    width = params.W0 / math.sqrt(2.0)
    result = gauss_weighted_qmc(
        6,
        [width] * 6,
        integrand,
        n_samples or get_settings().qmc_points_high,
        _stream(rng, _GAMMA4_STREAM),
    )
    prefactor = _gamma4_prefactor(params)
    value = complex(result.value).real * prefactor
    error = float(result.error_estimate) * prefactor
    if value != 0.0 and error / abs(value) > GAMMA4_RELATIVE_ERROR_LIMIT:
        log.warning("turbulence.gamma4_low_accuracy", value=value, error=error)
    if clipped[0]:
        log.warning("turbulence.gamma4_exponent_clipped", count=clipped[0])
    return QuadResult(value=value, error_estimate=error, evaluations=result.evaluations)


# -- radial reductions of the mean intensity ------------------------------------


def _source_profile(params: ChannelParams):
    # Source-plane weight times the mean turbulent factor, radial in |r'|.
    inv_width = 1.0 / (2.0 * params.W0**2)
    turbulent = 0.375 * params.Cn2 * params.k**2 * params.L

    def profile(s):
        return np.exp(-inv_width * s * s - turbulent * np.power(s, 5.0 / 3.0))

    return profile


def gamma2_radial(rho: float, params: ChannelParams, *, budget: Optional[int] = None) -> QuadResult:
    """Mean intensity at radius ``rho``: ``(kappa^2 / 2 pi) int s G(s) J0(kappa rho s) ds``."""

    if rho < 0 or not math.isfinite(rho):
        raise DomainError("rho must be finite and non-negative")
    kappa = _kappa(params)
    profile = _source_profile(params)

    result = adaptive_quad_1d(
        lambda s: s * profile(s) * special.j0(kappa * rho * s),
        0.0,
        _SOURCE_CUTOFF * params.W0,
        tol=1e-12,
        budget=budget,
    )
    factor = kappa**2 / (2.0 * math.pi)
    return QuadResult(result.value * factor, result.error_estimate * factor, result.evaluations)


def disk_mean_transmittance(a: float, params: ChannelParams, *, budget: Optional[int] = None) -> QuadResult:
    """Mean transmittance of a centred disk: ``kappa a int G(s) J1(kappa a s) ds``."""

    if a <= 0:
        return QuadResult(0.0, 0.0, 1)
    kappa = _kappa(params)
    profile = _source_profile(params)

    result = adaptive_quad_1d(
        lambda s: profile(s) * special.j1(kappa * a * s),
        0.0,
        _SOURCE_CUTOFF * params.W0,
        tol=1e-12,
        budget=budget,
    )
    factor = kappa * a
    return QuadResult(result.value * factor, result.error_estimate * factor, result.evaluations)


def vacuum_disk_transmittance(a: float, params: ChannelParams) -> float:
    w_v = params.vacuum_spot
    return -math.expm1(-2.0 * a * a / (w_v * w_v))


def _windowed_second_moment(
    params: ChannelParams, window: float, budget: Optional[int]
) -> Tuple[float, float, int]:
    """Per-axis variance of the mean intensity under the Gaussian window.

    Returns the tapered variance, its error estimate and the evaluation count.
    """

    kappa = _kappa(params)
    profile = _source_profile(params)
    beta2 = (kappa * window) ** 2
    upper = min(_SOURCE_CUTOFF * params.W0, 12.0 / (kappa * window))

    mass = adaptive_quad_1d(
        lambda s: s * profile(s) * np.exp(-0.5 * beta2 * s * s), 0.0, upper, tol=1e-12, budget=budget
    )
    spread = adaptive_quad_1d(
        lambda s: s * profile(s) * np.exp(-0.5 * beta2 * s * s) * (1.0 - 0.5 * beta2 * s * s),
        0.0,
        upper,
        tol=1e-12,
        budget=budget,
    )
    m0 = beta2 * mass.value
    m2 = beta2 * window**2 * spread.value
    variance = m2 / m0
    error = variance * (mass.error_estimate / abs(mass.value) + spread.error_estimate / abs(spread.value))
    return variance, error, mass.evaluations + spread.evaluations


def _detaper(tapered: float, window: float) -> Optional[float]:
    # Gaussian profile of variance v under the window has variance 1/(1/v + 1/R^2).
    gap = 1.0 / tapered - 1.0 / window**2 if tapered > 0 else -1.0
    return 1.0 / gap if gap > 0 else None


# -- fused Gamma4 passes -------------------------------------------------------


@dataclass(frozen=True)
class _PassResult:
    values: np.ndarray
    errors: np.ndarray
    evaluations: int
    clipped: int


def _moment_pass(
    params: ChannelParams, window: float, n_samples: int, rng: RngStream, replicates: int
) -> _PassResult:
    """Windowed Gamma4 moments with polynomial weights (8-D QMC).

    Coordinates: separation ``d = r1 - r2`` and the three source points. The
    centre ``c = (r1 + r2) / 2`` is Gaussian under the window and enters through
    ``exp(-2 i kappa c . r3')``; it is integrated in closed form, which turns the
    polynomial weights into moments of a complex-shifted Gaussian.

    Returned columns: 1, x1 x2, x1^2, x1^2 x2^2, x1^2 y2^2 (all windowed).
    """

    kappa = _kappa(params)
    scale = _structure_scale(params)
    sigma2 = 0.5 * window**2
    source_width = params.W0 / math.sqrt(2.0)
    shifted_width = 1.0 / math.sqrt(2.0 * (1.0 / params.W0**2 + (kappa * window) ** 2))
    clipped = [0]

    def integrand(points: np.ndarray) -> np.ndarray:
        d = points[:, 0:2]
        p1, p2, p3 = points[:, 2:4], points[:, 4:6], points[:, 6:8]
        exponent, n_clipped = _gamma4_exponent(d, p1, p2, p3, scale)
        clipped[0] += n_clipped
        base = np.exp(-1j * kappa * np.einsum("ij,ij->i", d, p2)) * np.expm1(exponent)

        m1 = -1j * kappa * window**2 * p3
        m2 = sigma2 + m1 * m1
        m4 = 3.0 * sigma2**2 + 6.0 * sigma2 * m1 * m1 + m1**4
        d2 = d * d

        pair = m2 - 0.25 * d2
        first_sq = m2 + m1 * d + 0.25 * d2
        second_sq = m2 - m1 * d + 0.25 * d2
        quartic = m4 - 0.5 * m2 * d2 + d2 * d2 / 16.0
        cross = 0.5 * (first_sq[:, 0] * second_sq[:, 1] + first_sq[:, 1] * second_sq[:, 0])

        weights = np.column_stack(
            [
                np.ones(len(points)),
                pair.mean(axis=1),
                first_sq.mean(axis=1),
                quartic.mean(axis=1),
                cross,
            ]
        )
        return base[:, None] * weights

    scales = [math.sqrt(2.0) * window] * 2 + [source_width] * 4 + [shifted_width] * 2
    result = gauss_weighted_qmc(8, scales, integrand, n_samples, rng, replicates=replicates)
    prefactor = _gamma4_prefactor(params) * math.pi * window**2
    return _PassResult(
        values=np.real(np.asarray(result.value)) * prefactor,
        errors=np.asarray(result.error_estimate) * prefactor,
        evaluations=result.evaluations,
        clipped=clipped[0],
    )


def _aperture_pass(
    params: ChannelParams, geom: ApertureGeometry, n_samples: int, rng: RngStream, replicates: int
) -> _PassResult:
    """Turbulent part of the disk correlations (10-D QMC).

    Both receiver points are uniform on the outer disk; the inner disk enters
    through indicators. Returned columns: <eta1 eta1>, <eta1 eta2>, <eta2 eta2>.
    """

    kappa = _kappa(params)
    scale = _structure_scale(params)
    a1, a2 = geom.a1, geom.a2
    clipped = [0]

    def _disk(u_radius: np.ndarray, u_angle: np.ndarray) -> np.ndarray:
        radius = a1 * np.sqrt(u_radius)
        angle = 2.0 * math.pi * u_angle
        return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])

    def integrand(points: np.ndarray) -> np.ndarray:
        r1 = _disk(points[:, 0], points[:, 1])
        r2 = _disk(points[:, 2], points[:, 3])
        p1, p2, p3 = points[:, 4:6], points[:, 6:8], points[:, 8:10]
        d = r1 - r2
        phase = np.exp(
            -1j * kappa * (np.einsum("ij,ij->i", d, p2) + np.einsum("ij,ij->i", r1 + r2, p3))
        )
        exponent, n_clipped = _gamma4_exponent(d, p1, p2, p3, scale)
        clipped[0] += n_clipped
        base = phase * np.expm1(exponent)

        inner1 = (np.einsum("ij,ij->i", r1, r1) <= a2 * a2).astype(float)
        inner2 = (np.einsum("ij,ij->i", r2, r2) <= a2 * a2).astype(float)
        weights = np.column_stack([np.ones(len(points)), 0.5 * (inner1 + inner2), inner1 * inner2])
        return base[:, None] * weights

    width = params.W0 / math.sqrt(2.0)
    result = gauss_weighted_qmc(
        10, [width] * 6, integrand, n_samples, rng, uniform_dims=4, replicates=replicates
    )
    prefactor = _gamma4_prefactor(params) * (math.pi * a1 * a1) ** 2
    return _PassResult(
        values=np.real(np.asarray(result.value)) * prefactor,
        errors=np.asarray(result.error_estimate) * prefactor,
        evaluations=result.evaluations,
        clipped=clipped[0],
    )


# -- statistics ----------------------------------------------------------------


@dataclass
class FieldStatistics:
    """First-principles statistics of the transmitted beam at the receiver.

    Index 0 refers to the outer disk (radius a1) and index 1 to the inner disk
    (radius a2). ``errors`` mirrors the numeric fields with integration error
    estimates; ``flags`` lists non-fatal diagnostics.
    """

    mean_eta: Tuple[float, float]
    eta_corr: List[List[float]]
    W_ST: float
    sigma_bw2: float
    centroid_mean: Tuple[float, float] = (0.0, 0.0)
    W2_corr: Optional[List[List[float]]] = None
    theta_mean: Optional[float] = None
    theta_cov: Optional[List[List[float]]] = None
    errors: Dict[str, Any] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    rytov2: Optional[float] = None
    regime: Optional[str] = None
    window_radius: Optional[float] = None
    evaluations: int = 0

    def __post_init__(self) -> None:
        self.mean_eta = tuple(float(v) for v in self.mean_eta)
        self.centroid_mean = tuple(float(v) for v in self.centroid_mean)
        corr = np.asarray(self.eta_corr, dtype=float)
        if corr.shape != (2, 2) or len(self.mean_eta) != 2:
            raise DomainError("mean_eta needs two entries and eta_corr a 2x2 matrix")
        if not np.allclose(corr, corr.T):
            raise DomainError("eta_corr must be symmetric")
        if self.W_ST <= 0 or self.sigma_bw2 < 0:
            raise DomainError("W_ST must be positive and sigma_bw2 non-negative")
        if not 0.0 <= self.mean_eta[1] <= self.mean_eta[0] <= 1.0:
            raise DomainError("mean transmittances must satisfy 0 <= <eta2> <= <eta1> <= 1")
        self.eta_corr = corr.tolist()

    @property
    def sigma_bw(self) -> float:
        return math.sqrt(self.sigma_bw2)

    @property
    def has_theta(self) -> bool:
        return self.theta_mean is not None and self.theta_cov is not None

    @property
    def annular_mean(self) -> float:
        return self.mean_eta[0] - self.mean_eta[1]

    @property
    def annular_second_moment(self) -> float:
        c = self.eta_corr
        return c[0][0] - 2.0 * c[0][1] + c[1][1]

    @property
    def annular_variance(self) -> float:
        return self.annular_second_moment - self.annular_mean**2

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["mean_eta"] = list(self.mean_eta)
        data["centroid_mean"] = list(self.centroid_mean)
        data["annular_mean"] = self.annular_mean
        data["annular_second_moment"] = self.annular_second_moment
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FieldStatistics":
        """Rebuild statistics from ``to_dict`` output, ignoring derived keys."""

        names = {f for f in cls.__dataclass_fields__}
        missing = {"mean_eta", "eta_corr", "W_ST", "sigma_bw2"} - set(data)
        if missing:
            raise ScenarioError(f"statistics file lacks {sorted(missing)}")
        try:
            return cls(**{k: v for k, v in data.items() if k in names})
        except (TypeError, DomainError) as exc:
            raise ScenarioError(f"invalid statistics: {exc}") from exc


def compute_field_statistics(
    params: ChannelParams, geom: ApertureGeometry, plan: SamplingPlan
) -> FieldStatistics:
    """Evaluate every first-principles statistic used by the channel models.

    Mean transmittances and the windowed beam width come from radial quadrature.
    Beam wandering and the W-correlations come from the 8-D moment pass; disk
    correlations from the 10-D aperture pass. Variances recovered after
    subtraction are clamped at zero and flagged.
    """

    plan = plan.resolved()
    flags: List[str] = []
    budget = plan.quad_budget
    rytov2 = params.rytov2
    w_v = params.vacuum_spot
    window = plan.moment_window * w_v * math.sqrt(1.0 + rytov2)
    W0 = params.W0

    log.info(
        "turbulence.statistics_started",
        L=params.L,
        rytov2=rytov2,
        window=window,
        points=plan.qmc_points_high,
        seed=plan.seed,
    )

    means = [disk_mean_transmittance(a, params, budget=budget) for a in geom.radii]
    mean_eta = (means[0].value, means[1].value)
    evaluations = sum(m.evaluations for m in means)

    tapered_var, tapered_var_err, n_eval = _windowed_second_moment(params, window, budget)
    evaluations += n_eval
    variance = _detaper(tapered_var, window)
    if variance is None:
        flags.append("moment_window_too_narrow")
        variance = tapered_var

    stream = RngStream(plan.seed)
    moments = _moment_pass(
        params, window, plan.qmc_points_high, stream.stream(_MOMENT_STREAM), plan.qmc_replicates
    )
    aperture = _aperture_pass(
        params, geom, plan.qmc_points_high, stream.stream(_APERTURE_STREAM), plan.qmc_replicates
    )
    evaluations += moments.evaluations + aperture.evaluations

    mass = 4.0 * window**2 / (w_v**2 + 4.0 * window**2)
    spread = 1.0 / (4.0 / w_v**2 + 1.0 / window**2)
    vacuum_moments = mass**2 * np.array([1.0, 0.0, spread, spread**2, spread**2])
    windowed = vacuum_moments + moments.values
    total = windowed[0]
    pair, first_sq, same, cross = windowed[1:] / total
    pair_err, first_sq_err, same_err, cross_err = moments.errors[1:] / total

    # Centroid covariance: eigen-decomposition in (x1 + x2, x1 - x2) undoes the window.
    upper = _detaper(first_sq + pair, window)
    lower = _detaper(first_sq - pair, window)
    if upper is None or lower is None:
        flags.append("moment_window_too_narrow")
        upper, lower = first_sq + pair, first_sq - pair
    sigma_bw2 = 0.5 * (upper - lower)
    sigma_bw2_err = pair_err * (upper / max(first_sq + pair, 1e-300)) ** 2
    if sigma_bw2 < 0.0:
        flags.append("sigma_bw2_clamped")
        log.warning("turbulence.variance_clamped", quantity="sigma_bw2", value=sigma_bw2)
        sigma_bw2 = 0.0

    spot_var = variance - sigma_bw2
    if spot_var <= 0.0:
        raise ModelDiagnosticError(
            "beam-wandering variance exceeds the mean intensity spread",
            diagnostics={"variance": variance, "sigma_bw2": sigma_bw2},
        )
    W_ST = 2.0 * math.sqrt(spot_var)
    W_ST_err = (tapered_var_err + sigma_bw2_err) / math.sqrt(spot_var)

    # W-correlations on windowed, normalised moments.
    tapered_w2 = 4.0 * (first_sq - pair)
    w_same = 8.0 * (-8.0 * pair**2 - pair * tapered_w2 + 3.0 * same - cross)
    w_cross = 8.0 * (-pair * tapered_w2 - same + 3.0 * cross)
    rel_same = w_same / tapered_w2**2 - 1.0
    rel_cross = w_cross / tapered_w2**2 - 1.0
    rel_err = 8.0 * (3.0 * same_err + cross_err + 2.0 * tapered_w2 * (pair_err + first_sq_err)) / tapered_w2**2

    if rel_same < 0.0:
        flags.append("theta_variance_clamped")
        log.warning("turbulence.variance_clamped", quantity="theta_variance", value=rel_same)
        rel_same = 0.0
    theta_var = math.log1p(rel_same)
    theta_covar = math.log1p(rel_cross) if rel_cross > -1.0 else -theta_var
    if abs(theta_covar) > theta_var:
        flags.append("theta_covariance_clamped")
        log.warning("turbulence.theta_covariance_clamped", value=theta_covar, bound=theta_var)
        theta_covar = math.copysign(theta_var, theta_covar)

    theta_mean = math.log(W_ST**2 / W0**2) - 0.5 * theta_var
    W2_corr = [
        [W_ST**4 * (1.0 + rel_same), W_ST**4 * (1.0 + rel_cross)],
        [W_ST**4 * (1.0 + rel_cross), W_ST**4 * (1.0 + rel_same)],
    ]

    vacuum_eta = [vacuum_disk_transmittance(a, params) if a > 0 else 0.0 for a in geom.radii]
    corr_values = aperture.values
    corr_errors = aperture.errors
    eta11 = vacuum_eta[0] ** 2 + corr_values[0]
    eta12 = vacuum_eta[0] * vacuum_eta[1] + corr_values[1] if geom.a2 > 0 else 0.0
    eta22 = vacuum_eta[1] ** 2 + corr_values[2] if geom.a2 > 0 else 0.0
    eta_corr = [[eta11, eta12], [eta12, eta22]]
    eta_corr_err = [[corr_errors[0], corr_errors[1]], [corr_errors[1], corr_errors[2]]]

    mean_err = (means[0].error_estimate, means[1].error_estimate)
    for n in range(2):
        for m in range(2):
            bound = min(mean_eta[n], mean_eta[m]) + 3.0 * (eta_corr_err[n][m] + mean_err[n] + mean_err[m])
            if eta_corr[n][m] > bound:
                raise ModelDiagnosticError(
                    f"<eta{n + 1} eta{m + 1}> = {eta_corr[n][m]:.6g} exceeds its bound {bound:.6g}",
                    diagnostics={"eta_corr": eta_corr, "mean_eta": list(mean_eta)},
                )
    eta_corr = np.clip(np.asarray(eta_corr), 0.0, None).tolist()

    if eta11 > 0 and corr_errors[0] / eta11 > GAMMA4_RELATIVE_ERROR_LIMIT:
        flags.append("gamma4_low_accuracy")
        log.warning("turbulence.gamma4_low_accuracy", relative_error=corr_errors[0] / eta11)
    clipped = moments.clipped + aperture.clipped
    if clipped:
        flags.append("gamma4_exponent_clipped")
        log.warning("turbulence.gamma4_exponent_clipped", count=clipped)

    stats = FieldStatistics(
        mean_eta=mean_eta,
        eta_corr=eta_corr,
        W_ST=W_ST,
        sigma_bw2=sigma_bw2,
        centroid_mean=(0.0, 0.0),
        W2_corr=W2_corr,
        theta_mean=theta_mean,
        theta_cov=[[theta_var, theta_covar], [theta_covar, theta_var]],
        errors={
            "mean_eta": list(mean_err),
            "eta_corr": eta_corr_err,
            "W_ST": W_ST_err,
            "sigma_bw2": sigma_bw2_err,
            "W2_corr": W_ST**4 * rel_err,
            "theta_cov": rel_err,
        },
        flags=flags,
        rytov2=rytov2,
        regime=turbulence_regime(rytov2),
        window_radius=window,
        evaluations=int(evaluations),
    )
    log.info(
        "turbulence.statistics_completed",
        W_ST=W_ST,
        sigma_bw2=sigma_bw2,
        mean_eta=list(mean_eta),
        theta_mean=theta_mean,
        flags=flags,
    )
    return stats


__all__ = [
    "FieldStatistics",
    "GAMMA4_RELATIVE_ERROR_LIMIT",
    "compute_field_statistics",
    "disk_mean_transmittance",
    "gamma2",
    "gamma2_radial",
    "gamma4",
    "phase_structure",
    "phase_structure_batch",
    "turbulence_regime",
    "vacuum_disk_transmittance",
    "vacuum_spot_radius",
]
