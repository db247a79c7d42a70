"""Special functions, seeded sampling and integration rules used by the channel models.

Everything here is a thin, checked layer over numpy/scipy. Functions accept scalars
or arrays; scalar input gives a Python float back.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from numpy.typing import ArrayLike
from scipy import integrate, special
from scipy.stats import ncx2, qmc

from fadechan.config import get_settings
from fadechan.errors import DomainError, IntegrationBudgetError

log = structlog.get_logger(__name__)

Number = Union[float, np.ndarray]

_INV_E = math.exp(-1.0)
_LOG_SPACE_THRESHOLD = 500.0
_PSD_RELATIVE_TOLERANCE = 1e-12
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _finite_array(x: ArrayLike, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _unwrap(arr: np.ndarray) -> Number:
    return float(arr) if arr.ndim == 0 else arr


# -- special functions -------------------------------------------------------


def bessel_i0(x: ArrayLike) -> Number:
    """Modified Bessel function I0; overflow past |x| ~ 713 returns +inf with a warning."""

    arr = _finite_array(x)
    with np.errstate(over="ignore"):
        out = special.i0(arr)
    if np.any(np.isinf(out)):
        log.warning("numerics.bessel_overflow", order=0, max_abs_x=float(np.max(np.abs(arr))))
    return _unwrap(out)


def bessel_i1(x: ArrayLike) -> Number:
    """Modified Bessel function I1; overflow returns +/-inf with a warning."""

    arr = _finite_array(x)
    with np.errstate(over="ignore"):
        out = special.i1(arr)
    if np.any(np.isinf(out)):
        log.warning("numerics.bessel_overflow", order=1, max_abs_x=float(np.max(np.abs(arr))))
    return _unwrap(out)


def bessel_i0e(x: ArrayLike) -> Number:
    """Exponentially scaled I0: exp(-|x|) * I0(x)."""

    return _unwrap(special.i0e(_finite_array(x)))


def bessel_i1e(x: ArrayLike) -> Number:
    """Exponentially scaled I1: exp(-|x|) * I1(x)."""

    return _unwrap(special.i1e(_finite_array(x)))


def _lambert_initial_guess(x: np.ndarray) -> np.ndarray:
    # Branch-point series below -1/4, log1p in the middle, asymptotic log form above e.
    w = np.empty_like(x)

    near_branch = x < -0.25
    p = np.sqrt(np.maximum(2.0 * (math.e * x[near_branch] + 1.0), 0.0))
    w[near_branch] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3

    middle = (~near_branch) & (x <= math.e)
    w[middle] = np.log1p(x[middle])

    large = x > math.e
    l1 = np.log(x[large])
    l2 = np.log(l1)
    w[large] = l1 - l2 + l2 / l1
    return w


def lambert_w0(x: ArrayLike, *, max_iter: int = 50) -> Number:
    """Principal branch of the Lambert W function by Halley iteration.

    The starting point is the branch-point series ``-1 + p - p^2/3 + 11 p^3/72`` with
    ``p = sqrt(2 (e x + 1))`` for x < -1/4, ``log1p(x)`` up to x = e, and
    ``L1 - L2 + L2/L1`` (``L1 = ln x``, ``L2 = ln L1``) beyond.
    """

    arr = _finite_array(x)
    flat = np.atleast_1d(arr).astype(float).ravel()
    if np.any(flat < -_INV_E - 1e-15):
        raise DomainError(f"lambert_w0 is undefined below -1/e (got {float(flat.min())!r})")
    flat = np.maximum(flat, -_INV_E)

    w = _lambert_initial_guess(flat)
    branch_gap = 2.0 * (math.e * flat + 1.0)
    # The series is exact to rounding this close to the branch point; Halley stalls there.
    active = (flat != 0.0) & (branch_gap > 1e-8)
    w[flat == 0.0] = 0.0

    for _ in range(max_iter):
        if not np.any(active):
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - flat[active]
        wp1 = wa + 1.0
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w[active] = wa - step
        converged = np.abs(step) <= 1e-15 * (1.0 + np.abs(w[active]))
        idx = np.flatnonzero(active)
        active[idx[converged]] = False

    return _unwrap(w.reshape(arr.shape))


def lambert_w0_exp(y: ArrayLike, *, max_iter: int = 50) -> Number:
    """Return W(exp(y)) without forming exp(y) when it would overflow.

    Above the log-space threshold the equation ``w + ln w = y`` is solved by Newton
    iteration from ``y - ln y``.
    """

    arr = _finite_array(y, "y")
    flat = np.atleast_1d(arr).astype(float).ravel()
    out = np.empty_like(flat)

    small = flat <= _LOG_SPACE_THRESHOLD
    if np.any(small):
        out[small] = lambert_w0(np.exp(flat[small]))

    big = ~small
    if np.any(big):
        yb = flat[big]
        w = yb - np.log(yb)
        for _ in range(max_iter):
            step = (w + np.log(w) - yb) / (1.0 + 1.0 / w)
            w = w - step
            if np.all(np.abs(step) <= 1e-15 * w):
                break
        out[big] = w

    return _unwrap(out.reshape(arr.shape))


def marcum_q(a: ArrayLike, b: ArrayLike) -> Number:
    """First-order Marcum Q-function Q(a, b) for non-negative a, b.

    Q(a, b) is the tail of a Rice density with unit scale, which is the survival
    function of a non-central chi-square with two degrees of freedom evaluated at
    b^2 with non-centrality a^2. The a = 0 case is the closed form exp(-b^2 / 2).
    """

    a_arr = _finite_array(a, "a")
    b_arr = _finite_array(b, "b")
    if np.any(a_arr < 0) or np.any(b_arr < 0):
        raise DomainError("marcum_q requires a >= 0 and b >= 0")

    a_b, b_b = np.broadcast_arrays(a_arr, b_arr)
    out = np.exp(-0.5 * b_b * b_b)
    central = a_b > 0.0
    if np.any(central):
        out = np.array(out, dtype=float)
        out[central] = ncx2.sf(b_b[central] ** 2, 2.0, a_b[central] ** 2)
    out = np.clip(out, 0.0, 1.0)
    return _unwrap(np.asarray(out))


# -- quadrature ----------------------------------------------------------------


@dataclass(frozen=True)
class QuadResult:
    """Integral estimate with its error estimate and evaluation count."""

    value: Union[float, complex, np.ndarray]
    error_estimate: Union[float, np.ndarray]
    evaluations: int

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.error_estimate) < 0):
            raise DomainError("error_estimate must be non-negative")
        if self.evaluations < 1:
            raise DomainError("evaluations must be at least 1")


def adaptive_quad_1d(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-10,
    *,
    budget: Optional[int] = None,
) -> QuadResult:
    """Adaptive Gauss-Kronrod quadrature of ``f`` over [lo, hi].

    ``hi`` may be ``inf``; QUADPACK then maps the half line onto (0, 1] with
    ``x = lo + (1 - t) / t``. The evaluation budget is translated into a subinterval
    limit; running into it raises :class:`IntegrationBudgetError` carrying the best
    estimate.
    """

    if math.isnan(lo) or math.isnan(hi) or tol <= 0:
        raise DomainError("adaptive_quad_1d needs ordered limits and a positive tolerance")

    budget = budget or get_settings().quad_budget
    points_per_interval = 15 if math.isinf(hi) or math.isinf(lo) else 21
    limit = max(1, budget // points_per_interval)

    result = integrate.quad(f, lo, hi, epsabs=tol, epsrel=tol, limit=limit, full_output=1)
    value, abserr, info = result[0], result[1], result[2]
    evaluations = max(1, int(info.get("neval", 1)))

    if len(result) > 3:
        message = result[3]
        ier = int(info.get("ier", 0)) if isinstance(info, dict) and "ier" in info else None
        if evaluations >= budget or "maximum number of subdivisions" in str(message):
            raise IntegrationBudgetError(
                f"quadrature budget of {budget} evaluations exhausted",
                best_estimate=float(value),
                error_estimate=float(abserr),
                evaluations=evaluations,
            )
        log.debug("numerics.quad_warning", message=str(message).splitlines()[0], ier=ier)

    return QuadResult(value=float(value), error_estimate=float(abs(abserr)), evaluations=evaluations)


# -- random streams ------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream backed by a counter-based Philox generator.

    ``seed`` and ``stream_id`` form the 128-bit Philox key, so distinct streams are
    independent. ``block`` occupies the highest counter word and splits a stream
    into non-overlapping substreams (shards, replicates).
    """

    seed: int
    stream_id: int = 0
    block: int = field(default=0)

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id", "block"):
            value = getattr(self, name)
            if not 0 <= value < 2**64:
                raise DomainError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        key = self.seed | (self.stream_id << 64)
        counter = np.array([0, 0, 0, self.block], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def seed_sequence(self) -> np.random.SeedSequence:
        """Spawnable seed material for consumers that derive child generators."""

        return np.random.SeedSequence([self.seed, self.stream_id, self.block])

    def substream(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, index)

    def stream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id, 0)


RngLike = Union[RngStream, np.random.Generator]


def _as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


# -- quasi Monte Carlo ---------------------------------------------------------


def _sobol_points(dim: int, log2_points: int, stream: RngStream) -> np.ndarray:
    # Sobol spawns from its seed; Philox generators built from a raw key cannot spawn.
    engine = qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(stream.seed_sequence()))
    points = engine.random_base2(log2_points)
    eps = np.finfo(float).eps
    return np.clip(points, eps, 1.0 - eps)


def gauss_weighted_qmc(
    dim: int,
    weight_scales: Sequence[float],
    integrand: Callable[[np.ndarray], np.ndarray],
    n_samples: int,
    rng: RngStream,
    *,
    uniform_dims: int = 0,
    replicates: Optional[int] = None,
    workers: Optional[int] = None,
    chunk_size: int = 16_384,
) -> QuadResult:
    """Randomised QMC estimate of a Gaussian-weighted integral.

    Computes ``int prod_i exp(-x_i^2 / (2 s_i^2)) g(x) dx`` over the Gaussian axes,
    times the plain unit-cube integral over the first ``uniform_dims`` axes. The
    Gaussian factor is sampled exactly: scrambled Sobol points are pushed through
    the normal inverse CDF and scaled by ``weight_scales`` (standard deviations).
    ``integrand`` receives a ``(m, dim)`` batch, uniform coordinates first, and
    returns ``(m,)`` or ``(m, k)`` complex values.

    The point budget is split into independent scrambled replicates of ``2^p``
    points each; the error estimate is the standard error across replicates.
    Replicates are merged in index order, so the result depends only on the seed
    and the replicate plan.
    """

    if n_samples <= 0:
        raise DomainError("gauss_weighted_qmc needs at least one sample")
    scales = np.asarray(weight_scales, dtype=float)
    if scales.shape != (dim - uniform_dims,) or np.any(scales <= 0):
        raise DomainError("weight_scales must give one positive width per Gaussian axis")

    settings = get_settings()
    replicates = min(replicates or settings.qmc_replicates, n_samples)
    workers = workers or settings.worker_count
    log2_points = max(0, (n_samples // replicates).bit_length() - 1)
    normalisation = float(np.prod(np.sqrt(2.0 * np.pi) * scales))

    def _replicate(index: int) -> np.ndarray:
        points = _sobol_points(dim, log2_points, rng.substream(index))
        points[:, uniform_dims:] = special.ndtri(points[:, uniform_dims:]) * scales
        total = None
        for start in range(0, points.shape[0], chunk_size):
            values = np.asarray(integrand(points[start:start + chunk_size]), dtype=complex)
            partial = values.sum(axis=0)
            total = partial if total is None else total + partial
        return total / points.shape[0]

    if workers > 1 and replicates > 1:
        with ThreadPoolExecutor(max_workers=min(workers, replicates)) as pool:
            means = list(pool.map(_replicate, range(replicates)))
    else:
        means = [_replicate(index) for index in range(replicates)]

    stacked = np.stack(means) * normalisation
    value = stacked.mean(axis=0)
    if replicates > 1:
        spread = stacked.real.var(axis=0, ddof=1) + stacked.imag.var(axis=0, ddof=1)
        error = np.sqrt(spread / replicates)
    else:
        error = np.abs(value) * 0.0 + np.inf

    evaluations = replicates * (1 << log2_points)
    if np.ndim(value) == 0:
        return QuadResult(value=complex(value), error_estimate=float(error), evaluations=evaluations)
    return QuadResult(value=value, error_estimate=error, evaluations=evaluations)


# -- phase structure function kernel -------------------------------------------


def structure_integral_batch(r: np.ndarray, r_prime: np.ndarray) -> np.ndarray:
    """Vectorised ``int_0^1 |r xi + r' (1 - xi)|^(5/3) d xi`` for batches of 2-vectors.

    The segment is split where it passes closest to the origin; each piece gets a
    16-node Gauss-Legendre rule, which keeps the 5/3 cusp at a panel end.
    """

    r = np.asarray(r, dtype=float)
    r_prime = np.asarray(r_prime, dtype=float)
    diff = r - r_prime
    diff2 = np.einsum("...i,...i->...", diff, diff)
    base2 = np.einsum("...i,...i->...", r_prime, r_prime)
    cross = np.einsum("...i,...i->...", r_prime, diff)

    with np.errstate(divide="ignore", invalid="ignore"):
        split = np.where(diff2 > 0.0, -cross / diff2, 0.0)
    split = np.clip(split, 0.0, 1.0)

    def _panel(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        xi = mid[..., None] + half[..., None] * _GL_NODES
        norm2 = base2[..., None] + 2.0 * xi * cross[..., None] + xi * xi * diff2[..., None]
        values = np.power(np.maximum(norm2, 0.0), 5.0 / 6.0)
        return half * (values @ _GL_WEIGHTS)

    zeros = np.zeros_like(split)
    return _panel(zeros, split) + _panel(split, np.ones_like(split))


# -- samplers ------------------------------------------------------------------


def psd_factor(cov: ArrayLike) -> Tuple[np.ndarray, bool]:
    """Return a square-root factor of a covariance matrix and whether it was clamped.

    Negative eigenvalues above ``-1e-12 * trace`` are clamped to zero; anything
    more negative is rejected naming the eigenvalue.
    """

    matrix = _finite_array(cov, "cov")
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DomainError("covariance must be a square matrix")
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-14):
        raise DomainError("covariance must be symmetric")

    sym = 0.5 * (matrix + matrix.T)
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    threshold = _PSD_RELATIVE_TOLERANCE * max(float(np.trace(sym)), 0.0)
    worst = float(eigenvalues.min()) if eigenvalues.size else 0.0
    if worst < -threshold:
        raise DomainError(f"covariance is not positive semidefinite: eigenvalue {worst:.6g}")

    clamped = bool(np.any(eigenvalues < 0.0))
    eigenvalues = np.maximum(eigenvalues, 0.0)
    return eigenvectors * np.sqrt(eigenvalues), clamped


def sample_gaussian_vec(
    mean: ArrayLike, cov: ArrayLike, rng: RngLike, size: Optional[int] = None
) -> np.ndarray:
    """Draw from a multivariate normal; ``size=None`` gives a single vector."""

    mu = _finite_array(mean, "mean")
    factor, _ = psd_factor(cov)
    if factor.shape[0] != mu.shape[0]:
        raise DomainError("mean and covariance dimensions differ")
    generator = _as_generator(rng)
    count = 1 if size is None else size
    draws = mu + generator.standard_normal((count, mu.shape[0])) @ factor.T
    return draws[0] if size is None else draws


def sample_rice(nu: float, sigma: float, rng: RngLike, size: Optional[int] = None) -> Number:
    """Rice-distributed radii as ``|(nu + sigma z1, sigma z2)|`` from two normal draws."""

    if nu < 0 or sigma < 0 or not (math.isfinite(nu) and math.isfinite(sigma)):
        raise DomainError("sample_rice needs finite nu >= 0 and sigma >= 0")
    generator = _as_generator(rng)
    count = 1 if size is None else size
    z = generator.standard_normal((count, 2))
    radii = np.hypot(nu + sigma * z[:, 0], sigma * z[:, 1])
    return float(radii[0]) if size is None else radii


def sample_rayleigh(sigma: float, rng: RngLike, size: Optional[int] = None) -> Number:
    """Rayleigh radii; identical draw for draw to ``sample_rice(0, sigma, ...)``."""

    return sample_rice(0.0, sigma, rng, size)


def sample_wrapped_angle(
    mode: Literal["uniform", "wrapped_normal"],
    rng: RngLike,
    size: Optional[int] = None,
    *,
    mean: float = 0.0,
    std: Optional[float] = None,
) -> Number:
    """Orientation angles on the quarter period [0, pi/2)."""

    generator = _as_generator(rng)
    count = 1 if size is None else size
    period = 0.5 * np.pi
    if mode == "uniform":
        angles = generator.uniform(0.0, period, count)
    elif mode == "wrapped_normal":
        if std is None or std <= 0:
            raise DomainError("wrapped_normal angles need a positive std")
        angles = np.mod(mean + std * generator.standard_normal(count), period)
    else:
        raise DomainError(f"unknown angle mode {mode!r}")
    return float(angles[0]) if size is None else angles


__all__ = [
    "QuadResult",
    "RngStream",
    "adaptive_quad_1d",
    "bessel_i0",
    "bessel_i0e",
    "bessel_i1",
    "bessel_i1e",
    "gauss_weighted_qmc",
    "lambert_w0",
    "lambert_w0_exp",
    "marcum_q",
    "psd_factor",
    "sample_gaussian_vec",
    "sample_rayleigh",
    "sample_rice",
    "sample_wrapped_angle",
    "structure_integral_batch",
]
