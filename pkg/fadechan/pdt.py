"""Probability distributions of transmittance for the annular receiver.

Three channel models share one sampling engine: beam wandering (fixed spot,
random centroid), elliptic beams (random centroid, semi-axes and orientation)
and the weak beam wandering approximation (centroid plus a truncated bivariate
log-normal for the two disk transmittances). Samples are drawn in shards with
one Philox substream per shard and merged in shard order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.stats import norm

from fadechan.aperture import annular_transmittance_approx, elliptic_transmittance_batch, weibull_params
from fadechan.config import get_settings
from fadechan.domain_types import ApertureGeometry, ChannelParams, CorrectionSettings, ModelTag
from fadechan.errors import DomainError, ModelDiagnosticError
from fadechan.numerics import (
    RngStream,
    adaptive_quad_1d,
    psd_factor,
    sample_gaussian_vec,
    sample_rice,
    sample_wrapped_angle,
)
from fadechan.turbulence import FieldStatistics

log = structlog.get_logger(__name__)

MIN_RECOMMENDED_SAMPLES = 1_000
MAX_REJECTION_RATE = 0.5
MIN_TRUNCATION_MASS = 0.95


def db_to_factor(loss_db: float) -> float:
    """Convert an attenuation in dB into a transmittance factor."""

    if loss_db < 0 or not math.isfinite(loss_db):
        raise DomainError("loss in dB must be finite and non-negative")
    return 10.0 ** (-loss_db / 10.0)


@dataclass
class TransmittanceDistribution:
    """Binned density of the transmittance with sample moments.

    ``density`` integrates to one over ``bin_edges``; the moments come from the
    raw samples, not from the histogram.
    """

    bin_edges: np.ndarray
    density: np.ndarray
    n_samples: int
    mean: float
    second_moment: float
    variance: float
    model_tag: ModelTag
    provenance: Dict[str, Any] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    @property
    def bin_widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.density * self.bin_widths))

    @property
    def standard_error(self) -> float:
        return math.sqrt(max(self.variance, 0.0) / self.n_samples)

    def mass_above(self, threshold: float) -> float:
        """Probability that the transmittance exceeds ``threshold``."""

        left, right = self.bin_edges[:-1], self.bin_edges[1:]
        covered = np.clip(right - np.maximum(left, threshold), 0.0, None)
        return float(np.sum(self.density * covered))

    def quantile(self, q: float) -> float:
        """Transmittance below which a fraction ``q`` of the mass lies."""

        if not 0.0 <= q <= 1.0:
            raise DomainError("quantile level must lie in [0, 1]")
        cumulative = np.concatenate([[0.0], np.cumsum(self.density * self.bin_widths)])
        cumulative /= cumulative[-1]
        index = int(np.searchsorted(cumulative, q, side="left"))
        if index == 0:
            return float(self.bin_edges[0])
        lo, hi = cumulative[index - 1], cumulative[index]
        fraction = 0.0 if hi == lo else (q - lo) / (hi - lo)
        return float(self.bin_edges[index - 1] + fraction * self.bin_widths[index - 1])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model_tag,
            "n_samples": self.n_samples,
            "bins": int(self.density.size),
            "mean": self.mean,
            "second_moment": self.second_moment,
            "variance": self.variance,
            "standard_error": self.standard_error,
            "provenance": dict(self.provenance),
            "diagnostics": dict(self.diagnostics),
            "flags": list(self.flags),
        }


# -- sampling engine -----------------------------------------------------------


@dataclass
class _ShardTally:
    counts: np.ndarray
    total: float
    total_sq: float
    n: int
    extras: Dict[str, float]


def _shard_sizes(n_samples: int, shard_size: int) -> List[int]:
    full, rest = divmod(n_samples, shard_size)
    return [shard_size] * full + ([rest] if rest else [])


def _sample_distribution(
    draw: Callable[[int, np.random.Generator], Tuple[np.ndarray, Dict[str, float]]],
    *,
    n_samples: int,
    bins: int,
    rng: RngStream,
    model_tag: ModelTag,
    shard_size: Optional[int] = None,
    workers: Optional[int] = None,
) -> TransmittanceDistribution:
    """Run ``draw`` over per-shard substreams and merge histograms in shard order."""

    if n_samples < 1 or bins < 1:
        raise DomainError("n_samples and bins must be positive")
    settings = get_settings()
    sizes = _shard_sizes(n_samples, shard_size or settings.shard_size)
    edges = np.linspace(0.0, 1.0, bins + 1)

    def run_shard(index: int) -> _ShardTally:
        eta, extras = draw(sizes[index], rng.substream(index).generator())
        counts, _ = np.histogram(eta, bins=edges)
        return _ShardTally(counts, float(eta.sum()), float(np.dot(eta, eta)), int(eta.size), extras)

    workers = workers or settings.worker_count
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(sizes))) as pool:
            tallies = list(pool.map(run_shard, range(len(sizes))))
    else:
        tallies = [run_shard(i) for i in range(len(sizes))]

    counts = np.zeros(bins, dtype=np.int64)
    total = total_sq = 0.0
    extras: Dict[str, float] = {}
    for tally in tallies:
        counts += tally.counts
        total += tally.total
        total_sq += tally.total_sq
        for key, value in tally.extras.items():
            extras[key] = extras.get(key, 0.0) + value

    n = int(counts.sum())
    mean = total / n
    second = total_sq / n
    density = counts / (n * np.diff(edges))
    flags: List[str] = []
    if n_samples < MIN_RECOMMENDED_SAMPLES:
        flags.append("few_samples")
        log.warning("pdt.few_samples", n_samples=n_samples, recommended=MIN_RECOMMENDED_SAMPLES)

    return TransmittanceDistribution(
        bin_edges=edges,
        density=density,
        n_samples=n,
        mean=mean,
        second_moment=second,
        variance=max(second - mean * mean, 0.0),
        model_tag=model_tag,
        provenance={"seed": rng.seed, "stream": rng.stream_id, "shards": len(sizes)},
        diagnostics=extras,
        flags=flags,
    )


def _with_provenance(dist: TransmittanceDistribution, provenance: Optional[Dict[str, Any]]) -> TransmittanceDistribution:
    if provenance:
        dist.provenance.update(provenance)
    return dist


# -- beam wandering ------------------------------------------------------------


def pdt_beam_wandering(
    W: float,
    sigma_bw: float,
    geom: ApertureGeometry,
    corrections: CorrectionSettings,
    n_samples: int,
    bins: int,
    rng: RngStream,
    *,
    shard_size: Optional[int] = None,
    provenance: Optional[Dict[str, Any]] = None,
) -> TransmittanceDistribution:
    """Fixed spot radius ``W`` with a Rice-distributed centroid deflection.

    The centroid is Gaussian around the aim point ``d0`` with per-axis spread
    ``Delta = tracking_ratio * sigma_bw``.
    """

    if W <= 0 or sigma_bw < 0:
        raise DomainError("W must be positive and sigma_bw non-negative")
    delta = corrections.tracked_sigma(sigma_bw)
    eta_det = corrections.eta_det

    def draw(size: int, gen: np.random.Generator):
        r0 = sample_rice(geom.d0, delta, gen, size)
        return np.asarray(annular_transmittance_approx(r0, W, geom)) * eta_det, {}

    dist = _sample_distribution(
        draw, n_samples=n_samples, bins=bins, rng=rng, model_tag="beam_wandering", shard_size=shard_size
    )
    dist.diagnostics.update({"W": W, "Delta": delta, "d0": geom.d0, "eta_det": eta_det})
    log.info("pdt.model_completed", model="beam_wandering", mean=dist.mean, n_samples=dist.n_samples)
    return _with_provenance(dist, provenance)


# -- elliptic beams ------------------------------------------------------------


def elliptic_covariance(stats: FieldStatistics, corrections: CorrectionSettings) -> np.ndarray:
    """Covariance of (x0, y0, theta1, theta2) after beam tracking."""

    if not stats.has_theta:
        raise DomainError("elliptic model needs theta statistics")
    delta2 = corrections.tracked_sigma(stats.sigma_bw) ** 2
    theta = np.asarray(stats.theta_cov, dtype=float)
    cov = np.zeros((4, 4))
    cov[0, 0] = cov[1, 1] = delta2
    cov[2:, 2:] = theta
    return cov


def pdt_elliptic(
    stats: FieldStatistics,
    params: ChannelParams,
    geom: ApertureGeometry,
    corrections: CorrectionSettings,
    n_samples: int,
    bins: int,
    rng: RngStream,
    *,
    angle_mode: str = "uniform",
    angle_std: Optional[float] = None,
    shard_size: Optional[int] = None,
    provenance: Optional[Dict[str, Any]] = None,
) -> TransmittanceDistribution:
    """Elliptic-beam model: Gaussian (x0, y0, theta1, theta2) and a wrapped orientation angle."""

    cov = elliptic_covariance(stats, corrections)
    _, clamped = psd_factor(cov)
    mean = np.array(
        [
            geom.d0 + stats.centroid_mean[0],
            stats.centroid_mean[1],
            stats.theta_mean,
            stats.theta_mean,
        ]
    )
    eta_det = corrections.eta_det

    def draw(size: int, gen: np.random.Generator):
        state = sample_gaussian_vec(mean, cov, gen, size)
        phi = sample_wrapped_angle(angle_mode, gen, size, std=angle_std)
        eta, outside = elliptic_transmittance_batch(
            state[:, 0], state[:, 1], state[:, 2], state[:, 3], phi, geom, params.W0
        )
        return eta * eta_det, {"clamped": float(outside)}

    dist = _sample_distribution(
        draw, n_samples=n_samples, bins=bins, rng=rng, model_tag="elliptic", shard_size=shard_size
    )
    clamp_rate = dist.diagnostics.pop("clamped", 0.0) / dist.n_samples
    dist.diagnostics.update(
        {"clamp_rate": clamp_rate, "covariance_clamped": clamped, "d0": geom.d0, "eta_det": eta_det}
    )
    if clamped:
        dist.flags.append("covariance_clamped")
        log.warning("pdt.covariance_clamped", model="elliptic")
    log.info("pdt.model_completed", model="elliptic", mean=dist.mean, clamp_rate=clamp_rate)
    return _with_provenance(dist, provenance)


# -- weak beam wandering -------------------------------------------------------


@dataclass(frozen=True)
class WeakBWParams:
    """Parameters of the conditional log-normal model.

    ``log_mean(r0)`` gives the means of ``(ln eta1, ln eta2)`` at deflection
    ``r0``; ``cov_lognormal`` is their covariance and does not depend on ``r0``.
    With no central obscuration only the first component is used.
    """

    radii: Tuple[float, ...]
    eta0: Tuple[float, ...]
    zeta0: Tuple[Tuple[float, ...], ...]
    mu_offset: Tuple[float, ...]
    cov_lognormal: Tuple[Tuple[float, ...], ...]
    scale: Tuple[float, ...]
    shape: Tuple[float, ...]
    log_inverse_scale: Tuple[float, ...]
    delta: float
    truncation_mass: float
    flags: Tuple[str, ...] = ()

    @property
    def components(self) -> int:
        return len(self.radii)

    def decay(self, r0: np.ndarray) -> np.ndarray:
        """Weibull exponents ``((r0 / a_n) / R_n)^lambda_n`` as an ``(m, components)`` array."""

        r0 = np.asarray(r0, dtype=float)[..., None]
        radii = np.asarray(self.radii)
        return np.asarray(self.log_inverse_scale) * np.power(r0 / radii, np.asarray(self.shape))

    def log_mean(self, r0: np.ndarray) -> np.ndarray:
        return -np.asarray(self.mu_offset) - self.decay(r0)

    def conditional_mean(self, r0: np.ndarray) -> np.ndarray:
        return np.asarray(self.eta0) * np.exp(-self.decay(r0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eta0": list(self.eta0),
            "zeta0": [list(row) for row in self.zeta0],
            "mu_offset": list(self.mu_offset),
            "cov_lognormal": [list(row) for row in self.cov_lognormal],
            "R": list(self.scale),
            "lambda": list(self.shape),
            "Delta": self.delta,
            "truncation_mass": self.truncation_mass,
            "flags": list(self.flags),
        }


def _deflection_average(exponents: Sequence[Tuple[float, float, float]], delta: float, budget: Optional[int]) -> float:
    """``int xi exp(-xi^2/2) exp(-sum_n L_n (delta xi / a_n)^lambda_n) d xi``."""

    if delta == 0.0:
        return 1.0

    def integrand(xi: float) -> float:
        decay = sum(lg * (delta * xi / a) ** lam for lg, a, lam in exponents)
        return xi * math.exp(-0.5 * xi * xi - decay)

    return adaptive_quad_1d(integrand, 0.0, math.inf, tol=1e-12, budget=budget).value


def weak_bw_params(
    stats: FieldStatistics,
    geom: ApertureGeometry,
    corrections: CorrectionSettings,
    *,
    budget: Optional[int] = None,
) -> WeakBWParams:
    """Fit the conditional log-normal model to the first-principles moments.

    The conditional moments decay with the deflection as Weibull factors built at
    width ``W_ST``; their prefactors are fixed so that averaging over a Rayleigh
    deflection of spread ``Delta`` reproduces ``<eta_n>`` and ``<eta_n eta_m>``.
    """

    delta = corrections.tracked_sigma(stats.sigma_bw)
    radii = tuple(a for a in geom.radii if a > 0)
    count = len(radii)
    flags: List[str] = []

    weibull = [weibull_params(a, 2.0 / stats.W_ST) for a in radii]
    terms = [(float(w.log_inverse_scale), a, float(w.shape)) for w, a in zip(weibull, radii)]

    eta0 = []
    for n in range(count):
        if stats.mean_eta[n] <= 0:
            raise ModelDiagnosticError(f"<eta{n + 1}> vanishes; the log-normal model is undefined")
        eta0.append(stats.mean_eta[n] / _deflection_average([terms[n]], delta, budget))

    zeta2 = np.zeros((count, count))
    for n in range(count):
        for m in range(n, count):
            pair = [terms[n], terms[m]]
            zeta2[n, m] = zeta2[m, n] = stats.eta_corr[n][m] / _deflection_average(pair, delta, budget)
    if np.any(zeta2 <= 0):
        raise ModelDiagnosticError("non-positive transmittance correlations", diagnostics={"zeta2": zeta2.tolist()})

    if any(value > 1.0 for value in eta0):
        flags.append("eta0_above_one")
        log.warning("pdt.eta0_above_one", eta0=eta0)

    eta0_arr = np.asarray(eta0)
    cov = np.log(zeta2 / np.outer(eta0_arr, eta0_arr))
    if np.any(np.diag(cov) < 0):
        flags.append("lognormal_variance_clamped")
        log.warning("pdt.variance_clamped", diagonal=np.diag(cov).tolist())
        np.fill_diagonal(cov, np.maximum(np.diag(cov), 0.0))
    try:
        _, clamped = psd_factor(cov)
    except DomainError as exc:
        raise ModelDiagnosticError(str(exc), diagnostics={"cov_lognormal": cov.tolist()}) from exc
    if clamped:
        flags.append("covariance_clamped")

    zeta0 = np.sqrt(zeta2)
    mu_offset = -np.log(eta0_arr**2 / np.diag(zeta0))

    # Bonferroni bound on the untruncated mass of (0, 1]^n at zero deflection.
    sd = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore"):
        tail = np.where(sd > 0, norm.sf(mu_offset / np.where(sd > 0, sd, 1.0)), (mu_offset < 0).astype(float))
    truncation_mass = float(max(0.0, 1.0 - tail.sum()))
    if truncation_mass < MIN_TRUNCATION_MASS:
        flags.append("truncated_lognormal_degraded")
        log.warning("pdt.truncation_degraded", truncation_mass=truncation_mass)

    return WeakBWParams(
        radii=radii,
        eta0=tuple(float(v) for v in eta0_arr),
        zeta0=tuple(tuple(float(v) for v in row) for row in zeta0),
        mu_offset=tuple(float(v) for v in mu_offset),
        cov_lognormal=tuple(tuple(float(v) for v in row) for row in cov),
        scale=tuple(float(w.scale) for w in weibull),
        shape=tuple(t[2] for t in terms),
        log_inverse_scale=tuple(t[0] for t in terms),
        delta=delta,
        truncation_mass=truncation_mass,
        flags=tuple(flags),
    )


def pdt_weak_bw(
    wparams: WeakBWParams,
    stats: FieldStatistics,
    geom: ApertureGeometry,
    corrections: CorrectionSettings,
    n_samples: int,
    bins: int,
    rng: RngStream,
    *,
    shard_size: Optional[int] = None,
    provenance: Optional[Dict[str, Any]] = None,
) -> TransmittanceDistribution:
    """Weak beam wandering model sampled by rejection onto ``1 >= eta1 >= eta2 > 0``.

    Raises :class:`ModelDiagnosticError` when more than half of the draws of a
    shard are rejected.
    """

    factor, _ = psd_factor(np.asarray(wparams.cov_lognormal))
    components = wparams.components
    delta = wparams.delta
    eta_det = corrections.eta_det

    def draw(size: int, gen: np.random.Generator):
        accepted: List[np.ndarray] = []
        kept = attempted = truncated = disordered = 0
        batch = size
        while kept < size:
            r0 = sample_rice(geom.d0, delta, gen, batch)
            log_eta = wparams.log_mean(r0) + gen.standard_normal((batch, components)) @ factor.T
            eta = np.exp(log_eta)
            inside = np.all(eta <= 1.0, axis=1)
            ordered = eta[:, 0] >= eta[:, 1] if components == 2 else np.ones(batch, dtype=bool)
            ok = inside & ordered
            truncated += int(np.count_nonzero(~inside))
            disordered += int(np.count_nonzero(inside & ~ordered))
            attempted += batch

            total = eta[ok, 0] - (eta[ok, 1] if components == 2 else 0.0)
            accepted.append(total[: size - kept])
            kept += min(int(ok.sum()), size - kept)

            if attempted >= size and kept < MAX_REJECTION_RATE * attempted:
                raise ModelDiagnosticError(
                    "weak beam wandering rejection rate above 50%",
                    diagnostics={"attempted": attempted, "accepted": kept},
                )
            batch = max(size - kept, 1)
        eta_total = np.concatenate(accepted) * eta_det
        return eta_total, {"attempted": float(attempted), "truncated": float(truncated), "disordered": float(disordered)}

    dist = _sample_distribution(
        draw, n_samples=n_samples, bins=bins, rng=rng, model_tag="weak_bw", shard_size=shard_size
    )
    attempted = dist.diagnostics.pop("attempted", float(dist.n_samples))
    truncated = dist.diagnostics.pop("truncated", 0.0)
    disordered = dist.diagnostics.pop("disordered", 0.0)
    dist.diagnostics.update(
        {
            "rejection_rate": 1.0 - dist.n_samples / attempted,
            "truncation_rejections": truncated / attempted,
            "ordering_rejections": disordered / attempted,
            "truncation_mass": wparams.truncation_mass,
            "reference_mean": stats.annular_mean * eta_det,
            "d0": geom.d0,
            "eta_det": eta_det,
        }
    )
    dist.flags.extend(flag for flag in wparams.flags if flag not in dist.flags)
    log.info(
        "pdt.model_completed",
        model="weak_bw",
        mean=dist.mean,
        rejection_rate=dist.diagnostics["rejection_rate"],
    )
    return _with_provenance(dist, provenance)


# -- corrections ---------------------------------------------------------------


@dataclass(frozen=True)
class OffsetResult:
    d0: float
    mean_eta: float
    distribution: TransmittanceDistribution


def scan_offset(
    run_model: Callable[[ApertureGeometry], TransmittanceDistribution],
    geom: ApertureGeometry,
    d0_grid: Sequence[float],
) -> List[OffsetResult]:
    """Run one model for each aiming offset; ``run_model`` must reuse its seed."""

    grid = [float(d0) for d0 in d0_grid]
    if not grid:
        raise DomainError("offset grid is empty")
    if any(d0 < 0 or d0 > 2.0 * geom.a1 for d0 in grid):
        raise DomainError(f"offsets must lie within [0, {2.0 * geom.a1:g}] m")

    results = []
    for d0 in grid:
        dist = run_model(geom.model_copy(update={"d0": d0}))
        results.append(OffsetResult(d0=d0, mean_eta=dist.mean, distribution=dist))
    best = max(results, key=lambda item: item.mean_eta)
    log.info("pdt.offset_scan_completed", points=len(grid), best_d0=best.d0, best_mean=best.mean_eta)
    return results


def apply_deterministic_loss(dist: TransmittanceDistribution, eta_det: float) -> TransmittanceDistribution:
    """Scale the transmittance by a fixed factor; the density is rescaled to stay normalised."""

    if not 0.0 < eta_det <= 1.0:
        raise DomainError("eta_det must lie in (0, 1]")
    diagnostics = dict(dist.diagnostics)
    diagnostics["eta_det"] = diagnostics.get("eta_det", 1.0) * eta_det
    return replace(
        dist,
        bin_edges=dist.bin_edges * eta_det,
        density=dist.density / eta_det,
        mean=dist.mean * eta_det,
        second_moment=dist.second_moment * eta_det**2,
        variance=dist.variance * eta_det**2,
        diagnostics=diagnostics,
        provenance=dict(dist.provenance),
        flags=list(dist.flags),
    )


__all__ = [
    "OffsetResult",
    "TransmittanceDistribution",
    "WeakBWParams",
    "apply_deterministic_loss",
    "db_to_factor",
    "elliptic_covariance",
    "pdt_beam_wandering",
    "pdt_elliptic",
    "pdt_weak_bw",
    "scan_offset",
    "weak_bw_params",
]
