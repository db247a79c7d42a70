import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate

from fadechan import config
from fadechan.aperture import annular_transmittance_approx, rayleigh_density
from fadechan.domain_types import ApertureGeometry, ChannelParams, CorrectionSettings, SamplingPlan
from fadechan.errors import DomainError, ModelDiagnosticError
from fadechan.numerics import RngStream
from fadechan.pdt import (
    TransmittanceDistribution,
    apply_deterministic_loss,
    db_to_factor,
    elliptic_covariance,
    pdt_beam_wandering,
    pdt_elliptic,
    pdt_weak_bw,
    scan_offset,
    weak_bw_params,
)
from fadechan.turbulence import FieldStatistics, compute_field_statistics

GEOM = ApertureGeometry()
NO_CORRECTION = CorrectionSettings()
W_SPOT = 0.0127
SIGMA_BW = 0.0094


def _weak_stats(**overrides):
    data = {
        "mean_eta": (0.9, 0.32),
        "eta_corr": [[0.81 * 1.001, 0.288 * 1.005], [0.288 * 1.005, 0.1024 * 1.05]],
        "W_ST": 0.05,
        "sigma_bw2": 0.01**2,
    }
    data.update(overrides)
    return FieldStatistics(**data)


def _collapsed_stats(W=W_SPOT, W0=0.02):
    return FieldStatistics(
        mean_eta=(0.9, 0.3),
        eta_corr=[[0.81, 0.27], [0.27, 0.09]],
        W_ST=W,
        sigma_bw2=SIGMA_BW**2,
        theta_mean=math.log(W**2 / W0**2),
        theta_cov=[[0.0, 0.0], [0.0, 0.0]],
    )


def _tv_distance(a, b):
    return 0.5 * float(np.sum(np.abs(a.density - b.density) * a.bin_widths))


def test_db_to_factor():
    assert db_to_factor(0.0) == 1.0
    assert db_to_factor(10.0) == pytest.approx(0.1)
    assert db_to_factor(3.0) == pytest.approx(0.501187, rel=1e-5)
    with pytest.raises(DomainError):
        db_to_factor(-1.0)


def test_correction_settings_convert_loss():
    assert CorrectionSettings(loss_db=3.0).eta_det == pytest.approx(db_to_factor(3.0))


def test_beam_wandering_distribution_is_normalised():
    dist = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 50_000, 100, RngStream(1, 10))

    assert isinstance(dist, TransmittanceDistribution)
    assert dist.total_mass == pytest.approx(1.0, abs=1e-9)
    assert dist.n_samples == 50_000
    assert dist.bin_edges[0] == 0.0 and dist.bin_edges[-1] == 1.0
    assert 0.0 <= dist.mean <= 1.0
    assert dist.variance == pytest.approx(dist.second_moment - dist.mean**2)
    assert dist.flags == []


def test_beam_wandering_without_wandering_is_a_point_mass():
    dist = pdt_beam_wandering(0.03, 0.0, GEOM, NO_CORRECTION, 2_000, 50, RngStream(2))
    expected = annular_transmittance_approx(0.0, 0.03, GEOM)

    assert dist.mean == pytest.approx(expected, rel=1e-12)
    assert dist.variance == pytest.approx(0.0, abs=1e-12)
    assert np.count_nonzero(dist.density) == 1


def test_beam_wandering_mean_matches_rayleigh_average():
    dist = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 200_000, 100, RngStream(3))
    xi = np.linspace(0.0, 10.0, 4001)
    weights = xi * np.exp(-0.5 * xi * xi)
    values = annular_transmittance_approx(SIGMA_BW * xi, W_SPOT, GEOM)
    reference = integrate.trapezoid(weights * values, xi) / integrate.trapezoid(weights, xi)
    assert dist.mean == pytest.approx(reference, abs=5 * dist.standard_error + 1e-4)


def test_sampling_is_reproducible_across_worker_counts(monkeypatch):
    def run():
        config.get_settings.cache_clear()
        return pdt_beam_wandering(
            W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 20_000, 80, RngStream(4, 10), shard_size=1_500
        )

    monkeypatch.setenv("FADECHAN_THREADS", "1")
    serial = run()
    monkeypatch.setenv("FADECHAN_THREADS", "4")
    threaded = run()

    np.testing.assert_array_equal(serial.density, threaded.density)
    assert serial.mean == threaded.mean
    assert serial.provenance["shards"] == 14


def test_few_samples_flag():
    dist = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 100, 10, RngStream(5))
    assert "few_samples" in dist.flags


def test_tracking_narrows_the_distribution():
    loose = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 50_000, 100, RngStream(6))
    tracked = pdt_beam_wandering(
        W_SPOT, SIGMA_BW, GEOM, CorrectionSettings(tracking_ratio=0.2), 50_000, 100, RngStream(6)
    )
    assert tracked.diagnostics["Delta"] == pytest.approx(0.2 * SIGMA_BW)
    assert tracked.variance < loose.variance


def test_distribution_queries():
    dist = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 20_000, 100, RngStream(7))

    assert dist.mass_above(0.0) == pytest.approx(1.0, abs=1e-9)
    assert dist.mass_above(1.0) == pytest.approx(0.0, abs=1e-12)
    median = dist.quantile(0.5)
    assert dist.mass_above(median) == pytest.approx(0.5, abs=1e-9)
    assert dist.quantile(0.0) == 0.0
    with pytest.raises(DomainError):
        dist.quantile(1.5)

    data = dist.to_dict()
    assert data["model"] == "beam_wandering"
    assert data["bins"] == 100
    assert data["standard_error"] == pytest.approx(dist.standard_error)


def test_apply_deterministic_loss_keeps_normalisation():
    dist = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 10_000, 50, RngStream(8))
    scaled = apply_deterministic_loss(dist, 0.5)

    assert scaled.total_mass == pytest.approx(1.0, abs=1e-9)
    assert scaled.mean == pytest.approx(0.5 * dist.mean)
    assert scaled.variance == pytest.approx(0.25 * dist.variance)
    assert scaled.bin_edges[-1] == pytest.approx(0.5)
    assert scaled.diagnostics["eta_det"] == pytest.approx(0.5)
    with pytest.raises(DomainError):
        apply_deterministic_loss(dist, 0.0)


def test_eta_det_scales_sampled_values():
    plain = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 10_000, 50, RngStream(9))
    lossy = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, CorrectionSettings(eta_det=0.5), 10_000, 50, RngStream(9))
    assert lossy.mean == pytest.approx(0.5 * plain.mean, rel=1e-12)


def test_elliptic_covariance_layout():
    stats = _collapsed_stats()
    cov = elliptic_covariance(stats, CorrectionSettings(tracking_ratio=0.5))
    assert cov.shape == (4, 4)
    assert cov[0, 0] == pytest.approx((0.5 * SIGMA_BW) ** 2)
    assert cov[0, 2] == 0.0

    with pytest.raises(DomainError):
        elliptic_covariance(_weak_stats(), NO_CORRECTION)


def test_elliptic_collapses_to_beam_wandering():
    params = ChannelParams()
    stats = _collapsed_stats(W0=params.W0)
    elliptic = pdt_elliptic(stats, params, GEOM, NO_CORRECTION, 200_000, 50, RngStream(10))
    wandering = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 200_000, 50, RngStream(11))

    assert _tv_distance(elliptic, wandering) <= 0.02
    assert elliptic.diagnostics["clamp_rate"] == 0.0
    assert elliptic.diagnostics["covariance_clamped"] is False
    assert elliptic.total_mass == pytest.approx(1.0, abs=1e-9)


def test_elliptic_wrapped_normal_angles():
    params = ChannelParams()
    stats = dataclasses.replace(_collapsed_stats(W0=params.W0), theta_cov=[[0.05, 0.01], [0.01, 0.05]])
    dist = pdt_elliptic(
        stats, params, GEOM, NO_CORRECTION, 5_000, 20, RngStream(12), angle_mode="wrapped_normal", angle_std=0.3
    )
    assert dist.model_tag == "elliptic"
    assert 0.0 < dist.mean < 1.0


def test_weak_bw_params_fit():
    stats = _weak_stats()
    wparams = weak_bw_params(stats, GEOM, NO_CORRECTION)

    assert wparams.components == 2
    assert wparams.delta == pytest.approx(0.01)
    assert wparams.eta0[0] >= stats.mean_eta[0]
    assert wparams.eta0[1] > stats.mean_eta[1]
    assert wparams.cov_lognormal[0][0] == pytest.approx(math.log(1.001) + 0.0, abs=5e-4)
    assert 0.95 <= wparams.truncation_mass <= 1.0
    assert "truncated_lognormal_degraded" not in wparams.flags
    # Conditional means at zero deflection are the fitted maxima.
    np.testing.assert_allclose(wparams.conditional_mean(np.array([0.0]))[0], wparams.eta0)
    assert set(wparams.to_dict()) >= {"eta0", "zeta0", "mu_offset", "cov_lognormal", "R", "lambda"}


def test_weak_bw_mean_matches_first_principles():
    stats = _weak_stats()
    wparams = weak_bw_params(stats, GEOM, NO_CORRECTION)
    dist = pdt_weak_bw(wparams, stats, GEOM, NO_CORRECTION, 100_000, 100, RngStream(13))

    assert dist.mean == pytest.approx(stats.annular_mean, rel=0.02)
    assert dist.diagnostics["rejection_rate"] < 0.05
    assert dist.diagnostics["reference_mean"] == pytest.approx(stats.annular_mean)
    assert dist.total_mass == pytest.approx(1.0, abs=1e-9)


def test_weak_bw_without_obscuration_uses_one_component():
    disk = ApertureGeometry(a1=0.075, a2=0.0)
    stats = _weak_stats(mean_eta=(0.9, 0.0), eta_corr=[[0.81 * 1.001, 0.0], [0.0, 0.0]])
    wparams = weak_bw_params(stats, disk, NO_CORRECTION)
    dist = pdt_weak_bw(wparams, stats, disk, NO_CORRECTION, 20_000, 50, RngStream(14))

    assert wparams.components == 1
    assert dist.mean == pytest.approx(0.9, rel=0.02)


def test_weak_bw_flags_degraded_truncation():
    stats = _weak_stats(
        mean_eta=(0.99, 0.32),
        eta_corr=[[0.99**2 * 1.05, 0.32 * 0.99], [0.32 * 0.99, 0.1024 * 1.05]],
    )
    wparams = weak_bw_params(stats, GEOM, NO_CORRECTION)
    assert wparams.truncation_mass < 0.95
    assert "truncated_lognormal_degraded" in wparams.flags


def test_weak_bw_excessive_rejection_is_fatal():
    stats = _weak_stats(W_ST=0.01, sigma_bw2=0.1**2)
    with pytest.raises(ModelDiagnosticError):
        wparams = weak_bw_params(stats, GEOM, NO_CORRECTION)
        pdt_weak_bw(wparams, stats, GEOM, NO_CORRECTION, 10_000, 50, RngStream(15))


def test_scan_offset_finds_annulus_centre():
    def run(geom):
        return pdt_beam_wandering(W_SPOT, SIGMA_BW, geom, NO_CORRECTION, 20_000, 50, RngStream(16))

    results = scan_offset(run, GEOM, [0.0, 0.025, 0.049, 0.07])
    best = max(results, key=lambda item: item.mean_eta)

    assert [item.d0 for item in results] == [0.0, 0.025, 0.049, 0.07]
    assert best.d0 == pytest.approx(GEOM.optimal_offset)
    assert results[0].mean_eta < best.mean_eta


def test_scan_offset_rejects_bad_grid():
    with pytest.raises(DomainError):
        scan_offset(lambda geom: None, GEOM, [])
    with pytest.raises(DomainError):
        scan_offset(lambda geom: None, GEOM, [0.2])


def _rayleigh_average(fn, delta):
    value, _ = integrate.quad(
        lambda r: rayleigh_density(r, delta) * fn(r), 0.0, 40.0 * delta, epsabs=1e-14, epsrel=1e-12, limit=200
    )
    return value


def test_weak_bw_fit_reproduces_input_moments():
    stats = _weak_stats()
    wparams = weak_bw_params(stats, GEOM, NO_CORRECTION)
    cov = np.asarray(wparams.cov_lognormal)
    assert "lognormal_variance_clamped" not in wparams.flags

    for n in range(2):
        mean = _rayleigh_average(lambda r: float(wparams.conditional_mean(r)[n]), wparams.delta)
        assert mean == pytest.approx(stats.mean_eta[n], rel=1e-8)

    def conditional_product(r, n, m):
        mu = wparams.log_mean(r)
        return math.exp(mu[n] + mu[m] + 0.5 * (cov[n, n] + cov[m, m]) + cov[n, m])

    for n in range(2):
        for m in range(2):
            corr = _rayleigh_average(lambda r: conditional_product(r, n, m), wparams.delta)
            assert corr == pytest.approx(stats.eta_corr[n][m], rel=1e-8)


def test_weak_bw_second_moment_matches_first_principles():
    stats = _weak_stats()
    wparams = weak_bw_params(stats, GEOM, NO_CORRECTION)
    dist = pdt_weak_bw(wparams, stats, GEOM, NO_CORRECTION, 100_000, 100, RngStream(18))

    assert dist.second_moment == pytest.approx(stats.annular_second_moment, rel=0.04)


def test_tracking_replaces_wandering_spread():
    untracked = pdt_beam_wandering(W_SPOT, SIGMA_BW, GEOM, NO_CORRECTION, 20_000, 50, RngStream(19))
    unit_ratio = pdt_beam_wandering(
        W_SPOT, SIGMA_BW, GEOM, CorrectionSettings(tracking_ratio=1.0), 20_000, 50, RngStream(19)
    )
    np.testing.assert_array_equal(unit_ratio.density, untracked.density)

    tracked = pdt_beam_wandering(
        W_SPOT, SIGMA_BW, GEOM, CorrectionSettings(tracking_ratio=0.25), 20_000, 50, RngStream(20)
    )
    narrower = pdt_beam_wandering(W_SPOT, 0.25 * SIGMA_BW, GEOM, NO_CORRECTION, 20_000, 50, RngStream(20))
    np.testing.assert_array_equal(tracked.density, narrower.density)
    assert tracked.mean == narrower.mean

    stats = _weak_stats()
    fitted = weak_bw_params(stats, GEOM, CorrectionSettings(tracking_ratio=0.5))
    reduced = weak_bw_params(dataclasses.replace(stats, sigma_bw2=(0.5 * stats.sigma_bw) ** 2), GEOM, NO_CORRECTION)
    assert fitted.delta == pytest.approx(reduced.delta, rel=1e-12)
    np.testing.assert_allclose(fitted.eta0, reduced.eta0, rtol=1e-9)
    np.testing.assert_allclose(fitted.cov_lognormal, reduced.cov_lognormal, rtol=1e-9, atol=1e-12)


def _statistics_at(length):
    return compute_field_statistics(ChannelParams(L=length), GEOM, SamplingPlan(seed=3))


def test_one_kilometre_link_transmits_less_than_two(small_budget):
    near = _statistics_at(1000.0)
    far = _statistics_at(2000.0)
    assert near.annular_mean < far.annular_mean

    def sampled_mean(stats):
        return pdt_beam_wandering(stats.W_ST, stats.sigma_bw, GEOM, NO_CORRECTION, 50_000, 100, RngStream(21)).mean

    assert sampled_mean(near) < sampled_mean(far)


def test_elliptic_offset_optimum_near_annulus_centre(small_budget):
    params = ChannelParams(L=1000.0)
    stats = compute_field_statistics(params, GEOM, SamplingPlan(seed=3))

    def run(geom):
        return pdt_elliptic(stats, params, geom, NO_CORRECTION, 20_000, 50, RngStream(22))

    results = scan_offset(run, GEOM, np.linspace(0.0, GEOM.a1 + GEOM.a2, 15))
    best = max(results, key=lambda item: item.mean_eta)

    assert abs(best.d0 - GEOM.optimal_offset) <= 0.25 * (GEOM.a1 - GEOM.a2)
    assert results[0].mean_eta < best.mean_eta
