import numpy as np
import pytest
from scipy import stats

from braggedge.bayes import (GRID_REFINE, ZetaSamples, edge_problem, estimate_strain_gp,
                             fit_edge_gp, is_bimodal, sample_zeta, strain_distribution,
                             strain_histogram_report)
from braggedge.errors import InvalidArgumentError, MethodFailureError
from braggedge.gp import GPEdgePosterior, Kernel, gp_condition
from braggedge.noise import SIGMA_24, default_windows
from braggedge.results import StrainEstimate
from braggedge.simulate import GridSpec, simulate_spectrum
from braggedge.spectrum import EdgeParams, TransmissionSpectrum, baseline_curves, kropff_edge

LAM = GridSpec().points()
PITCH = LAM[1] - LAM[0]
EDGE = EdgeParams(4.05, 0.009, 0.006)


@pytest.fixture(scope="module")
def noiseless_fit():
    s = simulate_spectrum(EDGE, LAM, noise_scale=0)
    return fit_edge_gp(s, kernel_candidates=["squared_exponential"], noise_std=1e-4)


def _dense_maximiser(p):
    dense = np.linspace(p.lambda_hkl - 0.05, p.lambda_hkl + 0.05, 200001)
    return dense[np.argmax(np.gradient(kropff_edge(dense, p.lambda_hkl, p.sigma_B, p.tau), dense))]


def test_noiseless_posterior_mean_matches_edge(noiseless_fit):
    truth = kropff_edge(noiseless_fit.grid, EDGE.lambda_hkl, EDGE.sigma_B, EDGE.tau)
    assert np.max(np.abs(noiseless_fit.posterior.mean_B - truth)) < 2e-3
    np.testing.assert_allclose(noiseless_fit.baselines, EDGE.baselines, atol=1e-6)


def test_prediction_grid_refines_measurement_pitch(noiseless_fit):
    assert np.median(np.diff(noiseless_fit.grid)) == pytest.approx(PITCH / GRID_REFINE, rel=1e-9)


def test_no_edge_gives_zero_shape():
    gamma1, _ = baseline_curves(LAM, *EDGE.baselines)
    s = TransmissionSpectrum(LAM, gamma1, np.full(LAM.size, 1e-3))
    prob = edge_problem(s, EDGE.baselines, (3.9, 4.2))
    np.testing.assert_allclose(prob.y_bar, 0.0, atol=1e-15)
    post = gp_condition(prob.with_kernel(prob.kernel), np.linspace(3.95, 4.15, 7))
    assert np.all(np.abs(post.mean_B) < 3 * np.sqrt(post.var_B) + 1e-15)


def test_no_edge_is_a_method_failure():
    # a convex shape has its steepest point at the window end: no edge
    gamma1, gamma2 = baseline_curves(LAM, *EDGE.baselines)
    (_, lo), (hi, _) = default_windows(TransmissionSpectrum(LAM, gamma1))
    B = np.clip((LAM - lo) / (hi - lo), 0, 1) ** 2
    s = TransmissionSpectrum(LAM, gamma1 + B * (gamma2 - gamma1), np.full(LAM.size, 1e-3))
    with pytest.raises(MethodFailureError, match="no interior gradient peak"):
        fit_edge_gp(s, kernel=Kernel("squared_exponential", 1.0, 0.05))


def test_matern32_fit_is_well_defined():
    s = simulate_spectrum(EDGE, LAM, SIGMA_24, 1.0, np.random.default_rng(0))
    fit = fit_edge_gp(s, kernel_candidates=["matern_3_2"])
    assert fit.kernel.kind == "matern_3_2"
    assert np.all(np.isfinite(fit.posterior.mean_B))
    assert np.all(np.isfinite(fit.posterior.cov_g))


def test_fit_needs_noise():
    with pytest.raises(InvalidArgumentError):
        fit_edge_gp(simulate_spectrum(EDGE, LAM, noise_scale=0))


def test_zeta_deterministic_gradient():
    grid = np.linspace(0, 1, 5)
    post = GPEdgePosterior(grid, np.zeros(5), np.zeros(5), None,
                           np.array([0.1, 0.5, 0.2, 0.5, 0.0]), np.zeros((5, 5)))
    z = sample_zeta(post, 10, np.random.default_rng(0))
    np.testing.assert_array_equal(z.values, 0.25)


def test_zeta_symmetric_two_points():
    post = GPEdgePosterior(np.array([0.0, 1.0]), np.zeros(2), np.zeros(2), None, np.zeros(2),
                           np.array([[1.0, 0.3], [0.3, 1.0]]))
    z = sample_zeta(post, 10000, np.random.default_rng(1))
    assert np.mean(z.values == 0.0) == pytest.approx(0.5, abs=0.02)


def test_zeta_noiseless_concentrates_at_maximiser(noiseless_fit):
    z = sample_zeta(noiseless_fit.posterior, 1000, np.random.default_rng(2))
    step = np.median(np.diff(noiseless_fit.grid))
    assert np.all(np.abs(z.values - _dense_maximiser(EDGE)) <= 2 * step + 1e-12)
    assert np.all(np.isin(z.values, noiseless_fit.grid))


def test_zeta_scale_invariance(noiseless_fit):
    post = noiseless_fit.posterior
    a = sample_zeta(post, 500, np.random.default_rng(3))
    b = sample_zeta(post.scaled_gradient(4.0), 500, np.random.default_rng(3))
    np.testing.assert_array_equal(a.values, b.values)


def test_zeta_needs_samples(noiseless_fit):
    with pytest.raises(InvalidArgumentError):
        sample_zeta(noiseless_fit.posterior, 0)


def test_strain_distribution_cases():
    z = ZetaSamples(np.full(100, 4.05), 0.001)
    est = strain_distribution(z, ZetaSamples(np.full(100, 4.05), 0.001))
    assert est.strain_mean == 0 and est.strain_std == 0
    est = strain_distribution(ZetaSamples(np.full(100, 4.05 * 1.001), 0.001), 4.05)
    assert est.strain_mean * 1e6 == pytest.approx(1000.0, rel=1e-9)
    assert est.strain_std == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InvalidArgumentError):
        strain_distribution(z, 0.0)
    with pytest.raises(InvalidArgumentError):
        strain_distribution(z, ZetaSamples(np.full(99, 4.05), 0.001))


def test_strain_statistics_match_samples():
    rng = np.random.default_rng(4)
    z = ZetaSamples(4.05 + rng.normal(0, 1e-3, 1000), 1e-4)
    est = strain_distribution(z, 4.05)
    assert est.strain_mean == est.samples.mean()
    assert est.strain_std == est.samples.std()


def test_bimodality_flag():
    rng = np.random.default_rng(5)
    pitch = 1e-3
    one = 4.05 + pitch * rng.integers(-2, 3, 1000)
    assert not is_bimodal(ZetaSamples(one, pitch))
    two = np.r_[one[:500], one[500:] + 30 * pitch]
    assert is_bimodal(ZetaSamples(two, pitch))
    assert "bimodal" in strain_distribution(ZetaSamples(two, pitch), 4.05).flags


def test_unstrained_estimate_centred():
    s = simulate_spectrum(EDGE, LAM, SIGMA_24, 1.0, np.random.default_rng(6))
    est = estimate_strain_gp(s, s, n_samples=1000, rng=np.random.default_rng(7),
                             zeta0_mode="sampled", kernel_candidates=["squared_exponential"],
                             n_starts=1)
    # paired draws from the same posterior: centred within 3 std / sqrt(N)
    assert abs(est.strain_mean) <= 3 * est.strain_std / np.sqrt(1000) + 1e-15


def test_end_to_end_noisy_trial():
    p = EdgeParams(4.05 * 1.0012, 0.009, 0.006)
    s = simulate_spectrum(p, LAM, SIGMA_24, 1.0, np.random.default_rng(8))
    ref = simulate_spectrum(EDGE, LAM, noise_scale=0)
    est = estimate_strain_gp(s, ref, rng=np.random.default_rng(9),
                             kernel_candidates=["squared_exponential"], n_starts=1)
    assert est.method == "gp" and est.n_samples == 1000
    assert abs(est.strain_mean - 1.2e-3) < 5 * est.strain_std + 1e-4
    assert est.details["zeta0"] == pytest.approx(_dense_maximiser(EDGE), abs=2 * PITCH)
    d = est.to_json_dict()
    assert d["n_samples"] == 1000 and d["bimodal"] is False


def test_reference_as_scalar():
    s = simulate_spectrum(EDGE, LAM, SIGMA_24, 1.0, np.random.default_rng(10))
    est = estimate_strain_gp(s, 4.05, n_samples=100, rng=np.random.default_rng(0),
                             kernel_candidates=["squared_exponential"], n_starts=1)
    assert est.details["reference_fit"] is None
    with pytest.raises(InvalidArgumentError):
        estimate_strain_gp(s, s, n_samples=10, zeta0_mode="bogus",
                           kernel_candidates=["squared_exponential"], n_starts=1)


def test_grid_density_consistency():
    s = simulate_spectrum(EdgeParams(4.053, 0.009, 0.006), LAM, SIGMA_24, 1.0,
                          np.random.default_rng(11))
    ref = simulate_spectrum(EDGE, LAM, noise_scale=0)
    kw = dict(kernel_candidates=["squared_exponential"], n_starts=1)
    coarse = estimate_strain_gp(s, ref, rng=np.random.default_rng(12), refine=8, **kw)
    fine = estimate_strain_gp(s, ref, rng=np.random.default_rng(12), refine=16, **kw)
    bound = 0.5 * (PITCH / 8) / coarse.details["zeta0"]
    assert abs(coarse.strain_mean - fine.strain_mean) < bound


def test_histogram_report_gaussian_samples(tmp_path):
    rng = np.random.default_rng(13)
    n = 1000
    crit = stats.kstwo.ppf(0.99, n)
    passes = 0
    for _ in range(100):
        est = StrainEstimate.from_samples(rng.normal(1e-4, 5e-5, n), "gp")
        passes += strain_histogram_report(est).ks_statistic < crit
    assert passes >= 95
    rep = strain_histogram_report(est, bins=20)
    assert rep.overlay.sum() == pytest.approx(n, rel=0.05)
    rep.write_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "bin_center,count,gaussian_overlay"


def test_histogram_single_value():
    rep = strain_histogram_report(StrainEstimate.from_samples(np.full(50, 2e-4), "gp"))
    assert np.count_nonzero(rep.counts) == 1
    with pytest.raises(InvalidArgumentError):
        strain_histogram_report(StrainEstimate(0.0, 0.0, "gp"))
