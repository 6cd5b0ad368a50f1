import json

import numpy as np
import pytest

from braggedge.errors import InvalidArgumentError
from braggedge.noise import SIGMA_24, noise_std_at
from braggedge.simulate import (SIGMA_B_RANGE, TAU_RANGE, GridSpec, TrialConfig, generate_trial,
                                sample_edge_params, simulate_spectrum, write_manifest,
                                write_spectrum_csv)
from braggedge.spectrum import EdgeParams, santisteban_transmission


def test_degenerate_ranges():
    cfg = TrialConfig(sigma_B_range=(0.01, 0.01), tau_range=(0.002, 0.002))
    rng = np.random.default_rng(0)
    for _ in range(10):
        p = sample_edge_params(rng, cfg)
        assert p.sigma_B == 0.01 and p.tau == 0.002


def test_sampling_uniform():
    cfg = TrialConfig()
    rng = np.random.default_rng(0)
    ps = [sample_edge_params(rng, cfg) for _ in range(10000)]
    s = np.array([p.sigma_B for p in ps])
    t = np.array([p.tau for p in ps])
    strain = np.array([p.lambda_hkl / cfg.lambda0 - 1 for p in ps])
    assert SIGMA_B_RANGE[0] <= s.min() and s.max() <= SIGMA_B_RANGE[1]
    assert TAU_RANGE[0] <= t.min() and t.max() <= TAU_RANGE[1]
    assert s.mean() == pytest.approx(np.mean(SIGMA_B_RANGE), rel=0.01)
    assert t.mean() == pytest.approx(np.mean(TAU_RANGE), rel=0.01)
    assert np.abs(strain).max() <= 3e-3 + 1e-12


def test_sampling_deterministic():
    cfg = TrialConfig()
    a = [sample_edge_params(np.random.default_rng(5), cfg) for _ in range(3)]
    b = [sample_edge_params(np.random.default_rng(5), cfg) for _ in range(3)]
    assert a == b


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrialConfig(n_groups=0)
    with pytest.raises(InvalidArgumentError):
        TrialConfig(sigma_B_range=(0.02, 0.01))
    with pytest.raises(InvalidArgumentError):
        TrialConfig(tau_range=(-1e-3, 0.0))
    with pytest.raises(InvalidArgumentError):
        TrialConfig(noise_scale=-1)


def test_noiseless_spectrum_exact():
    p = EdgeParams(4.06, 0.01, 0.005)
    lam = GridSpec().points()
    s = simulate_spectrum(p, lam, noise_scale=0)
    np.testing.assert_array_equal(s.values, santisteban_transmission(lam, p))


def test_noise_statistics_at_fixed_wavelength():
    p = EdgeParams(4.05, 0.01, 0.005)
    lam = np.array([4.0, 4.05, 4.1])
    rng = np.random.default_rng(0)
    tr = santisteban_transmission(lam, p)
    ys = np.array([simulate_spectrum(p, lam, SIGMA_24, 1.0, rng).values for _ in range(100000)])
    sd = noise_std_at(SIGMA_24, tr)
    np.testing.assert_allclose(ys.std(axis=0), sd, rtol=0.01)
    assert np.all(np.abs(ys.mean(axis=0) - tr) <= 3 * sd / np.sqrt(ys.shape[0]))


def test_noise_std_field_exact():
    p = EdgeParams(4.05, 0.01, 0.005)
    lam = GridSpec().points()
    s = simulate_spectrum(p, lam, SIGMA_24, 10.0, np.random.default_rng(1))
    np.testing.assert_array_equal(s.noise_std,
                                  10.0 * noise_std_at(SIGMA_24, santisteban_transmission(lam, p)))


def test_trials_bit_identical_and_order_free():
    cfg = TrialConfig(n_groups=3, trials_per_group=4, seed=7)
    a = generate_trial(cfg, 2, 3)
    _ = [generate_trial(cfg, g, t) for g in range(3) for t in range(4)]
    b = generate_trial(cfg, 2, 3)
    np.testing.assert_array_equal(a.spectrum.values, b.spectrum.values)
    assert a.params == b.params


def test_group_shares_shape_and_reference_is_stress_free():
    cfg = TrialConfig(n_groups=2, trials_per_group=3)
    t0, t1 = generate_trial(cfg, 1, 0), generate_trial(cfg, 1, 1)
    assert (t0.params.sigma_B, t0.params.tau) == (t1.params.sigma_B, t1.params.tau)
    assert t0.params.lambda_hkl != t1.params.lambda_hkl
    assert t0.reference_params.lambda_hkl == cfg.lambda0
    assert t0.reference_params.sigma_B == t0.params.sigma_B
    np.testing.assert_array_equal(t0.reference.values,
                                  santisteban_transmission(cfg.grid.points(), t0.reference_params))


def test_writers(tmp_path):
    trial = generate_trial(TrialConfig(), 0, 0)
    write_spectrum_csv(tmp_path / "s.csv", trial.spectrum)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "lambda,transmission,noise_std"
    assert len(lines) == 513
    write_manifest(tmp_path / "m.json", trial, 0)
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["true_strain"] == trial.true_strain
    assert m["params"]["sigma_B"] == trial.params.sigma_B
