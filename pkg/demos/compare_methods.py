"""Fit one simulated strained edge with all four estimators.

Run with ``python3 demos/compare_methods.py [noise_scale]``.
"""

import sys

import numpy as np

from braggedge import (EdgeParams, GridSpec, fit_santisteban, fit_tremsin, fit_xcorr_strain,
                       estimate_strain_gp, simulate_spectrum)
from braggedge.lsq import TREMSIN_HALF_WIDTH, steepest_rise
from braggedge.xcorr import sg_config_for_noise

MICRO = 1e6


def main(noise_scale=1.0, seed=1):
    rng = np.random.default_rng(seed)
    lam = GridSpec().points()
    lambda0 = GridSpec().center
    true_strain = 1.5e-3
    params = EdgeParams(lambda0 * (1 + true_strain), sigma_B=0.009, tau=0.006)
    spectrum = simulate_spectrum(params, lam, noise_scale=noise_scale, rng=rng)
    # the noiseless stress-free profile, carrying the same noise level
    reference = simulate_spectrum(EdgeParams(lambda0, 0.009, 0.006), lam, noise_scale=0)
    if spectrum.noise_std is not None:
        reference = reference.with_noise_std(spectrum.noise_std)

    c = steepest_rise(spectrum)
    estimates = {
        "santisteban": fit_santisteban(spectrum, lambda0)[1],
        "tremsin": fit_tremsin(spectrum, lambda0,
                               window=(c - TREMSIN_HALF_WIDTH, c + TREMSIN_HALF_WIDTH))[1],
        "xcorr": fit_xcorr_strain(spectrum, reference, sg=sg_config_for_noise(noise_scale),
                                  lambda0=lambda0),
        "gp": estimate_strain_gp(spectrum, reference, rng=rng, n_starts=1),
    }
    print(f"true strain {true_strain * MICRO:.1f} ue, noise scale {noise_scale:g}")
    print(f"{'method':<12} {'strain':>10} {'error':>9} {'pred std':>9}")
    for name, est in estimates.items():
        print(f"{name:<12} {est.strain_mean * MICRO:10.1f} "
              f"{(est.strain_mean - true_strain) * MICRO:9.1f} {est.strain_std * MICRO:9.1f}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 1.0)
