"""Posterior strain distribution from the Gaussian-process edge fit.

Prints the hyperparameters, the strain mean and std, and an ASCII histogram
of the Monte Carlo strain samples with the matching Gaussian overlay.
"""

import numpy as np

from braggedge import EdgeParams, GridSpec, estimate_strain_gp, simulate_spectrum
from braggedge import strain_histogram_report

MICRO = 1e6


def main(seed=3):
    rng = np.random.default_rng(seed)
    lam = GridSpec().points()
    lambda0 = GridSpec().center
    spectrum = simulate_spectrum(EdgeParams(lambda0 * 0.9992, 0.012, 0.004), lam, rng=rng)
    reference = simulate_spectrum(EdgeParams(lambda0, 0.012, 0.004), lam, noise_scale=0)
    est = estimate_strain_gp(spectrum, reference, n_samples=2000, rng=rng, n_starts=1)
    k = est.details["fit"].kernel
    print(f"kernel {k.kind}: sigma_f {k.sigma_f:.3g}, l {k.l:.3g} A")
    print(f"strain {est.strain_mean * MICRO:.1f} +/- {est.strain_std * MICRO:.1f} ue "
          f"(true -800.0)")
    rep = strain_histogram_report(est, bins=15)
    scale = 50 / max(rep.counts.max(), 1)
    for c, n, g in zip(rep.centers, rep.counts, rep.overlay):
        bar = "#" * int(round(n * scale))
        mark = int(round(g * scale))
        line = bar.ljust(max(mark, len(bar)) + 1)
        line = line[:mark] + "|" + line[mark + 1:] if mark < len(line) else line
        print(f"{c * MICRO:8.1f} {n:5d} {line}")


if __name__ == "__main__":
    main()
