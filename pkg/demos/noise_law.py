"""Recover the transmission-dependent variance law from residuals.

Residuals are drawn at the 24x24 macro-pixel noise level, binned by true
transmission, fitted per bin, and regressed as ``std**2 = a + b Tr``.
"""

import numpy as np

from braggedge import SIGMA_24, bin_residuals, fit_gaussian_bin, fit_variance_model
from braggedge.simulate import sample_noise


def main(n=100_000, seed=0):
    rng = np.random.default_rng(seed)
    tr = rng.uniform(0.1, 0.75, n)
    e, _ = sample_noise(tr, SIGMA_24, 1.0, rng)
    bins, dropped = bin_residuals(tr, e, np.arange(0.1, 0.751, 0.05))
    print(f"{'bin':>13} {'count':>6} {'mean':>10} {'std':>9}")
    for b in bins:
        fit = fit_gaussian_bin(b)
        print(f"[{b.low:.2f}, {b.high:.2f}) {b.count:6d} {fit.mean:10.2e} {fit.std:9.2e}")
    model = fit_variance_model([b.mid for b in bins], [b.fitted_std for b in bins])
    print(f"dropped {dropped}")
    print(f"fitted a = {model.a:.4e} (true {SIGMA_24.a:.4e})")
    print(f"fitted b = {model.b:.4e} (true {SIGMA_24.b:.4e})")


if __name__ == "__main__":
    main()
