"""Strain from a Gaussian-process edge fit.

The edge shape is fitted non-parametrically between exponential baselines;
strain follows from the shift of the wavelength at which the edge gradient
peaks.  Uncertainty comes from Monte Carlo draws of the posterior gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, stats

from .errors import (ConditioningError, FitFailureError, InsufficientDataError,
                     InvalidArgumentError, MethodFailureError)
from .gp import KINDS, GPEdgeProblem, Kernel, cholesky_jitter, gp_condition, optimize_hyperparameters
from .noise import default_windows, fit_exponential_baseline
from .results import StrainEstimate
from .spectrum import TransmissionSpectrum, baseline_curves

#: Prediction-grid refinement relative to the measurement pitch.
GRID_REFINE = 16
#: Half-width of the prediction grid, in measurement pitches, around the
#: posterior-mean gradient peak.
GRID_HALF_WIDTH = 32
N_SAMPLES = 1000


@dataclass
class EdgeFitGP:
    baselines: tuple
    problem: GPEdgeProblem
    posterior: "GPEdgePosterior"
    grid: np.ndarray
    hyper: object = None

    @property
    def kernel(self):
        return self.problem.kernel

    @property
    def zeta_mean(self):
        """Location of the peak of the posterior-mean gradient."""
        return float(self.grid[int(np.argmax(self.posterior.mean_g))])


@dataclass
class ZetaSamples:
    values: np.ndarray
    grid_pitch: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.size == 0:
            raise InvalidArgumentError("ZetaSamples must not be empty")

    def __len__(self):
        return self.values.size


def lattice(lo, hi, step):
    """Points ``k * step`` inside ``[lo, hi]``; shared by every fit at ``step``."""
    k0 = int(np.ceil(lo / step - 1e-9))
    k1 = int(np.floor(hi / step + 1e-9))
    return step * np.arange(k0, k1 + 1)


def edge_problem(spectrum, baselines, window, kernel=Kernel(), noise_std=None):
    """Shifted measurements ``y - gamma1`` and map ``A = gamma2 - gamma1``."""
    std = spectrum.noise_std if noise_std is None else np.broadcast_to(
        np.asarray(noise_std, dtype=float), spectrum.values.shape)
    if std is None:
        raise InvalidArgumentError("the GP edge fit needs per-point noise_std")
    m = spectrum.mask(window)
    lam = spectrum.wavelengths[m]
    gamma1, gamma2 = baseline_curves(lam, *baselines)
    return GPEdgeProblem(lam, spectrum.values[m] - gamma1, gamma2 - gamma1,
                         np.asarray(std)[m], kernel)


def fit_edge_gp(spectrum, left=None, right=None, kernel_candidates=KINDS, kernel=None,
                data_window=None, grid=None, refine=GRID_REFINE,
                half_width=GRID_HALF_WIDTH, n_starts=5, seed=0,
                optimize_noise=False, noise_std=None):
    """Fit baselines, then a GP edge shape, and condition ``B`` and ``g``.

    Parameters
    ----------
    spectrum : TransmissionSpectrum
    left, right : (float, float), optional
        Baseline windows either side of the edge (default outer quarters).
    kernel_candidates : sequence
        Kernel kinds (or :class:`Kernel` starting points) to select from.
    kernel : Kernel, optional
        Use these hyperparameters as-is and skip optimisation.
    data_window : (float, float), optional
        Measurements fed to the GP; defaults to the span between the baseline
        windows.
    grid : array_like, optional
        Prediction grid.  By default a lattice at ``pitch / refine`` covering
        ``half_width`` measurement pitches either side of the peak of the
        posterior-mean gradient.
    noise_std : float or array_like, optional
        Overrides (or supplies) the spectrum's noise standard deviations.

    Raises
    ------
    MethodFailureError
        When a baseline fit fails, the GP cannot be conditioned, or (default
        grid only) the posterior-mean gradient peaks within ``half_width``
        pitches of either end of the data, i.e. no edge is resolved inside
        the data window.
    """
    dl, dr = default_windows(spectrum)
    left = dl if left is None else tuple(left)
    right = dr if right is None else tuple(right)
    if left[1] >= right[0]:
        raise InvalidArgumentError("left window must lie entirely left of the right window")
    try:
        post = fit_exponential_baseline(spectrum, right)
    except (FitFailureError, InsufficientDataError) as exc:
        raise MethodFailureError(str(exc), stage=1) from exc
    try:
        pre = fit_exponential_baseline(spectrum, left, composed=True, base=(post.a, post.b))
    except (FitFailureError, InsufficientDataError) as exc:
        raise MethodFailureError(str(exc), stage=2) from exc
    baselines = (post.a, post.b, pre.a, pre.b)

    window = (left[1], right[0]) if data_window is None else tuple(data_window)
    problem = edge_problem(spectrum, baselines, window, noise_std=noise_std)
    if problem.n < 3:
        raise MethodFailureError("fewer than 3 measurements in the GP data window", stage=3)
    try:
        if kernel is None:
            hyper = optimize_hyperparameters(problem, kernel_candidates, n_starts=n_starts,
                                             seed=seed, optimize_noise=optimize_noise)
            problem = problem.with_kernel(hyper.kernel, hyper.noise_scale)
        else:
            hyper = None
            problem = problem.with_kernel(kernel)

        if grid is None:
            lam = problem.lambdas
            pitch = spectrum.pitch
            coarse = gp_condition(problem, lam, full_cov_B=False)
            # search away from the window ends so a peak there shows up as a
            # boundary maximum of the prediction grid rather than a false edge
            band = (lam[0] + half_width * pitch, lam[-1] - half_width * pitch)
            inner = (lam >= band[0]) & (lam <= band[1])
            if not inner.any():
                inner[:] = True
                band = (lam[0], lam[-1])
            peak = float(lam[inner][int(np.argmax(coarse.mean_g[inner]))])
            grid = lattice(max(peak - half_width * pitch, window[0]),
                           min(peak + half_width * pitch, window[1]), pitch / refine)
            posterior = gp_condition(problem, grid, full_cov_B=False)
            zeta = grid[int(np.argmax(posterior.mean_g))]
            if not band[0] - 0.5 * pitch <= zeta <= band[1] + 0.5 * pitch:
                raise MethodFailureError(
                    "no interior gradient peak: the edge is not resolved inside the data "
                    f"window (peak at {zeta:.5f}, kernel {problem.kernel})", stage=3)
        else:
            grid = np.asarray(grid, dtype=float)
            posterior = gp_condition(problem, grid, full_cov_B=False)
    except ConditioningError as exc:
        raise MethodFailureError(str(exc), stage=3) from exc
    return EdgeFitGP(baselines, problem, posterior, grid, hyper)


def _sqrt_factor(cov):
    """A matrix ``F`` with ``F F^T = cov``: Cholesky, or eigen fallback."""
    try:
        L, _ = cholesky_jitter(cov)
        return L
    except ConditioningError:
        w, V = linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


def sample_zeta(posterior, n_samples=N_SAMPLES, rng=None):
    """Draw gradient curves from the posterior and record each one's argmax.

    Ties resolve to the lowest grid index.
    """
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    grid = posterior.grid
    pitch = float(np.median(np.diff(grid))) if grid.size > 1 else 0.0
    if np.max(np.diag(posterior.cov_g), initial=0.0) == 0.0:
        idx = np.full(n_samples, int(np.argmax(posterior.mean_g)))
        return ZetaSamples(grid[idx], pitch)
    F = _sqrt_factor(posterior.cov_g)
    z = rng.standard_normal((n_samples, grid.size))
    draws = posterior.mean_g[None, :] + z @ F.T
    return ZetaSamples(grid[np.argmax(draws, axis=1)], pitch)


def is_bimodal(zeta, separation=10, min_mass=0.2):
    """Two histogram modes more than ``separation`` grid pitches apart, each
    holding more than ``min_mass`` of the samples."""
    v = zeta.values
    if v.size < 2 or zeta.grid_pitch <= 0:
        return False
    k = np.rint((v - v.min()) / zeta.grid_pitch).astype(int)
    counts = np.bincount(k).astype(float)
    width = max(1, separation // 2)
    smooth = np.convolve(counts, np.ones(2 * width + 1), mode="same")
    peaks = [i for i in range(smooth.size)
             if smooth[i] > 0
             and smooth[i] >= smooth[max(i - 1, 0)] and smooth[i] >= smooth[min(i + 1, smooth.size - 1)]]
    if len(peaks) < 2:
        return False
    peaks.sort(key=lambda i: -smooth[i])
    p1 = peaks[0]
    far = [p for p in peaks[1:] if abs(p - p1) > separation]
    if not far:
        return False
    p2 = far[0]
    lo, hi = sorted((p1, p2))
    split = lo + int(np.argmin(smooth[lo:hi + 1]))
    below = counts[:split].sum() / v.size
    above = counts[split:].sum() / v.size
    return bool(below > min_mass and above > min_mass)


def strain_distribution(zeta, zeta0):
    """Monte Carlo strain samples ``(zeta - zeta0) / zeta0``.

    ``zeta0`` is either a scalar (noiseless reference) or paired samples of
    the same length.
    """
    z = zeta.values
    if isinstance(zeta0, ZetaSamples):
        if len(zeta0) != len(zeta):
            raise InvalidArgumentError("paired zeta samples must have equal counts")
        z0 = zeta0.values
    else:
        z0 = np.full(z.shape, float(zeta0))
    if np.any(~np.isfinite(z0)) or np.any(z0 <= 0):
        raise InvalidArgumentError("zeta0 must be a positive wavelength")
    est = StrainEstimate.from_samples((z - z0) / z0, "gp")
    if is_bimodal(zeta):
        est.flags.add("bimodal")
    return est


def estimate_strain_gp(spectrum, reference, n_samples=N_SAMPLES, rng=None,
                       zeta0_mode="noiseless", **fit_kwargs):
    """End-to-end GP strain estimate.

    Parameters
    ----------
    spectrum : TransmissionSpectrum
        Measurement of the (possibly) strained edge.
    reference : TransmissionSpectrum or float
        Stress-free spectrum, or its gradient-peak location directly.
    zeta0_mode : {"noiseless", "sampled"}
        ``"noiseless"`` conditions a GP with the measured spectrum's kernel on
        the reference and takes the peak of its posterior-mean gradient;
        ``"sampled"`` fits the reference independently and pairs Monte Carlo
        draws index by index.
    """
    rng = np.random.default_rng() if rng is None else rng
    fit = fit_edge_gp(spectrum, **fit_kwargs)
    zeta = sample_zeta(fit.posterior, n_samples, rng)
    ref_fit = None
    if isinstance(reference, TransmissionSpectrum):
        ref_kwargs = {k: v for k, v in fit_kwargs.items() if k in ("left", "right", "data_window",
                                                                  "refine", "half_width")}
        ref_std = None
        if reference.noise_std is None:
            # borrow the measured spectrum's noise level (or its override)
            ref_std = fit_kwargs.get("noise_std")
            if ref_std is None:
                ref_std = spectrum.noise_std
            if ref_std is not None and np.ndim(ref_std) > 0:
                ref_std = float(np.median(ref_std))
        if zeta0_mode == "noiseless":
            ref_fit = fit_edge_gp(reference, kernel=fit.kernel, noise_std=ref_std, **ref_kwargs)
            zeta0 = ref_fit.zeta_mean
        elif zeta0_mode == "sampled":
            ref_fit = fit_edge_gp(reference, noise_std=ref_std,
                                  kernel_candidates=fit_kwargs.get("kernel_candidates", KINDS),
                                  **ref_kwargs)
            zeta0 = sample_zeta(ref_fit.posterior, n_samples, rng)
        else:
            raise InvalidArgumentError(f"unknown zeta0_mode {zeta0_mode!r}")
    else:
        zeta0 = float(reference)
    est = strain_distribution(zeta, zeta0)
    est.details.update({"fit": fit, "reference_fit": ref_fit, "zeta": zeta, "zeta0": zeta0})
    return est


@dataclass
class HistogramReport:
    edges: np.ndarray
    counts: np.ndarray
    overlay: np.ndarray
    ks_statistic: float
    ks_pvalue: float

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center", "count", "gaussian_overlay"])
            for c, n, g in zip(self.centers, self.counts, self.overlay):
                w.writerow([repr(float(c)), int(n), repr(float(g))])


def strain_histogram_report(estimate, bins=50):
    """Histogram of strain samples with the moment-matched Gaussian overlay.

    The overlay is expressed in expected counts per bin; the KS statistic
    compares the samples against the same Gaussian.
    """
    if estimate.samples is None or estimate.samples.size == 0:
        raise InvalidArgumentError("estimate carries no samples")
    s = estimate.samples
    counts, edges = np.histogram(s, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = np.diff(edges)
    mu, sd = estimate.strain_mean, estimate.strain_std
    if sd > 0:
        overlay = s.size * width * stats.norm.pdf(centers, mu, sd)
        ks = stats.kstest(s, "norm", args=(mu, sd))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        overlay = np.where(counts > 0, counts, 0).astype(float)
        ks_stat, ks_p = 0.0, 1.0
    return HistogramReport(edges, counts, overlay, ks_stat, ks_p)
