"""Cross-correlation strain estimate.

Smoothed derivatives of the strained and stress-free spectra are
cross-correlated; a pseudo-Voigt fitted to the correlation peak gives the
edge displacement, and strain is that displacement over ``lambda0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .errors import InsufficientDataError, InvalidArgumentError, MethodFailureError
from .lm import central_difference_jacobian, fisher_covariance, levenberg_marquardt
from .results import StrainEstimate
from .spectrum import TransmissionSpectrum, VoigtParams, pseudo_voigt

#: Half-width of the Voigt fit window, in grid pitches.
FIT_HALF_WIDTH = 20
#: Initial Lorentzian and Gaussian widths, in grid pitches.
INIT_WIDTH = 4.0
INIT_MU = 0.5
VOIGT_MAX_ITER = 2000
#: Cap on both Voigt widths, in pitches.
MAX_WIDTH = 150.0
#: The shape parameters wander along a nearly flat valley long after the
#: centre has settled; tighter tolerances only burn evaluations.
VOIGT_TOL = 1e-8
VOIGT_NAMES = ("delta_hkl", "A", "mu", "w_l", "w_g", "y0")


@dataclass(frozen=True)
class SGConfig:
    """Savitzky-Golay first-derivative filter settings."""

    window_length: int = 25
    polynomial_order: int = 3
    derivative_order: int = 1

    def __post_init__(self):
        w, p = int(self.window_length), int(self.polynomial_order)
        if w != self.window_length or p != self.polynomial_order:
            raise InvalidArgumentError("window_length and polynomial_order must be integers")
        if self.derivative_order != 1:
            raise InvalidArgumentError("only first derivatives are supported")
        if p < 1:
            raise InvalidArgumentError("polynomial_order must be >= 1")
        if w % 2 == 0:
            raise InvalidArgumentError("window_length must be odd")
        if w <= p + 1:
            raise InvalidArgumentError("window_length must exceed polynomial_order + 1")


#: Hand-tuned settings for the three standard noise levels (noise scale
#: relative to 24x24 macro pixels).
SG_DEFAULTS = {
    0.1: SGConfig(15, 3),
    1.0: SGConfig(25, 3),
    10.0: SGConfig(41, 2),
}


def sg_config_for_noise(noise_scale):
    """Default filter for the standard level nearest (in log) to ``noise_scale``."""
    if noise_scale <= 0:
        return SG_DEFAULTS[0.1]
    levels = np.array(sorted(SG_DEFAULTS))
    k = int(np.argmin(np.abs(np.log(levels) - np.log(noise_scale))))
    return SG_DEFAULTS[float(levels[k])]


@dataclass
class CorrelationCurve:
    lags: np.ndarray
    values: np.ndarray

    @property
    def pitch(self):
        return float(self.lags[1] - self.lags[0]) if self.lags.size > 1 else 0.0


def savitzky_golay_derivative(spectrum, config=SGConfig()):
    """First derivative (per Å) of a uniformly sampled spectrum.

    The terminal half-windows are handled by fitting one polynomial to each
    end window and differentiating it.
    """
    if not spectrum.is_uniform():
        raise InvalidArgumentError("Savitzky-Golay derivative needs a uniform grid")
    if len(spectrum) < config.window_length:
        raise InsufficientDataError(
            f"{len(spectrum)} samples is fewer than window_length={config.window_length}")
    return savgol_filter(spectrum.values, config.window_length, config.polynomial_order,
                         deriv=1, delta=spectrum.pitch, mode="interp")


def _normalise(x):
    x = np.asarray(x, dtype=float) - np.median(x)
    norm = np.sqrt(np.dot(x, x))
    if norm == 0:
        raise InvalidArgumentError("cannot correlate a constant series")
    return x / norm


def cross_correlate(deriv, deriv0, max_lag, pitch=1.0):
    """Normalised cross-correlation ``c(k) = sum_i x[i + k] y[i]``.

    A positive lag means ``deriv`` sits to the right of ``deriv0``.  Both
    series have their baseline level (the median) removed and are scaled to
    unit energy, so identical inputs peak at exactly 1.  Removing the
    arithmetic mean instead would add a tent ``c**2 * (n - |k|)`` centred on
    zero lag and pull the peak towards zero.
    """
    x, y = np.asarray(deriv, dtype=float), np.asarray(deriv0, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError("derivative series must be 1-D with equal length")
    n = x.size
    max_lag = int(max_lag)
    if not 0 <= max_lag < n / 2:
        raise InvalidArgumentError(f"max_lag must lie in [0, n/2), got {max_lag} for n={n}")
    full = np.correlate(_normalise(x), _normalise(y), mode="full")
    mid = n - 1
    k = np.arange(-max_lag, max_lag + 1)
    return CorrelationCurve(k * float(pitch), full[mid + k])


def _voigt_start(curve, i_peak, lo, hi):
    lags, vals = curve.lags[lo:hi], curve.values[lo:hi]
    pitch = curve.pitch
    y0 = float(vals.min())
    height = float(curve.values[i_peak]) - y0
    w = INIT_WIDTH * pitch
    unit_peak = (INIT_MU * 2.0 * np.pi / w
                 + (1 - INIT_MU) * np.sqrt(4 * np.log(2) / np.pi) / w)
    return lags, vals, [float(curve.lags[i_peak]), height / unit_peak, INIT_MU, w, w, y0]


def _voigt_model(x, p):
    return pseudo_voigt(x, VoigtParams(p[0], p[1], float(np.clip(p[2], 0.0, 1.0)),
                                       min(abs(p[3]), MAX_WIDTH) + 1e-12,
                                       min(abs(p[4]), MAX_WIDTH) + 1e-12, p[5]))


def _lm(model, p0, x, y):
    return levenberg_marquardt(model, p0, x, y, names=VOIGT_NAMES[:len(p0)],
                               max_iter=VOIGT_MAX_ITER, ftol=VOIGT_TOL, xtol=VOIGT_TOL)


def _tidy(p):
    p = np.array(p, dtype=float)
    p[2] = np.clip(p[2], 0.0, 1.0)
    p[3:5] = np.minimum(np.abs(p[3:5]), MAX_WIDTH)
    return p


def _pinned(p):
    """Indices of parameters that have no effect at ``p`` (pitch units)."""
    out = set()
    if p[2] <= 0.0:
        out |= {2, 3}
    elif p[2] >= 1.0:
        out |= {2, 4}
    out |= {i for i in (3, 4) if abs(p[i]) >= MAX_WIDTH}
    return sorted(out)


def fit_correlation_peak(curve, half_width=FIT_HALF_WIDTH):
    """Pseudo-Voigt fit to the correlation peak.

    The fit runs in grid-pitch units.  The window often spans only the top of
    a broad peak; there the Lorentzian width and amplitude can run off
    together towards a parabola, so both widths are capped at
    ``MAX_WIDTH`` pitches.  A mixing fraction on 0 or 1, or a width on the
    cap, leaves that parameter without effect; the Fisher covariance is then
    formed over the remaining parameters and the pinned ones get zero
    variance.

    Returns ``(FitResult, at_bound)`` with ``at_bound`` true when the discrete
    peak sits on the outermost lag.
    """
    i_peak = int(np.argmax(curve.values))
    at_bound = i_peak in (0, curve.values.size - 1)
    lo = max(0, i_peak - half_width)
    hi = min(curve.values.size, i_peak + half_width + 1)
    if hi - lo < 7:
        raise MethodFailureError("correlation peak window holds fewer than 7 lags")
    lags, vals, p0 = _voigt_start(curve, i_peak, lo, hi)
    s = curve.pitch
    scale = np.array([s, s, 1.0, s, s, 1.0])
    x = lags / s

    def model(x, q):
        return _voigt_model(x * s, q * scale)

    fit = _lm(model, np.asarray(p0) / scale, x, vals)
    p = _tidy(fit.params)
    free = [i for i in range(6) if i not in _pinned(p)]
    if not fit.converged and len(free) < 6:
        # ineffective parameters stall the damping; refit without them
        def reduced(x, q):
            full = p.copy()
            full[free] = q
            return model(x, full)

        sub = _lm(reduced, p[free], x, vals)
        p[free] = sub.params
        p = _tidy(p)
        fit.converged = sub.converged
        fit.residual_norm = sub.residual_norm
        fit.iterations += sub.iterations
        fit.cost_history += sub.cost_history
    if not fit.converged:
        raise MethodFailureError("pseudo-Voigt fit did not converge",
                                 diagnostics={"iterations": fit.iterations})
    free = [i for i in range(6) if i not in _pinned(p)]
    J = central_difference_jacobian(model, x, p, columns=free)
    sub = fisher_covariance(J[:, free], fit.residual_norm)
    cov = None
    if sub is not None:
        cov = np.zeros((6, 6))
        cov[np.ix_(free, free)] = sub
        cov *= np.outer(scale, scale)
    fit.params = p * scale
    fit.covariance = cov
    return fit, at_bound


def _reference_values(spectrum, reference):
    if isinstance(reference, TransmissionSpectrum):
        if len(reference) != len(spectrum) or not np.allclose(
                reference.wavelengths, spectrum.wavelengths, rtol=0, atol=1e-9 * spectrum.pitch):
            raise InvalidArgumentError("spectrum and reference must share a wavelength grid")
        return reference
    values = np.asarray(reference, dtype=float)
    if values.shape != spectrum.values.shape:
        raise InvalidArgumentError("reference profile must match the spectrum's grid")
    return TransmissionSpectrum(spectrum.wavelengths, values)


def fit_xcorr_strain(spectrum, reference, sg=SGConfig(), lambda0=None, max_lag=None,
                     half_width=FIT_HALF_WIDTH):
    """Strain from the displacement of the derivative cross-correlation peak.

    Parameters
    ----------
    spectrum : TransmissionSpectrum
    reference : TransmissionSpectrum or array_like
        Stress-free spectrum, or its transmission values on the same grid.
    sg : SGConfig
    lambda0 : float, optional
        Stress-free edge wavelength; defaults to the reference's steepest
        smoothed rise.
    max_lag : int, optional
        Largest lag in grid steps (default ``n // 4``).

    Returns
    -------
    StrainEstimate
        ``details`` carries the correlation curve and the Voigt fit.
    """
    ref = _reference_values(spectrum, reference)
    d = savitzky_golay_derivative(spectrum, sg)
    d0 = savitzky_golay_derivative(ref, sg)
    if lambda0 is None:
        lambda0 = float(spectrum.wavelengths[int(np.argmax(d0))])
    if lambda0 <= 0:
        raise InvalidArgumentError("lambda0 must be positive")
    n = len(spectrum)
    max_lag = n // 4 if max_lag is None else int(max_lag)
    curve = cross_correlate(d, d0, max_lag, spectrum.pitch)
    fit, at_bound = fit_correlation_peak(curve, half_width)

    delta = float(fit["delta_hkl"])
    est = StrainEstimate(delta / lambda0, fit.std("delta_hkl") / lambda0, "xcorr")
    if at_bound or not curve.lags[0] <= delta <= curve.lags[-1]:
        est.flags.add("suspicious")
    if fit.covariance is None:
        est.flags.add("covariance-unavailable")
    est.details.update({"fit": fit, "curve": curve, "lambda0": lambda0})
    return est


def write_correlation_csv(path, curve, fit=None):
    """Columns ``lag, correlation, voigt`` (empty when no fit is given)."""
    model = None
    if fit is not None:
        p = fit.params
        model = pseudo_voigt(curve.lags, VoigtParams(*p))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "correlation", "voigt"])
        for i, (lag, c) in enumerate(zip(curve.lags, curve.values)):
            w.writerow([repr(float(lag)), repr(float(c)),
                        "" if model is None else repr(float(model[i]))])
