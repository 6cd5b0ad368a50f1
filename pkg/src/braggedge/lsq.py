"""Parametric edge fitting: the three-stage Santisteban fit and the
five-parameter Tremsin fit.

Both report strain against a known stress-free edge location ``lambda0``
with an uncertainty taken from the Fisher covariance of ``lambda_hkl``.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import FitFailureError, InsufficientDataError, InvalidArgumentError, MethodFailureError
from .lm import central_difference_jacobian, fisher_covariance, levenberg_marquardt
from .noise import default_windows, fit_exponential_baseline
from .results import StrainEstimate
from .spectrum import VogelParams, kropff_edge, transmission_from_edge, vogel_edge

INIT_SIGMA_B = 5e-3
INIT_TAU = 5e-3
INIT_ALPHA = 150.0
INIT_BETA = 80.0
RESTART_OFFSETS = (0.0, -0.02, 0.02)
TREMSIN_HALF_WIDTH = 0.1
FLAT_COLUMN_RTOL = 1e-9


def steepest_rise(spectrum, window=None, smooth=9):
    """Wavelength of the largest finite-difference slope after a running mean."""
    lam, y = spectrum.wavelengths, spectrum.values
    ys = uniform_filter1d(y, size=min(smooth, y.size), mode="nearest")
    slope = np.gradient(ys, lam)
    if window is not None:
        m = spectrum.mask(window)
        slope = np.where(m, slope, -np.inf)
    return float(lam[int(np.argmax(slope))])


def _weights(spectrum, mask):
    return None if spectrum.noise_std is None else spectrum.noise_std[mask] ** -2


def _check_windows(spectrum, left, right, edge):
    for name, w in (("left", left), ("right", right), ("edge", edge)):
        if w[0] >= w[1]:
            raise InvalidArgumentError(f"{name} window must have low < high")
        if spectrum.mask(w).sum() < 3:
            raise InsufficientDataError(f"{name} window holds fewer than 3 points")
    if left[1] >= right[0]:
        raise InvalidArgumentError("left window must lie entirely left of the right window")


def _fit_multistart(model, starts, lam, y, weights, names):
    best = None
    for p0 in starts:
        fit = levenberg_marquardt(model, p0, lam, y, weights=weights, names=names)
        # strict comparison keeps the earliest start on ties
        if best is None or (fit.converged and (not best.converged
                                               or fit.residual_norm < best.residual_norm)):
            best = fit
    return best


def _pinned_covariance(fit, model, lam, weights, nonneg):
    """Fisher covariance with ineffective parameters held fixed.

    A non-negative parameter stuck at zero (it enters through ``abs``), or
    one whose Jacobian column has underflowed to nothing (the Kropff tail
    term vanishes like ``exp(-sigma_B**2 / 2 tau**2)`` as ``tau -> 0``),
    makes the normal matrix singular.  Such parameters get zero variance;
    the rest are computed as usual.
    """
    if fit.covariance is not None:
        return fit.covariance, []
    p = fit.params
    J = central_difference_jacobian(model, lam, p)
    if weights is not None:
        J = J * np.sqrt(weights)[:, None]
    scaled = np.linalg.norm(J, axis=0) * np.maximum(np.abs(p), 1e-3)
    step = 1e-7 * np.maximum(np.abs(p), 1e-3)
    pinned = [i for i in range(p.size)
              if scaled[i] <= FLAT_COLUMN_RTOL * scaled.max()
              or (i in nonneg and abs(p[i]) <= step[i])]
    free = [i for i in range(p.size) if i not in pinned]
    sub = fisher_covariance(J[:, free], fit.residual_norm) if pinned and free else None
    if sub is None:
        return None, pinned
    cov = np.zeros((p.size, p.size))
    cov[np.ix_(free, free)] = sub
    return cov, pinned


def _strain(fit, lambda0, window, method, extra=None):
    lam_hkl = float(np.clip(fit["lambda_hkl"], *window))
    est = StrainEstimate((lam_hkl - lambda0) / lambda0, fit.std("lambda_hkl") / lambda0, method)
    # a location indistinguishable from a window bound means the window
    # probably does not contain the edge
    margin = 3.0 * fit.std("lambda_hkl")
    margin = margin if np.isfinite(margin) else 0.0
    if not (window[0] + margin < fit["lambda_hkl"] < window[1] - margin):
        est.flags.add("suspicious")
    if fit.covariance is None:
        est.flags.add("covariance-unavailable")
    est.details["fit"] = fit
    if extra:
        est.details.update(extra)
    return est


def fit_santisteban(spectrum, lambda0, left=None, right=None, edge=None,
                    edge_model="kropff"):
    """Three-stage fit of the edge between two exponential baselines.

    Stage 1 fits ``(a0, b0)`` on the right window, stage 2 ``(a_hkl, b_hkl)``
    on the left window with stage 1 held, stage 3 the edge parameters on the
    edge window with both baselines held.

    Parameters
    ----------
    spectrum : TransmissionSpectrum
    lambda0 : float
        Stress-free edge location (Å).
    left, right, edge : (float, float), optional
        Wavelength windows; defaults are the outer quarters and the full
        range respectively.
    edge_model : {"kropff", "vogel"}

    Returns
    -------
    (FitResult, StrainEstimate)
        The stage-3 fit and the strain relative to ``lambda0``.
    """
    dl, dr = default_windows(spectrum)
    left = dl if left is None else tuple(left)
    right = dr if right is None else tuple(right)
    edge = (spectrum.wavelengths[0], spectrum.wavelengths[-1]) if edge is None else tuple(edge)
    _check_windows(spectrum, left, right, edge)

    try:
        post = fit_exponential_baseline(spectrum, right)
    except FitFailureError as exc:
        raise MethodFailureError(str(exc), stage=1, diagnostics=exc.diagnostics) from exc
    try:
        pre = fit_exponential_baseline(spectrum, left, composed=True, base=(post.a, post.b))
    except FitFailureError as exc:
        raise MethodFailureError(str(exc), stage=2, diagnostics=exc.diagnostics) from exc
    baselines = (post.a, post.b, pre.a, pre.b)
    return fit_edge_stage(spectrum, lambda0, baselines, edge, edge_model)


def fit_edge_stage(spectrum, lambda0, baselines, edge, edge_model="kropff"):
    """Stage 3 of the Santisteban fit with the baselines held fixed."""
    m = spectrum.mask(edge)
    lam, y = spectrum.wavelengths[m], spectrum.values[m]
    lo, hi = edge

    if edge_model == "kropff":
        names = ("lambda_hkl", "sigma_B", "tau")

        def model(x, p):
            B = kropff_edge(x, np.clip(p[0], lo, hi), abs(p[1]) + 1e-12, abs(p[2]))
            return transmission_from_edge(x, B, *baselines)

        shape0 = [INIT_SIGMA_B, INIT_TAU]
    elif edge_model == "vogel":
        names = ("lambda_hkl", "sigma_B", "alpha", "beta")

        def model(x, p):
            vp = VogelParams(np.clip(p[0], lo, hi), abs(p[1]) + 1e-12,
                             abs(p[2]) + 1e-12, abs(p[3]) + 1e-12)
            return transmission_from_edge(x, vogel_edge(x, vp), *baselines)

        shape0 = [INIT_SIGMA_B, INIT_ALPHA, INIT_BETA]
    else:
        raise InvalidArgumentError(f"unknown edge model {edge_model!r}")

    lam_init = steepest_rise(spectrum, edge)
    starts = [[lam_init + d] + shape0 for d in RESTART_OFFSETS]
    fit = _fit_multistart(model, starts, lam, y, _weights(spectrum, m), names)
    if not fit.converged:
        raise MethodFailureError("edge fit did not converge", stage=3,
                                 diagnostics={"iterations": fit.iterations})
    fit.params[1:] = np.abs(fit.params[1:])
    fit.covariance, pinned = _pinned_covariance(fit, model, lam, _weights(spectrum, m),
                                                range(1, len(names)))
    extra = {"baselines": baselines, "pinned": [names[i] for i in pinned]}
    return fit, _strain(fit, lambda0, edge, "santisteban", extra)


def fit_tremsin(spectrum, lambda0, window=None):
    """Single-stage fit of ``h * B_kropff + b`` over a tightly cropped window.

    The default window is ``TREMSIN_HALF_WIDTH`` either side of the steepest
    rise in the spectrum.
    """
    if window is None:
        c = steepest_rise(spectrum)
        window = (c - TREMSIN_HALF_WIDTH, c + TREMSIN_HALF_WIDTH)
    window = tuple(window)
    m = spectrum.mask(window)
    if m.sum() < 8:
        raise InsufficientDataError("Tremsin fit needs at least 8 points in the window")
    lam, y = spectrum.wavelengths[m], spectrum.values[m]
    lo, hi = window
    names = ("lambda_hkl", "sigma_B", "tau", "h", "b")

    def model(x, p):
        B = kropff_edge(x, np.clip(p[0], lo, hi), abs(p[1]) + 1e-12, abs(p[2]))
        return p[3] * B + p[4]

    k = max(3, lam.size // 10)
    ys = uniform_filter1d(y, size=min(9, y.size), mode="nearest")
    b0 = float(np.mean(ys[:k]))
    h0 = float(np.mean(ys[-k:])) - b0
    lam_init = steepest_rise(spectrum, window)
    starts = [[lam_init + d, INIT_SIGMA_B, INIT_TAU, h0, b0] for d in RESTART_OFFSETS]
    fit = _fit_multistart(model, starts, lam, y, _weights(spectrum, m), names)
    if not fit.converged:
        raise MethodFailureError("Tremsin fit did not converge",
                                 diagnostics={"iterations": fit.iterations})
    fit.params[1:3] = np.abs(fit.params[1:3])
    fit.covariance, pinned = _pinned_covariance(fit, model, lam, _weights(spectrum, m), (1, 2))
    return fit, _strain(fit, lambda0, window, "tremsin", {"pinned": [names[i] for i in pinned]})
