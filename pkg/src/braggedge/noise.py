"""Noise analysis: how the additive transmission noise depends on Tr.

The procedure fits decaying exponentials to the spectrum away from the edge,
takes the residuals against those fits, bins them by transmission, fits a
Gaussian per bin and regresses the per-bin variance linearly on Tr.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FitFailureError, InsufficientDataError, InvalidArgumentError
from .lm import levenberg_marquardt
from .results import FitResult

VARIANCE_FLOOR = 1e-12

#: Per-bin (Tr midpoint, std) pairs read off the residual histograms of
#: 24x24-pixel macro-pixel data.
MACRO24_BINS = ((0.125, 4.79e-3), (0.325, 9.14e-3), (0.525, 1.20e-2), (0.725, 1.50e-2))


@dataclass(frozen=True)
class NoiseModel:
    """Linear variance law ``sigma^2 = a + b * Tr``."""

    a: float
    b: float

    def std(self, tr):
        return noise_std_at(self, tr)

    def to_json(self, **kwargs):
        return json.dumps({"a": self.a, "b": self.b}, **kwargs)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(float(d["a"]), float(d["b"]))


def noise_std_at(model, tr):
    """Noise standard deviation at transmission ``tr`` (floored variance)."""
    var = model.a + model.b * np.asarray(tr, dtype=float)
    out = np.sqrt(np.maximum(var, VARIANCE_FLOOR))
    return float(out) if out.ndim == 0 else out


class BaselineFit(NamedTuple):
    a: float
    b: float
    fit: FitResult


def _exponential(base):
    def model(lam, p):
        return base * np.exp(-(p[0] + p[1] * lam))

    def jac(lam, p):
        f = model(lam, p)
        return np.column_stack((-f, -lam * f))

    return model, jac


def fit_exponential_baseline(spectrum, window, composed=False, base=None):
    """Least-squares fit of ``exp(-(a + b lam))`` over ``window``.

    With ``composed=True`` the fitted curve is
    ``exp(-(a0 + b0 lam)) * exp(-(a + b lam))`` where ``base = (a0, b0)``
    comes from a previous right-hand fit; the returned ``(a, b)`` are then
    the additional pre-edge coefficients.

    Raises
    ------
    InsufficientDataError
        Fewer than three samples in the window.
    FitFailureError
        The optimiser did not converge.
    """
    if composed and base is None:
        raise InvalidArgumentError("composed fit needs base=(a0, b0)")
    m = spectrum.mask(window)
    if m.sum() < 3:
        raise InsufficientDataError(
            f"window {tuple(window)} holds {int(m.sum())} points, need >= 3")
    lam = spectrum.wavelengths[m]
    y = spectrum.values[m]
    prefactor = np.exp(-(base[0] + base[1] * lam)) if composed else np.ones_like(lam)
    weights = None if spectrum.noise_std is None else spectrum.noise_std[m] ** -2

    ratio = y / prefactor
    good = ratio > 0
    if good.sum() >= 2:
        b_init, a_init = np.polyfit(lam[good], -np.log(ratio[good]), 1)
    else:
        a_init, b_init = 0.0, 0.0
    model, jac = _exponential(prefactor)
    fit = levenberg_marquardt(model, [a_init, b_init], lam, y, weights=weights,
                              jac=jac, names=("a", "b"))
    if not fit.converged:
        raise FitFailureError("exponential baseline fit did not converge",
                              {"window": tuple(window), "iterations": fit.iterations,
                               "residual_norm": fit.residual_norm})
    return BaselineFit(float(fit.params[0]), float(fit.params[1]), fit)


@dataclass
class ResidualBin:
    """Residuals whose true transmission falls in ``[low, high)``."""

    low: float
    high: float
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0))
    fitted_mean: float = float("nan")
    fitted_std: float = float("nan")

    @property
    def mid(self):
        return 0.5 * (self.low + self.high)

    @property
    def count(self):
        return int(np.size(self.residuals))


class BinFit(NamedTuple):
    mean: float
    std: float

    @property
    def degenerate(self):
        return self.std == 0.0


def bin_residuals(tr_true, residuals, bin_edges):
    """Partition residuals by their true transmission.

    Bins are half-open ``[low, high)`` except the last, which is closed.

    Returns
    -------
    bins : list of ResidualBin
    n_dropped : int
        Residuals falling outside ``[bin_edges[0], bin_edges[-1]]``.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise InvalidArgumentError("bin_edges must be strictly increasing (>= 2 values)")
    tr = np.asarray(tr_true, dtype=float).ravel()
    e = np.asarray(residuals, dtype=float).ravel()
    if tr.shape != e.shape:
        raise InvalidArgumentError("tr_true and residuals must have equal length")
    idx = np.searchsorted(edges, tr, side="right") - 1
    idx[tr == edges[-1]] = edges.size - 2
    inside = (idx >= 0) & (idx < edges.size - 1)
    bins = [ResidualBin(float(lo), float(hi), e[inside & (idx == k)])
            for k, (lo, hi) in enumerate(zip(edges[:-1], edges[1:]))]
    return bins, int((~inside).sum())


def fit_gaussian_bin(residual_bin):
    """Sample mean and unbiased standard deviation of a bin's residuals.

    The fit is stored on the bin as well as returned.  A zero standard
    deviation is reported via ``BinFit.degenerate``.
    """
    e = np.asarray(residual_bin.residuals, dtype=float)
    if e.size < 2:
        raise InsufficientDataError(f"bin holds {e.size} residuals, need >= 2")
    mean = float(e.mean())
    std = float(e.std(ddof=1))
    residual_bin.fitted_mean, residual_bin.fitted_std = mean, std
    return BinFit(mean, std)


def fit_variance_model(tr_mid, std):
    """Ordinary least squares of ``std**2`` on ``tr_mid``."""
    x = np.asarray(tr_mid, dtype=float)
    s = np.asarray(std, dtype=float)
    if x.shape != s.shape or x.size < 2:
        raise InsufficientDataError("need at least two (Tr, std) pairs")
    X = np.column_stack((np.ones_like(x), x))
    if np.linalg.matrix_rank(X) < 2:
        raise InvalidArgumentError("rank-deficient design: Tr midpoints are not distinct")
    coef, *_ = np.linalg.lstsq(X, s**2, rcond=None)
    return NoiseModel(float(coef[0]), float(coef[1]))


def default_noise_model():
    """Variance law regressed from the 24x24-pixel histogram widths."""
    tr, std = zip(*MACRO24_BINS)
    return fit_variance_model(tr, std)


#: Noise level of 24x24-pixel macro pixels; the simulator scales this by
#: 0.1, 1 or 10.
SIGMA_24 = default_noise_model()


def default_windows(spectrum, fraction=0.25):
    """Leftmost and rightmost ``fraction`` of the wavelength range."""
    lo, hi = spectrum.wavelengths[0], spectrum.wavelengths[-1]
    span = hi - lo
    return (lo, lo + fraction * span), (hi - fraction * span, hi)


@dataclass
class NoiseAnalysis:
    bins: list
    n_dropped: int
    model: NoiseModel
    tr_true: np.ndarray
    residuals: np.ndarray


def analyse_residuals(tr_true, residuals, bin_edges, min_count=2):
    """Bin residuals, fit each populated bin and regress the variance law."""
    bins, dropped = bin_residuals(tr_true, residuals, bin_edges)
    used = [b for b in bins if b.count >= min_count]
    for b in used:
        fit_gaussian_bin(b)
    model = fit_variance_model([b.mid for b in used], [b.fitted_std for b in used])
    return NoiseAnalysis(bins, dropped, model, np.asarray(tr_true), np.asarray(residuals))


def baseline_residuals(spectrum, left=None, right=None):
    """Residuals of a spectrum against its fitted exponential baselines.

    Returns ``(tr_fit, residual)`` for the samples inside the two windows,
    where ``tr_fit`` is the fitted baseline value standing in for the true
    transmission.
    """
    dl, dr = default_windows(spectrum)
    left = dl if left is None else left
    right = dr if right is None else right
    if left[1] >= right[0]:
        raise InvalidArgumentError("left window must lie entirely left of the right window")
    post = fit_exponential_baseline(spectrum, right)
    pre = fit_exponential_baseline(spectrum, left, composed=True, base=(post.a, post.b))
    trs, res = [], []
    for window, fit, base in ((right, post, None), (left, pre, (post.a, post.b))):
        m = spectrum.mask(window)
        lam = spectrum.wavelengths[m]
        tr = np.exp(-(fit.a + fit.b * lam))
        if base is not None:
            tr = tr * np.exp(-(base[0] + base[1] * lam))
        trs.append(tr)
        res.append(spectrum.values[m] - tr)
    return np.concatenate(trs), np.concatenate(res)


def noise_analysis(spectra, bin_edges, left=None, right=None):
    """Full noise analysis over a collection of spectra."""
    trs, res = [], []
    for s in spectra:
        tr, e = baseline_residuals(s, left, right)
        trs.append(tr)
        res.append(e)
    return analyse_residuals(np.concatenate(trs), np.concatenate(res), bin_edges)


def write_noise_report(path, bins):
    """CSV with one row per bin: bin_low, bin_high, count, mean, std."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "count", "mean", "std"])
        for b in bins:
            w.writerow([repr(b.low), repr(b.high), b.count,
                        repr(b.fitted_mean), repr(b.fitted_std)])
