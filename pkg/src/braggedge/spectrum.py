"""Transmission spectra and closed-form Bragg-edge models.

Every model here is a pure, vectorised function of wavelength (Å).  Products
of the form ``exp(a) * erfc(y)`` are evaluated through the scaled
complementary error function so that narrow edges (small ``sigma_B``) or
nearly symmetric ones (small ``tau``) never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import erfc, erfcx

from .errors import InvalidArgumentError

SQRT2 = np.sqrt(2.0)

#: Nominal stress-free edge location used by the simulator (Å).
DEFAULT_LAMBDA_HKL = 4.05
#: Half-width of the default simulation window (Å).
DEFAULT_HALF_WIDTH = 0.25
#: Number of wavelength channels in the default simulation window.
DEFAULT_N_POINTS = 512
#: Baseline attenuation coefficients used when simulating spectra.
DEFAULT_BASELINES = {"a0": 0.2, "b0": 0.04, "a_hkl": 0.3, "b_hkl": 0.01}

MIN_POINTS = 3
TAU_LIMIT_RATIO = 1e8


def default_grid(center=DEFAULT_LAMBDA_HKL, half_width=DEFAULT_HALF_WIDTH,
                 n=DEFAULT_N_POINTS):
    """Uniform wavelength grid ``[center - half_width, center + half_width]``."""
    return np.linspace(center - half_width, center + half_width, int(n))


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    return arr


def _check_scalar(value, name, positive=False, nonnegative=False):
    value = float(value)
    if not np.isfinite(value):
        raise InvalidArgumentError(f"{name} must be finite, got {value}")
    if positive and value <= 0:
        raise InvalidArgumentError(f"{name} must be > 0, got {value}")
    if nonnegative and value < 0:
        raise InvalidArgumentError(f"{name} must be >= 0, got {value}")
    return value


@dataclass(frozen=True)
class TransmissionSpectrum:
    """Measured (or simulated) transmission on a wavelength grid.

    Parameters
    ----------
    wavelengths : array_like
        Strictly increasing wavelengths in Å.
    values : array_like
        Transmission ratio ``I / I0`` at each wavelength.
    noise_std : array_like, optional
        Standard deviation of the additive noise on each value.
    """

    wavelengths: np.ndarray
    values: np.ndarray
    noise_std: Optional[np.ndarray] = None

    def __post_init__(self):
        lam = _as_float_array(self.wavelengths, "wavelengths")
        val = _as_float_array(self.values, "values")
        if lam.ndim != 1 or val.shape != lam.shape:
            raise InvalidArgumentError(
                "wavelengths and values must be 1-D arrays of equal length")
        if lam.size < MIN_POINTS:
            raise InvalidArgumentError(
                f"a spectrum needs at least {MIN_POINTS} points, got {lam.size}")
        if np.any(np.diff(lam) <= 0):
            raise InvalidArgumentError("wavelengths must be strictly increasing")
        object.__setattr__(self, "wavelengths", lam)
        object.__setattr__(self, "values", val)
        if self.noise_std is not None:
            std = _as_float_array(self.noise_std, "noise_std")
            if std.shape != lam.shape:
                raise InvalidArgumentError("noise_std must match wavelengths")
            if np.any(std <= 0):
                raise InvalidArgumentError("noise_std entries must be > 0")
            object.__setattr__(self, "noise_std", std)

    def __len__(self):
        return self.wavelengths.size

    @property
    def pitch(self):
        """Mean wavelength spacing (Å)."""
        return float((self.wavelengths[-1] - self.wavelengths[0]) / (len(self) - 1))

    def is_uniform(self, rtol=1e-9):
        steps = np.diff(self.wavelengths)
        return bool(np.all(np.abs(steps - self.pitch) <= rtol * abs(self.pitch)))

    def mask(self, window):
        """Boolean mask of the samples inside the closed interval ``window``."""
        lo, hi = window
        return (self.wavelengths >= lo) & (self.wavelengths <= hi)

    def crop(self, window):
        """Sub-spectrum restricted to ``window = (lo, hi)``."""
        m = self.mask(window)
        std = None if self.noise_std is None else self.noise_std[m]
        return TransmissionSpectrum(self.wavelengths[m], self.values[m], std)

    def with_noise_std(self, noise_std):
        return replace(self, noise_std=noise_std)


@dataclass(frozen=True)
class EdgeParams:
    """Kropff edge plus the two exponential attenuation baselines."""

    lambda_hkl: float
    sigma_B: float
    tau: float
    a0: float = DEFAULT_BASELINES["a0"]
    b0: float = DEFAULT_BASELINES["b0"]
    a_hkl: float = DEFAULT_BASELINES["a_hkl"]
    b_hkl: float = DEFAULT_BASELINES["b_hkl"]

    def __post_init__(self):
        _check_scalar(self.lambda_hkl, "lambda_hkl")
        _check_scalar(self.sigma_B, "sigma_B", positive=True)
        _check_scalar(self.tau, "tau", nonnegative=True)
        for name in ("a0", "b0", "a_hkl", "b_hkl"):
            _check_scalar(getattr(self, name), name)

    @property
    def baselines(self):
        return (self.a0, self.b0, self.a_hkl, self.b_hkl)


@dataclass(frozen=True)
class VogelParams:
    """Gaussian convolved with back-to-back exponentials (rise/decay rates)."""

    lambda_hkl: float
    sigma_B: float
    alpha: float
    beta: float

    def __post_init__(self):
        _check_scalar(self.lambda_hkl, "lambda_hkl")
        _check_scalar(self.sigma_B, "sigma_B", positive=True)
        _check_scalar(self.alpha, "alpha", positive=True)
        _check_scalar(self.beta, "beta", positive=True)


@dataclass(frozen=True)
class TremsinParams:
    """Kropff edge scaled by an edge height ``h`` on top of a base ``b``."""

    lambda_hkl: float
    sigma_B: float
    tau: float
    h: float
    b: float

    def __post_init__(self):
        _check_scalar(self.lambda_hkl, "lambda_hkl")
        _check_scalar(self.sigma_B, "sigma_B", positive=True)
        _check_scalar(self.tau, "tau", nonnegative=True)
        _check_scalar(self.h, "h", positive=True)
        _check_scalar(self.b, "b")


@dataclass(frozen=True)
class VoigtParams:
    """Pseudo-Voigt peak: Lorentzian/Gaussian mixture on a constant offset."""

    delta_hkl: float
    A: float
    mu: float
    w_l: float
    w_g: float
    y0: float = 0.0

    def __post_init__(self):
        _check_scalar(self.delta_hkl, "delta_hkl")
        _check_scalar(self.A, "A")
        _check_scalar(self.w_l, "w_l", positive=True)
        _check_scalar(self.w_g, "w_g", positive=True)
        _check_scalar(self.y0, "y0")
        mu = _check_scalar(self.mu, "mu")
        if not 0.0 <= mu <= 1.0:
            raise InvalidArgumentError(f"mu must lie in [0, 1], got {mu}")


def kropff_edge(lam, lambda_hkl, sigma_B, tau):
    """Integrated Kropff edge profile ``B(lambda)`` in [0, 1].

    ``tau == 0`` (or ``tau`` negligible against ``sigma_B``) evaluates the
    pure error-function limit.
    """
    lam = _as_float_array(lam, "lambda")
    lambda_hkl = _check_scalar(lambda_hkl, "lambda_hkl")
    sigma_B = _check_scalar(sigma_B, "sigma_B", positive=True)
    tau = _check_scalar(tau, "tau", nonnegative=True)

    scalar = lam.ndim == 0
    x = np.atleast_1d(lam) - lambda_hkl
    step = erfc(-x / (SQRT2 * sigma_B))
    # beyond sigma_B / tau ~ 1e8 the tail term is below double precision
    if tau == 0.0 or sigma_B > TAU_LIMIT_RATIO * tau:
        out = 0.5 * step
        return out[0] if scalar else out

    s = sigma_B / tau
    y = -x / (SQRT2 * sigma_B) + s
    # exp(-x/tau + s^2/2) * erfc(y); for y >= 0 the Gaussian factor of erfc
    # is folded into the exponent, which is then always <= 0
    gauss = -x**2 / (2 * sigma_B**2) + (SQRT2 - 1) * x / tau - 0.5 * s**2
    with np.errstate(over="ignore"):
        tail = _exp_erfc(-x / tau + 0.5 * s**2, y, gauss)
    out = 0.5 * (step - tail)
    return out[0] if scalar else out


def _exp_erfc(a, y, gauss_exponent):
    """``exp(a) * erfc(y)`` where ``a - y**2 == gauss_exponent`` analytically."""
    out = np.empty(np.shape(y))
    pos = y >= 0
    out[pos] = np.exp(gauss_exponent[pos]) * erfcx(y[pos])
    neg = ~pos
    out[neg] = np.exp(a[neg]) * erfc(y[neg])
    return out


def vogel_edge(lam, params):
    """Integrated Gaussian-convolved back-to-back exponential edge."""
    lam = _as_float_array(lam, "lambda")
    p = params
    scalar = lam.ndim == 0
    lam = np.atleast_1d(lam)
    sig = p.sigma_B
    delta = p.lambda_hkl - lam
    w = delta / (SQRT2 * sig)
    u = 0.5 * p.alpha * (p.alpha * sig**2 + 2 * delta)
    v = 0.5 * p.beta * (p.beta * sig**2 - 2 * delta)
    y = (p.alpha * sig**2 + delta) / (SQRT2 * sig)
    z = (p.beta * sig**2 - delta) / (SQRT2 * sig)
    gauss = -delta**2 / (2 * sig**2)
    rise = _exp_erfc(u, y, gauss)
    decay = _exp_erfc(v, z, gauss)
    out = 0.5 * erfc(w) - (p.beta * rise - p.alpha * decay) / (2 * (p.alpha + p.beta))
    return out[0] if scalar else out


def baseline_curves(lam, a0, b0, a_hkl, b_hkl):
    """Pre-edge and post-edge attenuation curves ``(gamma1, gamma2)``.

    ``gamma2 = exp(-(a0 + b0 lam))`` is the transmission where the edge shape
    is 1 and ``gamma1 = gamma2 * exp(-(a_hkl + b_hkl lam))`` where it is 0.
    """
    lam = np.asarray(lam, dtype=float)
    gamma2 = np.exp(-(a0 + b0 * lam))
    gamma1 = gamma2 * np.exp(-(a_hkl + b_hkl * lam))
    return gamma1, gamma2


def transmission_from_edge(lam, B, a0, b0, a_hkl, b_hkl):
    gamma1, gamma2 = baseline_curves(lam, a0, b0, a_hkl, b_hkl)
    # equals B * gamma2 + (1 - B) * gamma1, and exactly gamma2 when they coincide
    return gamma1 + B * (gamma2 - gamma1)


def santisteban_transmission(lam, params, edge_model="kropff", vogel=None):
    """Transmission through an edge between two exponential baselines.

    Parameters
    ----------
    lam : array_like
        Wavelengths (Å).
    params : EdgeParams
        Baselines, and the Kropff edge when ``edge_model == "kropff"``.
    edge_model : {"kropff", "vogel"}
    vogel : VogelParams, optional
        Edge parameters, required for ``edge_model == "vogel"``.
    """
    lam = _as_float_array(lam, "lambda")
    if edge_model == "kropff":
        B = kropff_edge(lam, params.lambda_hkl, params.sigma_B, params.tau)
    elif edge_model == "vogel":
        if vogel is None:
            raise InvalidArgumentError("edge_model='vogel' needs VogelParams")
        B = vogel_edge(lam, vogel)
    else:
        raise InvalidArgumentError(f"unknown edge model {edge_model!r}")
    return transmission_from_edge(lam, B, *params.baselines)


def tremsin_transmission(lam, params):
    """Five-parameter edge ``h * B_kropff + b``."""
    B = kropff_edge(lam, params.lambda_hkl, params.sigma_B, params.tau)
    return params.h * B + params.b


def pseudo_voigt(delta, params):
    """Pseudo-Voigt profile evaluated at displacement(s) ``delta`` (Å)."""
    delta = _as_float_array(delta, "delta")
    p = params
    d2 = (delta - p.delta_hkl) ** 2
    four_ln2 = 4.0 * np.log(2.0)
    lorentz = 2.0 * np.pi * p.w_l / (4.0 * d2 + p.w_l**2)
    gauss = np.sqrt(four_ln2) / (np.sqrt(np.pi) * p.w_g) * np.exp(-four_ln2 * d2 / p.w_g**2)
    return p.y0 + p.A * (p.mu * lorentz + (1.0 - p.mu) * gauss)


def strain_from_edge(edge_value, reference_value):
    """Relative shift ``(edge - reference) / reference`` (dimensionless).

    Works for lattice spacings, edge wavelengths or gradient-maximum
    locations alike; multiply by 1e6 for micro-strain.
    """
    reference_value = np.asarray(reference_value, dtype=float)
    edge_value = np.asarray(edge_value, dtype=float)
    if not (np.all(np.isfinite(reference_value)) and np.all(np.isfinite(edge_value))):
        raise InvalidArgumentError("strain inputs must be finite")
    if np.any(reference_value <= 0):
        raise InvalidArgumentError("reference value must be > 0")
    out = (edge_value - reference_value) / reference_value
    return float(out) if out.ndim == 0 else out
