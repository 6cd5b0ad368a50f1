"""Simulated Bragg-edge spectra for random-trial studies.

Edges follow the Kropff profile between exponential baselines; noise is
additive Gaussian with a variance that grows linearly with transmission.
Every trial owns an RNG stream keyed by ``(seed, group, trial)`` so trials
can be generated in any order, or in parallel, with identical results.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .noise import SIGMA_24, NoiseModel, noise_std_at
from .spectrum import (DEFAULT_BASELINES, DEFAULT_HALF_WIDTH, DEFAULT_LAMBDA_HKL,
                       DEFAULT_N_POINTS, EdgeParams, TransmissionSpectrum,
                       santisteban_transmission, strain_from_edge)

SIGMA_B_RANGE = (4.7e-3, 1.4e-2)
TAU_RANGE = (0.0, 1.3e-2)
STRAIN_RANGE = (-3e-3, 3e-3)


@dataclass(frozen=True)
class GridSpec:
    center: float = DEFAULT_LAMBDA_HKL
    half_width: float = DEFAULT_HALF_WIDTH
    n: int = DEFAULT_N_POINTS

    def points(self):
        return np.linspace(self.center - self.half_width,
                           self.center + self.half_width, int(self.n))


def _check_range(rng_, name):
    lo, hi = map(float, rng_)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise InvalidArgumentError(f"{name} must satisfy lo <= hi, got {rng_}")
    return lo, hi


@dataclass(frozen=True)
class TrialConfig:
    """Random-trial protocol.

    ``noise_scale`` multiplies the base noise model's standard deviation;
    0.1, 1 and 10 give the three standard noise levels.
    """

    n_groups: int = 10
    trials_per_group: int = 100
    sigma_B_range: tuple = SIGMA_B_RANGE
    tau_range: tuple = TAU_RANGE
    noise_scale: float = 1.0
    grid: GridSpec = field(default_factory=GridSpec)
    seed: int = 0
    strain_range: tuple = STRAIN_RANGE
    lambda0: float = DEFAULT_LAMBDA_HKL
    baselines: dict = field(default_factory=lambda: dict(DEFAULT_BASELINES))
    noise_model: NoiseModel = SIGMA_24

    def __post_init__(self):
        if int(self.n_groups) < 1 or int(self.trials_per_group) < 1:
            raise InvalidArgumentError("group and trial counts must be >= 1")
        for name in ("sigma_B_range", "tau_range"):
            lo, _ = _check_range(getattr(self, name), name)
            if lo < 0:
                raise InvalidArgumentError(f"{name} must be non-negative")
        if self.sigma_B_range[0] <= 0:
            raise InvalidArgumentError("sigma_B must be strictly positive")
        _check_range(self.strain_range, "strain_range")
        if self.noise_scale < 0:
            raise InvalidArgumentError("noise_scale must be >= 0")

    @property
    def n_trials(self):
        return int(self.n_groups) * int(self.trials_per_group)

    def to_dict(self):
        d = asdict(self)
        d["noise_model"] = {"a": self.noise_model.a, "b": self.noise_model.b}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "grid" in d and not isinstance(d["grid"], GridSpec):
            d["grid"] = GridSpec(**d["grid"])
        if "noise_model" in d and not isinstance(d["noise_model"], NoiseModel):
            d["noise_model"] = NoiseModel(**d["noise_model"])
        for key in ("sigma_B_range", "tau_range", "strain_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def group_rng(seed, group):
    return np.random.default_rng([int(seed), int(group)])


def trial_rng(seed, group, trial):
    return np.random.default_rng([int(seed), int(group), int(trial)])


def sample_edge_shape(rng, config):
    """Draw ``(sigma_B, tau)`` uniformly from the configured ranges."""
    sigma_B = rng.uniform(*config.sigma_B_range)
    tau = rng.uniform(*config.tau_range)
    return float(sigma_B), float(tau)


def sample_edge_params(rng, config, shape=None):
    """Random edge parameters for one trial.

    The applied strain is drawn uniformly from ``config.strain_range`` and
    applied multiplicatively to ``config.lambda0``.  Pass ``shape`` to reuse a
    group's ``(sigma_B, tau)``; otherwise they are drawn first.
    """
    sigma_B, tau = sample_edge_shape(rng, config) if shape is None else shape
    strain = float(rng.uniform(*config.strain_range))
    return EdgeParams(config.lambda0 * (1.0 + strain), sigma_B, tau, **config.baselines)


def sample_noise(tr, noise_model, noise_scale, rng):
    """Additive noise for true transmission ``tr``; returns ``(e, std)``."""
    std = noise_scale * noise_std_at(noise_model, tr)
    e = rng.standard_normal(np.shape(tr)) * std
    return e, std


def simulate_spectrum(params, grid, noise_model=SIGMA_24, noise_scale=1.0, rng=None):
    """Noisy transmission measurements of a Kropff edge.

    With ``noise_scale == 0`` the exact transmission is returned and
    ``noise_std`` is left empty.
    """
    lam = np.asarray(grid, dtype=float)
    tr = santisteban_transmission(lam, params)
    if noise_scale == 0:
        return TransmissionSpectrum(lam, tr)
    if rng is None:
        raise InvalidArgumentError("a random generator is required for noisy spectra")
    e, std = sample_noise(tr, noise_model, noise_scale, rng)
    return TransmissionSpectrum(lam, tr + e, std)


@dataclass
class Trial:
    group: int
    index: int
    params: EdgeParams
    reference_params: EdgeParams
    spectrum: TransmissionSpectrum
    reference: TransmissionSpectrum
    lambda0: float

    @property
    def true_strain(self):
        return strain_from_edge(self.params.lambda_hkl, self.lambda0)

    def manifest(self, seed):
        return {
            "group": self.group,
            "trial": self.index,
            "seed": seed,
            "lambda0": self.lambda0,
            "true_strain": self.true_strain,
            "params": asdict(self.params),
        }


def generate_trial(config, group, trial):
    """Build trial ``trial`` of ``group``.

    The reference is the noiseless stress-free profile (same ``sigma_B`` and
    ``tau``, edge at ``lambda0``).  Its ``noise_std`` copies the trial's so the
    same likelihood can be used for both.
    """
    shape = sample_edge_shape(group_rng(config.seed, group), config)
    rng = trial_rng(config.seed, group, trial)
    params = sample_edge_params(rng, config, shape=shape)
    ref_params = EdgeParams(config.lambda0, shape[0], shape[1], **config.baselines)
    lam = config.grid.points()
    spectrum = simulate_spectrum(params, lam, config.noise_model, config.noise_scale, rng)
    reference = simulate_spectrum(ref_params, lam, noise_scale=0)
    if spectrum.noise_std is not None:
        reference = reference.with_noise_std(spectrum.noise_std)
    return Trial(group, trial, params, ref_params, spectrum, reference, config.lambda0)


def iter_trials(config):
    for g in range(config.n_groups):
        for t in range(config.trials_per_group):
            yield generate_trial(config, g, t)


def write_spectrum_csv(path, spectrum):
    """Columns ``lambda, transmission, noise_std`` (empty std if unknown)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "transmission", "noise_std"])
        std = spectrum.noise_std
        for i, (lam, tr) in enumerate(zip(spectrum.wavelengths, spectrum.values)):
            w.writerow([repr(float(lam)), repr(float(tr)),
                        "" if std is None else repr(float(std[i]))])


def write_manifest(path, trial, seed):
    with open(path, "w") as fh:
        json.dump(trial.manifest(seed), fh, indent=2, sort_keys=True)
