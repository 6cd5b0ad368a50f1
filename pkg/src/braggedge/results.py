"""Result containers shared by the fitting methods."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MICRO = 1e6


@dataclass
class FitResult:
    """Outcome of a (weighted) nonlinear least-squares fit.

    ``covariance`` is ``None`` when the normal matrix was singular at the
    solution.  ``cost_history`` holds the weighted SSE after every accepted
    step, starting with the initial guess.
    """

    params: np.ndarray
    names: tuple
    covariance: Optional[np.ndarray]
    residual_norm: float
    converged: bool
    iterations: int
    cost_history: list = field(default_factory=list)
    message: str = ""

    def __getitem__(self, name):
        return float(self.params[self.names.index(name)])

    def std(self, name):
        if self.covariance is None:
            return float("nan")
        i = self.names.index(name)
        return float(np.sqrt(max(self.covariance[i, i], 0.0)))

    def as_dict(self):
        return dict(zip(self.names, map(float, self.params)))

    def to_json_dict(self):
        cov = None if self.covariance is None else self.covariance.tolist()
        return {
            "names": list(self.names),
            "params": [float(v) for v in self.params],
            "covariance": cov,
            "residual_norm": float(self.residual_norm),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "message": self.message,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_json_dict(), **kwargs)


@dataclass
class StrainEstimate:
    """A strain estimate (dimensionless) with its predicted uncertainty.

    ``flags`` collects warnings such as ``"suspicious"`` (a fitted location
    pinned at a window bound) or ``"bimodal"``.
    """

    strain_mean: float
    strain_std: float
    method: str
    samples: Optional[np.ndarray] = None
    flags: set = field(default_factory=set)
    details: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples, method, **kwargs):
        samples = np.asarray(samples, dtype=float)
        # 1/N variance, matching the Monte Carlo summary
        return cls(float(samples.mean()), float(samples.std()), method,
                   samples=samples, **kwargs)

    @property
    def n_samples(self):
        return 0 if self.samples is None else int(self.samples.size)

    @property
    def microstrain(self):
        return self.strain_mean * MICRO, self.strain_std * MICRO

    def to_json_dict(self):
        return {
            "method": self.method,
            "strain_mean": float(self.strain_mean),
            "strain_std": float(self.strain_std),
            "strain_mean_microstrain": float(self.strain_mean * MICRO),
            "strain_std_microstrain": float(self.strain_std * MICRO),
            "n_samples": self.n_samples,
            "bimodal": "bimodal" in self.flags,
            "flags": sorted(self.flags),
        }
