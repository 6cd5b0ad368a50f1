"""Strain estimation from neutron-transmission Bragg edges.

Four estimators are provided: the three-stage Santisteban fit, the
five-parameter Tremsin fit, derivative cross-correlation, and a
Gaussian-process edge fit whose gradient-peak distribution gives strain
with a calibrated uncertainty.  A simulator and study harness compare them
over random trials.
"""

__version__ = "0.1.0"

from .bayes import (EdgeFitGP, ZetaSamples, estimate_strain_gp, fit_edge_gp, sample_zeta,
                    strain_distribution, strain_histogram_report)
from .data import PixelStack, ingest_spectrum, macro_pixel_average
from .errors import (BraggEdgeError, ConditioningError, FitFailureError, InsufficientDataError,
                     InvalidArgumentError, MethodFailureError, OptimizationError)
from .gp import (GPEdgePosterior, GPEdgeProblem, Kernel, gp_condition, kernel_eval,
                 log_marginal_likelihood, optimize_hyperparameters)
from .lm import levenberg_marquardt
from .lsq import fit_santisteban, fit_tremsin
from .noise import (SIGMA_24, NoiseModel, bin_residuals, fit_exponential_baseline,
                    fit_gaussian_bin, fit_variance_model, noise_std_at)
from .results import FitResult, StrainEstimate
from .simulate import GridSpec, TrialConfig, generate_trial, sample_edge_params, simulate_spectrum
from .spectrum import (EdgeParams, TransmissionSpectrum, TremsinParams, VogelParams, VoigtParams,
                       kropff_edge, pseudo_voigt, santisteban_transmission, strain_from_edge,
                       tremsin_transmission, vogel_edge)
from .study import StudySettings, TrialMetrics, run_trial_study
from .xcorr import SGConfig, cross_correlate, fit_xcorr_strain, savitzky_golay_derivative
