"""Gaussian-process regression of an edge shape seen through a linear map.

Each measurement is ``y_bar_i = A_i * B(lambda_i) + e_i`` with a known scalar
``A_i`` and Gaussian noise ``e_i``.  The prior on ``B`` is a zero-mean GP with
a stationary kernel.  Because differentiation is linear, the gradient
``g = dB/dlambda`` is jointly Gaussian with the data and is conditioned in
closed form alongside ``B``.

Kernels are normalised so that ``k(x, x) = sigma_f``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg, optimize

from .errors import ConditioningError, InvalidArgumentError, OptimizationError

KINDS = ("squared_exponential", "matern_3_2", "matern_5_2")
JITTER_LADDER = tuple(10.0 ** -k for k in range(12, 5, -1))
SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)
POLISH_ITERATIONS = 3
POLISH_STEP = 1e-5


@dataclass(frozen=True)
class Kernel:
    kind: str = "matern_3_2"
    sigma_f: float = 1.0
    l: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown kernel kind {self.kind!r}")
        if not (np.isfinite(self.sigma_f) and self.sigma_f > 0):
            raise InvalidArgumentError("sigma_f must be finite and > 0")
        if not (np.isfinite(self.l) and self.l > 0):
            raise InvalidArgumentError("length-scale must be finite and > 0")

    @property
    def log_params(self):
        return np.array([np.log(self.sigma_f), np.log(self.l)])

    def with_log_params(self, theta):
        return replace(self, sigma_f=float(np.exp(theta[0])), l=float(np.exp(theta[1])))

    def __call__(self, x, x2, deriv=0):
        return kernel_matrix(self, x, x2, deriv)

    def to_json_dict(self):
        return {"kind": self.kind, "sigma_f": self.sigma_f, "l": self.l}


def kernel_eval(kernel, x, x2, deriv=0):
    """Kernel value or derivative block, broadcasting ``x`` against ``x2``.

    ``deriv`` selects ``k`` (0), ``dk/dx`` (1) or ``d2k/(dx dx2)`` (2), where
    ``x`` is the first argument.
    """
    r = np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)
    sf, l = kernel.sigma_f, kernel.l
    if kernel.kind == "squared_exponential":
        e = np.exp(-0.5 * r**2 / l**2)
        if deriv == 0:
            return sf * e
        if deriv == 1:
            return -sf * r / l**2 * e
        if deriv == 2:
            return sf * (1.0 / l**2 - r**2 / l**4) * e
    elif kernel.kind == "matern_3_2":
        a = SQRT3 / l
        ar = a * np.abs(r)
        e = np.exp(-ar)
        if deriv == 0:
            return sf * (1.0 + ar) * e
        if deriv == 1:
            return -sf * a**2 * r * e
        if deriv == 2:
            return sf * a**2 * (1.0 - ar) * e
    else:
        a = SQRT5 / l
        ar = a * np.abs(r)
        e = np.exp(-ar)
        if deriv == 0:
            return sf * (1.0 + ar + ar**2 / 3.0) * e
        if deriv == 1:
            return -sf * a**2 / 3.0 * r * (1.0 + ar) * e
        if deriv == 2:
            return sf * a**2 / 3.0 * (1.0 + ar - ar**2) * e
    raise InvalidArgumentError(f"deriv must be 0, 1 or 2, got {deriv!r}")


def kernel_matrix(kernel, x, x2, deriv=0):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    return kernel_eval(kernel, x[:, None], x2[None, :], deriv)


def kernel_log_gradients(kernel, x, x2):
    """``dK/dlog(sigma_f)`` and ``dK/dlog(l)`` for the value block."""
    r = np.abs(np.atleast_1d(x)[:, None] - np.atleast_1d(x2)[None, :])
    sf, l = kernel.sigma_f, kernel.l
    if kernel.kind == "squared_exponential":
        K = sf * np.exp(-0.5 * r**2 / l**2)
        return K, K * r**2 / l**2
    if kernel.kind == "matern_3_2":
        u = SQRT3 * r / l
        e = np.exp(-u)
        return sf * (1.0 + u) * e, sf * u**2 * e
    u = SQRT5 * r / l
    e = np.exp(-u)
    return sf * (1.0 + u + u**2 / 3.0) * e, sf * u**2 / 3.0 * (1.0 + u) * e


@dataclass(frozen=True)
class GPEdgeProblem:
    """Measurements ``y_bar = A * B(lambdas) + noise``.

    ``noise_scale`` multiplies every ``noise_std`` (1 unless it is being
    estimated).
    """

    lambdas: np.ndarray
    y_bar: np.ndarray
    A: np.ndarray
    noise_std: np.ndarray
    kernel: Kernel = Kernel()
    noise_scale: float = 1.0

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, n), dtype=float).ravel()
                  for n in ("lambdas", "y_bar", "A", "noise_std")]
        if len({a.size for a in arrays}) != 1:
            raise InvalidArgumentError("lambdas, y_bar, A and noise_std must have equal length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise InvalidArgumentError("problem arrays must be finite")
        if np.any(arrays[3] <= 0):
            raise InvalidArgumentError("noise_std must be > 0")
        for name, a in zip(("lambdas", "y_bar", "A", "noise_std"), arrays):
            object.__setattr__(self, name, a)

    @property
    def n(self):
        return self.lambdas.size

    def with_kernel(self, kernel, noise_scale=None):
        return replace(self, kernel=kernel,
                       noise_scale=self.noise_scale if noise_scale is None else noise_scale)

    def permuted(self, order):
        return replace(self, lambdas=self.lambdas[order], y_bar=self.y_bar[order],
                       A=self.A[order], noise_std=self.noise_std[order])


def cholesky_jitter(K, ladder=JITTER_LADDER):
    """Lower Cholesky factor of ``K``, adding diagonal jitter on failure.

    Jitter values are relative to the mean diagonal of ``K``.  Returns
    ``(L, jitter)`` where ``jitter`` is the absolute amount added.
    """
    try:
        return linalg.cholesky(K, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    if not np.all(np.isfinite(K)):
        raise ConditioningError("matrix has non-finite entries")
    scale = float(np.mean(np.diag(K)))
    if scale <= 0:
        scale = 1.0
    eye = np.eye(K.shape[0])
    for rel in ladder:
        jitter = rel * scale
        try:
            return linalg.cholesky(K + jitter * eye, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            continue
    cond = float(np.linalg.cond(K))
    raise ConditioningError(
        f"Cholesky failed with jitter up to {ladder[-1]:g} x mean diagonal "
        f"(condition estimate {cond:.3g})", condition_estimate=cond)


def data_covariance(problem):
    """``A K A^T + diag((noise_scale * noise_std)^2)``."""
    K = problem.A[:, None] * problem.kernel(problem.lambdas, problem.lambdas) * problem.A[None, :]
    K[np.diag_indices_from(K)] += (problem.noise_scale * problem.noise_std) ** 2
    return K


@dataclass
class GPEdgePosterior:
    """Posterior of the edge shape ``B`` and its gradient ``g`` on ``grid``.

    ``cov_B`` is ``None`` when only its diagonal was requested, in which
    case ``var_B`` still holds the marginal variances.
    """

    grid: np.ndarray
    mean_B: np.ndarray
    var_B: np.ndarray
    cov_B: Optional[np.ndarray]
    mean_g: np.ndarray
    cov_g: np.ndarray

    @property
    def std_B(self):
        return np.sqrt(self.var_B)

    @property
    def std_g(self):
        return np.sqrt(np.diag(self.cov_g))

    def scaled_gradient(self, c):
        """Posterior with the gradient mean scaled by ``c`` (cov by ``c**2``)."""
        return replace(self, mean_g=c * self.mean_g, cov_g=c * c * self.cov_g)

    def to_json_dict(self):
        return {
            "grid": self.grid.tolist(),
            "mean_B": self.mean_B.tolist(),
            "std_B": self.std_B.tolist(),
            "mean_g": self.mean_g.tolist(),
            "std_g": self.std_g.tolist(),
        }


def _clip_cov(C):
    C = 0.5 * (C + C.T)
    d = np.diag_indices_from(C)
    C[d] = np.maximum(C[d], 0.0)
    return C


def gp_condition(problem, grid, full_cov_B=True):
    """Condition ``B`` and ``g`` on the problem's measurements.

    Parameters
    ----------
    problem : GPEdgeProblem
    grid : array_like
        Prediction wavelengths.
    full_cov_B : bool
        Skip the full ``B`` covariance (keeping its diagonal) when False.

    Raises
    ------
    ConditioningError
        The data covariance could not be factorised.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    kern = problem.kernel
    prior_B = kern(grid, grid) if full_cov_B else None
    var_prior_B = np.full(grid.size, kern.sigma_f)
    prior_g = kern(grid, grid, deriv=2)
    if problem.n == 0:
        return GPEdgePosterior(grid, np.zeros(grid.size), var_prior_B, prior_B,
                               np.zeros(grid.size), _clip_cov(prior_g))

    L, _ = cholesky_jitter(data_covariance(problem))
    A = problem.A
    cross_B = kern(grid, problem.lambdas) * A[None, :]
    cross_g = kern(grid, problem.lambdas, deriv=1) * A[None, :]
    alpha = linalg.cho_solve((L, True), problem.y_bar, check_finite=False)
    W_B = linalg.solve_triangular(L, cross_B.T, lower=True, check_finite=False)
    W_g = linalg.solve_triangular(L, cross_g.T, lower=True, check_finite=False)

    mean_B = cross_B @ alpha
    mean_g = cross_g @ alpha
    var_B = np.maximum(var_prior_B - np.einsum("ij,ij->j", W_B, W_B), 0.0)
    cov_B = _clip_cov(prior_B - W_B.T @ W_B) if full_cov_B else None
    cov_g = _clip_cov(prior_g - W_g.T @ W_g)
    return GPEdgePosterior(grid, mean_B, var_B, cov_B, mean_g, cov_g)


def log_marginal_likelihood(problem, optimize_noise=False):
    """Marginal log-likelihood (without the ``n/2 log 2 pi`` constant).

    Returns
    -------
    value : float
        ``-0.5 * (log det K_y + y_bar^T K_y^{-1} y_bar)``.
    gradient : ndarray
        Derivatives with respect to ``log sigma_f``, ``log l`` and, when
        ``optimize_noise``, ``log noise_scale``.
    """
    Ky = data_covariance(problem)
    L, _ = cholesky_jitter(Ky)
    alpha = linalg.cho_solve((L, True), problem.y_bar, check_finite=False)
    value = -np.sum(np.log(np.diag(L))) - 0.5 * float(problem.y_bar @ alpha)

    Kinv = linalg.cho_solve((L, True), np.eye(problem.n), check_finite=False)
    inner = np.outer(alpha, alpha) - Kinv
    AA = problem.A[:, None] * problem.A[None, :]
    dK_sf, dK_l = kernel_log_gradients(problem.kernel, problem.lambdas, problem.lambdas)
    grads = [0.5 * np.sum(inner * (AA * dK_sf)), 0.5 * np.sum(inner * (AA * dK_l))]
    if optimize_noise:
        dnoise = 2.0 * (problem.noise_scale * problem.noise_std) ** 2
        grads.append(0.5 * np.sum(np.diag(inner) * dnoise))
    return float(value), np.array(grads)


class HyperFit(NamedTuple):
    kernel: Kernel
    value: float
    noise_scale: float = 1.0
    diagnostics: tuple = ()


def _typical_pitch(x):
    d = np.diff(np.unique(x))
    return float(np.median(d)) if d.size else 1.0


def optimize_hyperparameters(problem, kernel_candidates=KINDS, n_starts=5, seed=0,
                             optimize_noise=False, gtol=1e-9):
    """Maximise the marginal likelihood over kernels and hyperparameters.

    Each candidate kind is optimised with L-BFGS-B in log-hyperparameter
    space from ``n_starts`` log-uniform starting points (plus the candidate's
    own parameters when a :class:`Kernel` instance is given).  The kernel
    with the highest objective wins; ties go to the earlier candidate and
    start.

    Returns
    -------
    HyperFit
    """
    candidates = [kernel_candidates] if isinstance(kernel_candidates, (str, Kernel)) \
        else list(kernel_candidates)
    if not candidates:
        raise InvalidArgumentError("need at least one kernel candidate")
    rng = np.random.default_rng(seed)
    pitch = _typical_pitch(problem.lambdas)
    width = float(np.ptp(problem.lambdas)) if problem.n > 1 else 1.0
    nz = np.abs(problem.A) > 1e-12 * np.max(np.abs(problem.A)) if problem.n else np.array([])
    v = float(np.var(problem.y_bar[nz] / problem.A[nz])) if np.sum(nz) > 1 else 1.0
    v = v if v > 0 else 1.0
    bounds = [(np.log(v) - 14.0, np.log(v) + 14.0),
              (np.log(0.1 * pitch), np.log(100.0 * width))]
    if optimize_noise:
        bounds.append((np.log(1e-3), np.log(1e3)))

    diagnostics = []
    best = None
    for ci, cand in enumerate(candidates):
        kind = cand.kind if isinstance(cand, Kernel) else cand
        base = cand if isinstance(cand, Kernel) else Kernel(kind)
        starts = []
        if isinstance(cand, Kernel):
            starts.append(list(cand.log_params))
        for _ in range(n_starts):
            starts.append([np.log(v * 10 ** rng.uniform(-2, 1)),
                           rng.uniform(np.log(3 * pitch), np.log(width))])
        for si, theta0 in enumerate(starts):
            if optimize_noise:
                theta0 = list(theta0) + [np.log(problem.noise_scale)]
            theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])

            def objective(theta):
                p = problem.with_kernel(base.with_log_params(theta[:2]),
                                        float(np.exp(theta[2])) if optimize_noise else None)
                try:
                    val, grad = log_marginal_likelihood(p, optimize_noise)
                except ConditioningError:
                    return 1e300, np.zeros_like(theta)
                return -val, -grad

            try:
                res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B",
                                        bounds=bounds,
                                        options={"gtol": gtol, "ftol": 1e-15, "maxiter": 500})
            except (ValueError, FloatingPointError) as exc:
                diagnostics.append({"kind": kind, "start": si, "error": str(exc)})
                continue
            value = -float(res.fun)
            diagnostics.append({"kind": kind, "start": si, "value": value,
                                "success": bool(res.success), "nit": int(res.nit)})
            if not np.isfinite(value) or value <= -1e299:
                continue
            key = (value, -ci, -si)
            if best is None or key > best[0]:
                noise = float(np.exp(res.x[2])) if optimize_noise else problem.noise_scale
                best = (key, base.with_log_params(res.x[:2]), value, noise)
    if best is None:
        raise OptimizationError("all hyperparameter starts failed", diagnostics)
    kernel, value, noise = _polish(problem, best[1], best[3], bounds, optimize_noise)
    # the objective is only resolved to rounding near the optimum
    if value < best[2] - 1e-9 * max(1.0, abs(best[2])):
        kernel, value, noise = best[1], best[2], best[3]
    return HyperFit(kernel, value, noise, tuple(diagnostics))


def _polish(problem, kernel, noise_scale, bounds, optimize_noise, n_iter=POLISH_ITERATIONS):
    """Newton steps on the analytic gradient from the L-BFGS-B optimum.

    Near the optimum the objective is flat to within rounding, which stalls
    line searches; a step is kept whenever it shrinks the gradient.
    """
    def grad_at(theta):
        p = problem.with_kernel(kernel.with_log_params(theta[:2]),
                                float(np.exp(theta[2])) if optimize_noise else None)
        return log_marginal_likelihood(p, optimize_noise)

    theta = np.r_[kernel.log_params, [np.log(noise_scale)] if optimize_noise else []]
    lo, hi = np.array([b[0] for b in bounds]), np.array([b[1] for b in bounds])
    try:
        value, g = grad_at(theta)
        for _ in range(n_iter):
            H = np.empty((theta.size, theta.size))
            for j in range(theta.size):
                e = np.zeros(theta.size)
                e[j] = POLISH_STEP
                H[:, j] = (grad_at(theta + e)[1] - grad_at(theta - e)[1]) / (2 * POLISH_STEP)
            H = 0.5 * (H + H.T)
            # only polish a proper maximum (negative-definite Hessian)
            if np.any(np.linalg.eigvalsh(H) >= 0):
                break
            trial = np.clip(theta - np.linalg.solve(H, g), lo, hi)
            v_new, g_new = grad_at(trial)
            if not np.linalg.norm(g_new) < np.linalg.norm(g):
                break
            theta, value, g = trial, v_new, g_new
    except (ConditioningError, np.linalg.LinAlgError):
        pass
    noise = float(np.exp(theta[2])) if optimize_noise else noise_scale
    return kernel.with_log_params(theta[:2]), float(value), noise
