"""Levenberg-Marquardt for weighted nonlinear least squares.

Minimises ``sum(w * (y - model(x, p))**2)`` using Marquardt's diagonal
scaling and Nielsen's damping update.  The returned covariance is the
Gauss-Newton (Fisher) approximation ``inv(J^T W J) * SSE / (n - p)``.
"""

import numpy as np

from .errors import InvalidArgumentError
from .results import FitResult

FD_STEP = 1e-7


def central_difference_jacobian(model, x, p, step=FD_STEP, columns=None):
    """Central finite-difference Jacobian of ``model(x, p)`` w.r.t. ``p``.

    The step is relative to ``|p_j|`` (absolute when ``p_j`` is zero).
    ``columns`` restricts the computation to a subset of parameters.
    """
    p = np.asarray(p, dtype=float)
    f0 = np.asarray(model(x, p), dtype=float)
    cols = range(p.size) if columns is None else columns
    J = np.zeros((f0.size, p.size))
    for j in cols:
        h = step * max(abs(p[j]), 1e-3)
        hi, lo = p.copy(), p.copy()
        hi[j] += h
        lo[j] -= h
        J[:, j] = (np.asarray(model(x, hi)) - np.asarray(model(x, lo))) / (2 * h)
    return J


def levenberg_marquardt(model, p0, x, y, weights=None, jac=None, names=None,
                        max_iter=200, damping=1e-8, ftol=1e-13, xtol=1e-11,
                        gtol=1e-14):
    """Fit ``model(x, p)`` to ``y``.

    Parameters
    ----------
    model : callable
        ``model(x, p) -> prediction`` with ``p`` a 1-D parameter array.
    p0 : array_like
        Initial parameters.
    x, y : array_like
        Independent variable and data.
    weights : array_like, optional
        Positive per-point weights (inverse variances); uniform if omitted.
    jac : callable, optional
        ``jac(x, p) -> (n, k)`` derivative of the prediction.  Central
        finite differences are used when omitted.
    names : sequence of str, optional
        Parameter names carried into the result.
    damping : float
        Initial damping relative to the largest diagonal of ``J^T W J``.

    Returns
    -------
    FitResult
        Hitting ``max_iter`` gives ``converged=False`` rather than raising.
        ``iterations`` counts accepted steps.
    """
    p = np.array(p0, dtype=float)
    if p.ndim != 1 or not np.all(np.isfinite(p)):
        raise InvalidArgumentError("initial parameters must be a finite 1-D vector")
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise InvalidArgumentError("weights must be positive and match the data")
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(p.size))
    sw = np.sqrt(w)

    def residual(params):
        return sw * (y - np.asarray(model(x, params), dtype=float))

    def jacobian(params):
        J = jac(x, params) if jac is not None else central_difference_jacobian(model, x, params)
        # Jacobian of the weighted residual is -sqrt(w) * d model / d p
        return -sw[:, None] * np.asarray(J, dtype=float)

    r = residual(p)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise InvalidArgumentError("model is not finite at the initial parameters")
    history = [cost]
    J = jacobian(p)
    A = J.T @ J
    g = J.T @ r
    mu = damping * max(float(np.max(np.diag(A))), np.finfo(float).tiny)
    nu = 2.0
    converged = False
    message = "maximum iterations reached"
    it = 0
    while it < max_iter:
        it += 1
        if np.max(np.abs(g)) <= gtol * max(cost, 1e-300) ** 0.5:
            converged, message = True, "gradient below tolerance"
            break
        D = np.maximum(np.diag(A), 1e-300)
        step_ok = False
        while not step_ok:
            try:
                dp = np.linalg.solve(A + mu * np.diag(D), -g)
            except np.linalg.LinAlgError:
                mu *= nu
                nu *= 2
                if not np.isfinite(mu):
                    break
                continue
            if np.linalg.norm(dp) <= xtol * (np.linalg.norm(p) + xtol):
                converged, message = True, "step below tolerance"
                break
            p_new = p + dp
            r_new = residual(p_new)
            cost_new = float(r_new @ r_new)
            predicted = float(dp @ (mu * D * dp - g))
            if np.isfinite(cost_new) and cost_new < cost:
                rho = (cost - cost_new) / predicted if predicted > 0 else 1.0
                mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                rel = (cost - cost_new) / max(cost, 1e-300)
                p, r, cost = p_new, r_new, cost_new
                history.append(cost)
                step_ok = True
                if rel <= ftol or cost == 0.0:
                    converged, message = True, "cost reduction below tolerance"
            else:
                mu *= nu
                nu *= 2
                if not np.isfinite(mu) or mu > 1e300:
                    break
        if converged:
            break
        if not step_ok:
            # damping blew up without finding descent: at a (numerical) minimum
            converged, message = True, "no further descent possible"
            break
        J = jacobian(p)
        A = J.T @ J
        g = J.T @ r

    covariance = fisher_covariance(jacobian(p), cost)
    return FitResult(params=p, names=names, covariance=covariance,
                     residual_norm=cost, converged=converged, iterations=len(history) - 1,
                     cost_history=history, message=message)


def fisher_covariance(J, cost):
    """``inv(J^T J) * cost / (n - p)`` for a weighted-residual Jacobian.

    Returns ``None`` when the normal matrix is singular or the result is not
    finite.
    """
    J = np.asarray(J, dtype=float)
    n, k = J.shape
    try:
        inv = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        return None
    scale = cost / (n - k) if n > k else 1.0
    cov = 0.5 * (inv + inv.T) * scale
    return cov if np.all(np.isfinite(cov)) else None
