"""Dense Gaussian-process primitives.

RBF covariance, Cholesky-based marginal likelihood and prediction, and the
derivative-free hyperparameter search used by every model in the package.
"""
from dataclasses import dataclass
import itertools
import math

import numpy as np
from scipy import linalg

from . import _accel
from .errors import NumericalError, OptimizationError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_STOP = 1e-4


@dataclass(frozen=True)
class RbfParams:
    """Hyperparameters of ``gamma * exp(-rho * |x - y|^2)`` plus observation noise.

    ``rho`` is an inverse squared length-scale, so ``rho = 1 / l**2``.
    """

    gamma: float
    rho: float
    noise_var: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.rho > 0 and self.noise_var >= 0):
            raise ValueError(f"invalid RBF parameters {self}")

    @property
    def lengthscale(self):
        return 1.0 / math.sqrt(self.rho)


def rbf_matrix(X, Y, params: RbfParams) -> np.ndarray:
    """Cross-covariance matrix between the rows of ``X`` and ``Y``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"column mismatch: {X.shape[1]} vs {Y.shape[1]}")
    K = _accel.rbf_cross(X, Y, params.gamma, params.rho)
    if X is Y:
        K = 0.5 * (K + K.T)
    return K


def cholesky(A):
    """Lower Cholesky factor of ``A``, adding diagonal jitter on failure.

    The jitter starts at 1e-10 times the mean diagonal and grows tenfold up to
    1e-4 times the mean diagonal. Returns ``(L, jitter)`` where ``jitter`` is
    the absolute amount added (0 when none was needed).
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix has non-finite entries", jitter=0.0)
    try:
        return linalg.cholesky(A, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(A)))
    if not scale > 0:
        raise NumericalError("matrix has non-positive mean diagonal", jitter=0.0)
    level = JITTER_START
    eye = np.eye(A.shape[0])
    while level <= JITTER_STOP * (1 + 1e-9):
        try:
            return linalg.cholesky(A + level * scale * eye, lower=True, check_finite=False), level * scale
        except linalg.LinAlgError:
            level *= 10.0
    raise NumericalError(
        f"Cholesky failed with jitter up to {JITTER_STOP:g} x mean diagonal", jitter=JITTER_STOP * scale
    )


def chol_solve(L, B):
    return linalg.cho_solve((L, True), B, check_finite=False)


def log_marginal_likelihood(K, y, noise_var=0.0) -> float:
    """Gaussian log evidence of ``y`` under ``N(0, K + noise_var I)``.

    A 2-D ``y`` is treated as independent output columns sharing ``K`` and the
    column log likelihoods are summed.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n) or y.shape[0] != n:
        raise ShapeError(f"K {K.shape} incompatible with y {y.shape}")
    L, _ = cholesky(K + noise_var * np.eye(n))
    Y = y.reshape(n, -1)
    alpha = linalg.solve_triangular(L, Y, lower=True, check_finite=False)
    ncol = Y.shape[1]
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * np.sum(alpha * alpha) - 0.5 * ncol * logdet - 0.5 * n * ncol * LOG_2PI)


def gp_predict(K_ff, K_sf, K_ss, y, noise_var=0.0):
    """Posterior mean and covariance at test locations.

    ``K_ss`` may be the full test covariance or only its diagonal; the returned
    covariance has the same shape as ``K_ss``.
    """
    K_ff = np.asarray(K_ff, dtype=float)
    K_sf = np.atleast_2d(np.asarray(K_sf, dtype=float))
    K_ss = np.asarray(K_ss, dtype=float)
    y = np.asarray(y, dtype=float)
    n = K_ff.shape[0]
    if K_ff.shape != (n, n) or K_sf.shape[1] != n or y.shape[0] != n:
        raise ShapeError("incompatible shapes in gp_predict")
    L, _ = cholesky(K_ff + noise_var * np.eye(n))
    mean = K_sf @ chol_solve(L, y)
    V = linalg.solve_triangular(L, K_sf.T, lower=True, check_finite=False)
    if K_ss.ndim == 1:
        cov = K_ss - np.sum(V * V, axis=0)
    else:
        cov = K_ss - V.T @ V
        cov = 0.5 * (cov + cov.T)
    return mean, cov


@dataclass(frozen=True)
class Optimum:
    x: np.ndarray
    value: float
    n_evals: int


def _axis(lo, hi, use_log, per_decade, linear_points):
    if lo == hi:
        return np.array([lo])
    if use_log:
        decades = math.log10(hi / lo)
        m = max(2, int(math.ceil(decades * per_decade)) + 1)
        return np.logspace(math.log10(lo), math.log10(hi), m)
    return np.linspace(lo, hi, linear_points)


def optimize(objective, bounds, budget=4000, *, log=None, points_per_decade=8, linear_points=17,
             x0=None, grid=True, tol=1e-4) -> Optimum:
    """Maximize ``objective`` over a box by grid search then coordinate descent.

    Parameters
    ----------
    objective : callable
        Maps a parameter vector to a scalar. Non-finite values count as
        ``-inf``.
    bounds : sequence of (lo, hi)
        Finite box. Parameters whose lower bound is positive are searched in
        log space unless ``log`` says otherwise.
    budget : int
        Maximum number of objective evaluations.
    log : sequence of bool, optional
        Per-parameter log-space flag.
    points_per_decade, linear_points : int
        Grid density for log and linear axes. The grid is thinned uniformly
        when it would use more than half the budget.
    x0 : array, optional
        Start point. With ``grid=False`` the grid stage is skipped and the
        descent starts here.
    tol : float
        Final step in log10 units (log axes) or as a fraction of the range
        (linear axes).

    Returns
    -------
    Optimum
        Best vector, its value and the evaluation count. Among equal values the
        lexicographically smallest vector wins, so a constant objective returns
        the lowest grid corner.
    """
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(bounds)) or np.any(bounds[:, 0] > bounds[:, 1]):
        raise ValueError("bounds must be finite with lo <= hi")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    dim = len(bounds)
    if log is None:
        log = [lo > 0 for lo, _ in bounds]
    log = np.asarray(log, dtype=bool)
    if np.any(log & (bounds[:, 0] <= 0)):
        raise ValueError("log-space parameters need positive bounds")

    def to_u(x):
        u = np.array(x, dtype=float)
        u[log] = np.log10(u[log])
        return u

    def from_u(u):
        x = np.array(u, dtype=float)
        x[log] = 10.0 ** x[log]
        return np.clip(x, bounds[:, 0], bounds[:, 1])

    n_evals = 0

    def evaluate(x):
        nonlocal n_evals
        n_evals += 1
        try:
            v = float(objective(x))
        except (NumericalError, linalg.LinAlgError, FloatingPointError):
            return -math.inf
        return v if math.isfinite(v) else -math.inf

    best_x, best_v = None, -math.inf
    axes = [_axis(lo, hi, lg, points_per_decade, linear_points) for (lo, hi), lg in zip(bounds, log)]
    if grid or x0 is None:
        total = math.prod(len(a) for a in axes)
        cap = max(1, budget // 2) if budget > 1 else 1
        if total > cap:
            shrink = (cap / total) ** (1.0 / dim)
            axes = [a if len(a) == 1 else
                    (np.logspace(np.log10(a[0]), np.log10(a[-1]), max(2, int(len(a) * shrink)))
                     if lg else np.linspace(a[0], a[-1], max(2, int(len(a) * shrink))))
                    for a, lg in zip(axes, log)]
        for combo in itertools.product(*axes):
            if n_evals >= budget:
                break
            x = np.array(combo)
            v = evaluate(x)
            if v > best_v:
                best_x, best_v = x, v
        if best_x is None:
            raise OptimizationError("objective is non-finite at every grid point")
    if x0 is not None and (not grid or best_x is None):
        best_x = np.clip(np.asarray(x0, dtype=float), bounds[:, 0], bounds[:, 1])
        best_v = evaluate(best_x)
        if not math.isfinite(best_v):
            raise OptimizationError("objective is non-finite at the start point")

    span = bounds[:, 1] - bounds[:, 0]
    span[log] = np.log10(bounds[log, 1] / bounds[log, 0])
    steps = np.array([
        (np.log10(a[1] / a[0]) if lg else a[1] - a[0]) if len(a) > 1 else 0.0
        for a, lg in zip(axes, log)
    ])
    if not grid and x0 is not None:
        steps = span / 16.0
    stop = np.where(log, tol, tol * span)
    u = to_u(best_x)
    while n_evals < budget and np.any(steps > stop):
        improved = False
        for d in range(dim):
            if steps[d] <= stop[d]:
                continue
            for sign in (-1.0, 1.0):
                if n_evals >= budget:
                    break
                cand_u = u.copy()
                cand_u[d] += sign * steps[d]
                cand = from_u(cand_u)
                if np.array_equal(cand, best_x):
                    continue
                v = evaluate(cand)
                if v > best_v or (v == best_v and tuple(cand) < tuple(best_x)):
                    best_x, best_v, u = cand, v, to_u(cand)
                    improved = True
                    break
        if not improved:
            steps = steps * 0.5
    return Optimum(x=best_x, value=best_v, n_evals=n_evals)


@dataclass(frozen=True)
class ScaledFit:
    """Result of :func:`fit_scaled_kernel`: ``K = scale * C(theta) + noise_var * I``."""

    theta: tuple
    scale: float
    noise_var: float
    lml: float
    n_evals: int


def scaled_lml(C, y, ratio):
    """Log evidence of ``y`` under ``scale * (C + ratio I)`` at the best ``scale``.

    Returns ``(lml, scale)``; the maximizing scale is ``y^T (C + ratio I)^-1 y / n``.
    """
    n = len(y)
    L, _ = cholesky(C + ratio * np.eye(n))
    a = linalg.solve_triangular(L, y, lower=True, check_finite=False)
    scale = float(a @ a) / n
    if not scale > 0:
        raise NumericalError("degenerate data: zero quadratic form")
    logdet = 2.0 * np.sum(np.log(np.diag(L))) + n * math.log(scale)
    return float(-0.5 * n - 0.5 * logdet - 0.5 * n * LOG_2PI), scale


def fit_scaled_kernel(corr, y, bounds, log=None, ratio_bounds=(1e-8, 10.0), fixed_noise=None,
                      var_range=(1e-4, 1e4), budget=2000) -> ScaledFit:
    """Maximize the evidence over kernel parameters, signal scale and noise.

    ``corr(theta)`` returns the unscaled covariance matrix of the training
    inputs. The signal scale is profiled out exactly, so the search runs over
    ``theta`` and the noise-to-signal ratio. With ``fixed_noise`` the search
    runs over ``theta`` and the scale instead. Scale and noise variance are
    confined to ``var_range`` times the variance of ``y``.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    vy = float(np.var(y)) if n > 1 and np.var(y) > 0 else float(np.mean(y * y)) or 1.0
    vlo, vhi = var_range[0] * vy, var_range[1] * vy
    bounds = [tuple(b) for b in bounds]
    log = list(log) if log is not None else [True] * len(bounds)
    k = len(bounds)

    if fixed_noise is None:
        def objective(v):
            C = corr(tuple(v[:k]))
            lml, scale = scaled_lml(C, y, v[k])
            if not (vlo <= scale <= vhi and vlo <= v[k] * scale <= vhi):
                return -math.inf
            return lml
        opt = optimize(objective, bounds + [tuple(ratio_bounds)], budget, log=log + [True])
        _, scale = scaled_lml(corr(tuple(opt.x[:k])), y, opt.x[k])
        noise = opt.x[k] * scale
    else:
        def objective(v):
            return log_marginal_likelihood(v[k] * corr(tuple(v[:k])), y, fixed_noise)
        opt = optimize(objective, bounds + [(vlo, vhi)], budget, log=log + [True])
        scale, noise = float(opt.x[k]), float(fixed_noise)
    if not math.isfinite(opt.value):
        raise OptimizationError("no hyperparameter candidate gave a finite likelihood")
    return ScaledFit(tuple(float(v) for v in opt.x[:k]), float(scale), float(noise), float(opt.value), opt.n_evals)
