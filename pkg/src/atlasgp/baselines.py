"""Reference regressors: an ambient RBF GP and a graph-Laplacian heat kernel GP.

The graph-Laplacian model is a simplified baseline in the diffusion-maps
style (kNN graph, Gaussian weights, random-walk normalization), not a port of
any particular published package.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import _accel
from .cover import PointCloud
from .errors import BaselineError, PreconditionError
from .gp_core import fit_scaled_kernel, gp_predict
from .agp import SearchConfig, _rho_bounds


def _rmse(mean, truth):
    if truth is None:
        return None
    return float(np.sqrt(np.mean((np.asarray(mean) - np.asarray(truth)) ** 2)))


@dataclass
class BaselineResult:
    mean: np.ndarray
    var: np.ndarray
    rmse: float
    params: dict


def euclidean_gp_fit_predict(cloud: PointCloud, ids, y, test_ids, search: SearchConfig = None,
                             truth=None) -> BaselineResult:
    """RBF GP on ambient coordinates with evidence-maximizing hyperparameters."""
    search = search or SearchConfig()
    ids = np.asarray(ids, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    X = cloud.points[ids]
    Xs = cloud.points[np.asarray(test_ids, dtype=np.int64)]
    D2 = _accel.sqdist(X, X)
    if len(ids) == 1:
        rho, scale, noise = 1.0, float(y @ y) or 1.0, search.fixed_noise or 0.0
    else:
        fit = fit_scaled_kernel(lambda th: np.exp(-th[0] * D2), y, [_rho_bounds(X, search)],
                                ratio_bounds=search.ratio_range, fixed_noise=search.fixed_noise,
                                var_range=search.var_range, budget=search.budget)
        rho, scale, noise = fit.theta[0], fit.scale, fit.noise_var
    mean, var = euclidean_gp_predict(X, y, Xs, rho, scale, noise)
    return BaselineResult(mean, var, _rmse(mean, truth), {"rho": rho, "scale": scale, "noise_var": noise})


def euclidean_gp_predict(X, y, Xs, rho, scale, noise_var):
    """Posterior mean and variance of an RBF GP with fixed hyperparameters."""
    K = _accel.rbf_cross(X, X, scale, rho)
    K_sf = _accel.rbf_cross(Xs, X, scale, rho)
    mean, var = gp_predict(0.5 * (K + K.T), K_sf, np.full(len(Xs), scale), y, noise_var)
    return mean, np.maximum(var, -1e-10)


@dataclass(frozen=True)
class GlConfig:
    """Graph construction and spectrum size.

    ``bandwidth=None`` uses the median squared distance over kNN edges.
    ``n_eigs=None`` keeps the full spectrum. ``t=None`` lets the GP fit choose
    the diffusion time (in graph units) by maximum evidence.
    """

    bandwidth: float = None
    k_neighbors: int = 10
    n_eigs: int = None
    t: float = None

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise PreconditionError("bandwidth must be positive")
        if self.k_neighbors < 1:
            raise PreconditionError("k_neighbors must be >= 1")
        if self.n_eigs is not None and self.n_eigs < 1:
            raise PreconditionError("n_eigs must be >= 1")


@dataclass
class GraphSpectrum:
    """Eigenpairs of ``L_rw = I - D^-1 W`` (ascending) and the graph data."""

    eigvals: np.ndarray
    psi: np.ndarray  # right eigenvectors of L_rw, D-orthonormal
    degrees: np.ndarray
    bandwidth: float

    def kernel(self, t, rows=None, cols=None):
        """``sum_i exp(-lambda_i t) psi_i psi_i^T`` restricted to ``rows x cols``."""
        a = self.psi if rows is None else self.psi[rows]
        b = self.psi if cols is None else self.psi[cols]
        return (a * np.exp(-self.eigvals * t)) @ b.T


def graph_spectrum(cloud: PointCloud, config: GlConfig = None) -> GraphSpectrum:
    """Symmetric kNN graph with weights ``exp(-d^2 / eps)`` and its random-walk spectrum.

    Raises
    ------
    BaselineError
        If the graph is disconnected.
    """
    config = config or GlConfig()
    n = cloud.n
    if config.n_eigs is not None and config.n_eigs > n:
        raise PreconditionError("n_eigs exceeds the number of points")
    k = min(config.k_neighbors, n - 1)
    d, nb = cKDTree(cloud.points).query(cloud.points, k=k + 1)
    rows = np.repeat(np.arange(n), k)
    cols = nb[:, 1:].ravel()
    d2 = d[:, 1:].ravel() ** 2
    eps = config.bandwidth if config.bandwidth is not None else float(np.median(d2))
    A = coo_matrix((np.exp(-d2 / eps), (rows, cols)), shape=(n, n)).toarray()
    W = np.maximum(A, A.T)
    if connected_components(W > 0, directed=False)[0] > 1:
        raise BaselineError(f"kNN graph with k={k} is disconnected; increase k_neighbors")
    deg = W.sum(axis=1)
    s = 1.0 / np.sqrt(deg)
    L_sym = np.eye(n) - s[:, None] * W * s[None, :]
    lam, phi = linalg.eigh(0.5 * (L_sym + L_sym.T))
    lam = np.maximum(lam, 0.0)
    m = n if config.n_eigs is None else config.n_eigs
    return GraphSpectrum(lam[:m], s[:, None] * phi[:, :m], deg, eps)


def gl_heat_density(cloud: PointCloud, start_id, t, q, config: GlConfig = None, spectrum=None):
    """Heat kernel of ``0.5 * Laplacian`` at time ``t`` from ``start_id`` to every point.

    The random walk generated by ``L_rw`` approximates ``(eps / 4)`` times the
    Laplacian, so graph time ``2 t / eps`` matches diffusion time ``t``. Each
    node stands for an area ``(pi eps)^(q/2) / degree``.
    """
    spec = spectrum or graph_spectrum(cloud, config)
    s = 2.0 * t / spec.bandwidth
    # P_s(i, j) = [exp(-s L_rw)]_ij = sum_k exp(-s lam_k) psi_k(i) psi_k(j) d_j
    row = (spec.psi[start_id] * np.exp(-spec.eigvals * s)) @ spec.psi.T * spec.degrees
    area = (math.pi * spec.bandwidth) ** (0.5 * q) / spec.degrees
    return row / area


def gl_heat_gp_fit_predict(cloud: PointCloud, ids, y, test_ids, config: GlConfig = None,
                           search: SearchConfig = None, truth=None, t_range=(1e-2, 1e3)) -> BaselineResult:
    """GP whose covariance is the graph-Laplacian heat kernel."""
    config = config or GlConfig()
    search = search or SearchConfig()
    spec = graph_spectrum(cloud, config)
    ids = np.asarray(ids, dtype=np.int64)
    test_ids = np.asarray(test_ids, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    if config.t is None:
        fit = fit_scaled_kernel(lambda th: spec.kernel(th[0], ids, ids), y, [t_range],
                                ratio_bounds=search.ratio_range, fixed_noise=search.fixed_noise,
                                var_range=search.var_range, budget=search.budget)
        t, scale, noise = fit.theta[0], fit.scale, fit.noise_var
    else:
        fit = fit_scaled_kernel(lambda th: spec.kernel(config.t, ids, ids), y, [(1.0, 1.0)],
                                ratio_bounds=search.ratio_range, fixed_noise=search.fixed_noise,
                                var_range=search.var_range, budget=search.budget)
        t, scale, noise = config.t, fit.scale, fit.noise_var
    K = scale * spec.kernel(t, ids, ids)
    K_sf = scale * spec.kernel(t, test_ids, ids)
    K_ss = scale * np.einsum("ij,ij,j->i", spec.psi[test_ids], spec.psi[test_ids], np.exp(-spec.eigvals * t))
    mean, var = gp_predict(0.5 * (K + K.T), K_sf, K_ss, y, noise)
    return BaselineResult(mean, np.maximum(var, -1e-10), _rmse(mean, truth),
                          {"t": t, "scale": scale, "noise_var": noise, "bandwidth": spec.bandwidth})
