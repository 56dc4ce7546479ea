"""Atlas Gaussian processes.

RC-AGP multiplies an ambient RBF kernel elementwise with chart-level heat
kernel values expanded to point level, so two points only correlate strongly
when they are close in space and well connected along the manifold.

S-AGP is the Subset-of-Regressors approximation with a heat kernel estimated
from Brownian paths started at a few inducing points.
"""
from dataclasses import dataclass, field
import hashlib
import math

import numpy as np
from scipy import linalg

from . import _accel
from .bm_sim import simulate_ensemble
from .cover import Cover, PointCloud
from .errors import (AssignmentError, DataError, FitError, NumericalError, OptimizationError,
                     PreconditionError, PredictionError, ShapeError)
from .gp_core import LOG_2PI, chol_solve, cholesky, fit_scaled_kernel, gp_predict, optimize
from .heat_kernel import GridConfig, HeatKernelGrid, NeighborhoodSpec, density_profile, psd_project


@dataclass(frozen=True)
class SubsetAssignment:
    """Primary subset of each point id (``chart[k]`` belongs to ``ids[k]``)."""

    ids: np.ndarray
    chart: np.ndarray

    def __getitem__(self, point_id):
        pos = np.flatnonzero(self.ids == point_id)
        if not len(pos):
            raise AssignmentError(f"point {point_id} is not assigned")
        return int(self.chart[pos[0]])

    def block_sizes(self, n_v):
        return np.bincount(self.chart, minlength=n_v)


def assign(cloud: PointCloud, cover: Cover, ids, centers) -> SubsetAssignment:
    """Assign every id to the containing subset whose centre is nearest.

    ``centers`` holds one ambient point per subset. Equal distances go to the
    lower subset index.
    """
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    centers = np.asarray(centers, dtype=float)
    M = cover.membership(cloud.n)
    if ids.size and (ids.min() < 0 or ids.max() >= cloud.n):
        raise AssignmentError("point id out of range")
    member = M[:, ids].T
    uncovered = np.flatnonzero(~member.any(axis=1))
    if len(uncovered):
        raise AssignmentError(f"points {ids[uncovered][:10].tolist()} are not covered by any subset")
    d = np.sqrt(_accel.sqdist(cloud.points[ids], centers))
    d[~member] = np.inf
    return SubsetAssignment(ids, np.argmin(d, axis=1))


def expand_heat(K_h, assignment: SubsetAssignment, ids=None):
    """Point-level matrix with entry ``(a, b) = K_h[assign(a), assign(b)]``."""
    K_h = np.asarray(K_h, dtype=float)
    a = assignment.chart if ids is None else np.array([assignment[i] for i in ids])
    return K_h[np.ix_(a, a)]


def rc_kernel(K_rbf, K_h_expanded):
    """Elementwise product of the RBF and expanded heat kernel matrices."""
    K_rbf = np.asarray(K_rbf, dtype=float)
    K_h_expanded = np.asarray(K_h_expanded, dtype=float)
    if K_rbf.shape != K_h_expanded.shape:
        raise ShapeError(f"kernel shapes differ: {K_rbf.shape} vs {K_h_expanded.shape}")
    return K_rbf * K_h_expanded


def psd_check(K, tol=1e-10):
    """Smallest eigenvalue of the symmetric matrix ``K``."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError("psd_check needs a square matrix")
    if np.max(np.abs(K - K.T), initial=0.0) > tol * max(1.0, np.max(np.abs(K), initial=0.0)):
        raise PreconditionError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(0.5 * (K + K.T))[0])


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class SearchConfig:
    """Hyperparameter search box.

    ``rho_range`` is relative to ``1 / median squared distance`` between
    labeled points. ``fixed_noise`` pins the noise variance.
    """

    rho_range: tuple = (1e-2, 1e2)
    ratio_range: tuple = (1e-8, 10.0)
    var_range: tuple = (1e-4, 1e4)
    fixed_noise: float = None
    budget: int = 2000


def _rho_bounds(points, search):
    d2 = _accel.sqdist(points, points)
    iu = np.triu_indices(len(points), 1)
    med = float(np.median(d2[iu])) if len(iu[0]) else 1.0
    med = med if med > 0 else 1.0
    return (search.rho_range[0] / med, search.rho_range[1] / med)


@dataclass
class RcAgpModel:
    t: float
    rho: float
    sigma_r2: float
    noise_var: float
    lml: float
    train_ids: np.ndarray
    y: np.ndarray
    assignment: SubsetAssignment
    grid: HeatKernelGrid
    points: np.ndarray = field(repr=False)
    candidates: list = field(default_factory=list, repr=False)
    cover: Cover = field(default=None, repr=False)

    def __post_init__(self):
        K = self._cov(self.train_ids, self.train_ids) + self.noise_var * np.eye(len(self.train_ids))
        self._L, self.jitter = cholesky(K)
        self._alpha = chol_solve(self._L, self.y)

    def _heat(self, a, b):
        return self.grid.matrix(self.t)[np.ix_(a, b)]

    def _charts(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        known = dict(zip(self.assignment.ids.tolist(), self.assignment.chart.tolist()))
        missing = [i for i in ids.tolist() if i not in known]
        if missing:
            if self.cover is None:
                raise PredictionError(f"points {missing[:10]} have no subset assignment")
            try:
                extra = assign(PointCloud(self.points), self.cover, missing, self.grid.centers)
            except AssignmentError as exc:
                raise PredictionError(str(exc)) from None
            known.update(zip(extra.ids.tolist(), extra.chart.tolist()))
        return np.array([known[i] for i in ids.tolist()], dtype=np.int64)

    def _cov(self, ids_a, ids_b):
        ka = _accel.rbf_cross(self.points[ids_a], self.points[ids_b], 1.0, self.rho)
        return self.sigma_r2 * ka * self._heat(self._charts(ids_a), self._charts(ids_b))

    def to_dict(self):
        return {
            "model": "rc-agp", "t": self.t, "rho": self.rho, "sigma_r2": self.sigma_r2,
            "noise_var": self.noise_var, "lml": self.lml, "train_ids": self.train_ids.tolist(),
            "y": self.y.tolist(), "assignment": self.assignment.chart.tolist(),
            "grid_digest": _digest(self.grid.matrices), "data_digest": _digest(self.train_ids, self.y),
        }


def fit_rc_agp(cloud: PointCloud, cover: Cover, grid: HeatKernelGrid, ids, y, search: SearchConfig = None,
               times=None) -> RcAgpModel:
    """Fit RC-AGP hyperparameters by maximum evidence, separately for every grid time.

    Returns the model at the time with the highest evidence. ``times``
    restricts the candidate diffusion times.
    """
    search = search or SearchConfig()
    ids = np.asarray(ids, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    if ids.shape != y.shape or len(ids) < 2:
        raise DataError("labeled ids and values must be 1-D with matching length >= 2")
    if len(grid.times) == 0:
        raise PreconditionError("heat kernel grid has no times")
    asg = assign(cloud, cover, ids, grid.centers)
    X = cloud.points[ids]
    D2 = _accel.sqdist(X, X)
    bounds = [_rho_bounds(X, search)]
    candidates = []
    for t in (grid.times if times is None else times):
        Kh = expand_heat(grid.matrix(t), asg)

        def corr(theta, Kh=Kh):
            return np.exp(-theta[0] * D2) * Kh
        try:
            fit = fit_scaled_kernel(corr, y, bounds, ratio_bounds=search.ratio_range, fixed_noise=search.fixed_noise,
                                    var_range=search.var_range, budget=search.budget)
        except (NumericalError, OptimizationError) as exc:
            candidates.append((float(t), None, str(exc)))
            continue
        candidates.append((float(t), fit, None))
    ok = [(t, f) for t, f, _ in candidates if f is not None]
    if not ok:
        raise FitError("no diffusion time gave a positive definite covariance")
    t, fit = max(ok, key=lambda z: (z[1].lml, -z[0]))
    return RcAgpModel(t, fit.theta[0], fit.scale, fit.noise_var, fit.lml, ids, y, asg, grid,
                      cloud.points, candidates, cover)


def predict_rc_agp(model: RcAgpModel, test_ids):
    """Posterior mean and variance of the latent function at cloud points ``test_ids``."""
    test_ids = np.asarray(test_ids, dtype=np.int64).reshape(-1)
    if test_ids.size and (test_ids.min() < 0 or test_ids.max() >= len(model.points)):
        raise PredictionError("test id out of range")
    K_sf = model._cov(test_ids, model.train_ids)
    mean = K_sf @ model._alpha
    c = model._charts(test_ids)
    prior = model.sigma_r2 * model.grid.matrix(model.t)[c, c]
    v = linalg.solve_triangular(model._L, K_sf.T, lower=True, check_finite=False)
    var = prior - np.sum(v * v, axis=0)
    return mean, np.maximum(var, -1e-10)


# ---------------------------------------------------------------- sparse (SoR)


@dataclass(frozen=True)
class SAgpConfig:
    times: tuple = (0.5, 1.0, 2.0)
    n_paths: int = 2000
    dt: float = 1e-2
    seed: int = 0
    spec: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)
    ratio_range: tuple = (1e-8, 10.0)
    var_range: tuple = (1e-4, 1e4)
    fixed_noise: float = None


def point_targets(atlas, assignment: SubsetAssignment):
    """``(chart, latent)`` of each assigned point: its training latent in its primary chart."""
    out = []
    for pid, c in zip(assignment.ids.tolist(), assignment.chart.tolist()):
        chart = atlas.charts[c]
        row = np.flatnonzero(chart.subset_ids == pid)
        if not len(row):
            raise AssignmentError(f"point {pid} is not a member of chart {c}")
        out.append((c, chart.latent[row[0]]))
    return out


def heat_rows(atlas, cloud, cover, centers, start_ids, target_ids, config: SAgpConfig):
    """Heat kernel estimates from every start id to every target id, per time.

    Returns an array of shape ``(len(times), len(start_ids), len(target_ids))``.
    """
    gc = GridConfig(times=tuple(config.times), n_paths=config.n_paths, dt=config.dt, seed=config.seed,
                    spec=config.spec)
    sde = gc.sde()
    steps = [sde.step_of(t) for t in config.times]
    starts = point_targets(atlas, assign(cloud, cover, start_ids, centers))
    targets = point_targets(atlas, assign(cloud, cover, target_ids, centers))
    ens = simulate_ensemble(atlas, starts, sde, record_steps=steps, start_keys=list(map(int, start_ids)))
    H = np.zeros((len(config.times), len(starts), len(targets)))
    for k, t in enumerate(config.times):
        for i, e in enumerate(ens):
            H[k, i] = density_profile(atlas, e, t, targets, config.spec).values
    return H


class FlopCounter:
    """Rough multiply-add counts of the dense linear algebra in an S-AGP fit."""

    def __init__(self):
        self.counts = {}

    def add(self, name, n):
        self.counts[name] = self.counts.get(name, 0) + int(n)

    @property
    def total(self):
        return sum(self.counts.values())


@dataclass
class SAgpModel:
    inducing_ids: np.ndarray
    t: float
    rescale: float
    noise_var: float
    lml: float
    Phi_basis: np.ndarray = field(repr=False)  # U Lambda^-1/2 for the chosen time
    A_chol: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    flops: FlopCounter = field(default=None, repr=False)

    def features(self, Sigma_su):
        """Low-rank features ``Sigma_su U Lambda^-1/2`` of test rows."""
        return np.asarray(Sigma_su, dtype=float) @ self.Phi_basis


RANK_TOL = 1e-10  # relative eigenvalue cut for the inducing covariance


def _range_basis(S):
    """Eigenvectors and eigenvalues of PSD ``S`` above ``RANK_TOL`` times the largest."""
    lam, U = np.linalg.eigh(S)
    keep = lam > RANK_TOL * lam[-1] if lam[-1] > 0 else np.zeros(len(lam), dtype=bool)
    return U[:, keep], lam[keep]


def _sor_basis(S_uu, flops):
    # Projected Monte-Carlo matrices are singular as a rule. Dropping the null
    # space (rather than adding jitter) keeps test rows with components there
    # from being amplified by 1 / jitter.
    S_uu = psd_project(S_uu)
    m = len(S_uu)
    U, lam = _range_basis(S_uu)
    flops.add("eigh_uu", 9 * m**3)
    if not len(lam):
        raise FitError("inducing covariance is zero after PSD projection")
    return S_uu, U / np.sqrt(lam)


def _sor_lml(Phi, y, ratio, flops=None):
    """Profiled log evidence under ``scale * (Phi Phi^T + ratio I)`` via Woodbury."""
    n, r = Phi.shape
    A = Phi.T @ Phi + ratio * np.eye(r)
    L, _ = cholesky(A)
    b = linalg.solve_triangular(L, Phi.T @ y, lower=True, check_finite=False)
    quad = (y @ y - b @ b) / ratio
    if flops is not None:
        flops.add("gram", n * r * r)
        flops.add("chol_A", r**3 // 3)
    scale = quad / n
    if not scale > 0:
        raise NumericalError("degenerate quadratic form")
    logdet = (n - r) * math.log(ratio) + 2.0 * np.sum(np.log(np.diag(L))) + n * math.log(scale)
    return float(-0.5 * n - 0.5 * logdet - 0.5 * n * LOG_2PI), scale, L


def fit_s_agp_from_matrices(S_uu, S_fu, y, times, config: SAgpConfig = None, inducing_ids=None) -> SAgpModel:
    """Fit S-AGP given heat matrices ``S_uu[k]`` (m x m) and ``S_fu[k]`` (n x m) for each time."""
    config = config or SAgpConfig()
    y = np.asarray(y, dtype=float)
    S_uu = np.asarray(S_uu, dtype=float)
    S_fu = np.asarray(S_fu, dtype=float)
    n = len(y)
    vy = float(np.var(y)) if np.var(y) > 0 else 1.0
    vlo, vhi = config.var_range[0] * vy, config.var_range[1] * vy
    best = None
    flops = FlopCounter()
    for k, t in enumerate(times):
        try:
            _, basis = _sor_basis(S_uu[k], flops)
        except FitError:
            continue
        Phi = S_fu[k] @ basis
        flops.add("features", n * basis.shape[0] * basis.shape[1])
        if config.fixed_noise is None:
            def objective(v, Phi=Phi):
                lml, scale, _ = _sor_lml(Phi, y, v[0], flops)
                if not (vlo <= scale <= vhi and vlo <= v[0] * scale <= vhi):
                    return -math.inf
                return lml
            opt = optimize(objective, [config.ratio_range], 400, log=[True])
            if not math.isfinite(opt.value):
                continue
            _, scale, _ = _sor_lml(Phi, y, opt.x[0])
            noise = opt.x[0] * scale
        else:
            noise = float(config.fixed_noise)

            def objective(v, Phi=Phi):
                return _sor_lml_fixed(Phi, y, v[0], noise, flops)
            opt = optimize(objective, [(vlo, vhi)], 400, log=[True])
            if not math.isfinite(opt.value):
                continue
            scale = float(opt.x[0])
        if best is None or opt.value > best[0]:
            best = (opt.value, float(t), scale, noise, basis, Phi)
    if best is None:
        raise FitError("inducing covariance is singular or zero at every diffusion time")
    lml, t, scale, noise, basis, Phi = best
    ratio = noise / scale
    r = Phi.shape[1]
    A = Phi.T @ Phi + ratio * np.eye(r)
    L, _ = cholesky(A)
    beta = chol_solve(L, Phi.T @ y)
    ids = np.arange(S_uu.shape[1]) if inducing_ids is None else np.asarray(inducing_ids)
    return SAgpModel(ids, t, scale, noise, lml, basis, L, beta, flops)


def _sor_lml_fixed(Phi, y, scale, noise, flops=None):
    return _sor_lml_general(math.sqrt(scale) * Phi, y, noise, flops)


def _sor_lml_general(Phi, y, noise, flops=None):
    n, r = Phi.shape
    A = Phi.T @ Phi + noise * np.eye(r)
    L, _ = cholesky(A)
    b = linalg.solve_triangular(L, Phi.T @ y, lower=True, check_finite=False)
    if flops is not None:
        flops.add("gram", n * r * r)
    quad = (y @ y - b @ b) / noise
    logdet = (n - r) * math.log(noise) + 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * quad - 0.5 * logdet - 0.5 * n * LOG_2PI)


def predict_s_agp_from_matrix(model: SAgpModel, S_su, S_ss_diag=None):
    """SoR predictive mean and variance for test rows of heat values ``S_su`` (n* x m).

    Without ``S_ss_diag`` the variance is that of the low-rank prior
    (``Q_**``), the usual SoR predictive variance.
    """
    F = model.features(S_su)
    mean = F @ model.beta
    v = linalg.solve_triangular(model.A_chol, F.T, lower=True, check_finite=False)
    var = model.noise_var * np.sum(v * v, axis=0)
    return mean, np.maximum(var, -1e-10)


@dataclass
class SAgpFit:
    """S-AGP model together with the data needed to predict at cloud points."""

    model: SAgpModel
    heat_u: np.ndarray  # times x m x n_cloud heat values from the inducing starts
    S_uu: np.ndarray  # times x m x m, projected
    time_index: int


def fit_s_agp(atlas, cloud, cover, centers, inducing_ids, ids, y, config: SAgpConfig = None) -> SAgpFit:
    """Fit S-AGP on labeled cloud points using paths from the inducing points.

    Raises
    ------
    PreconditionError
        If some chart holds no inducing point.
    """
    config = config or SAgpConfig()
    inducing_ids = np.asarray(inducing_ids, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    asg_u = assign(cloud, cover, inducing_ids, centers)
    if len(set(asg_u.chart.tolist())) < atlas.n_charts:
        missing = sorted(set(range(atlas.n_charts)) - set(asg_u.chart.tolist()))
        raise PreconditionError(f"charts {missing} contain no inducing point")
    H = heat_rows(atlas, cloud, cover, centers, inducing_ids, np.arange(cloud.n), config)
    S_uu = np.stack([psd_project(Hk[:, inducing_ids]) for Hk in H])
    S_fu = _consistent_fu(H[:, :, ids], S_uu, ids, inducing_ids)
    model = fit_s_agp_from_matrices(S_uu, S_fu, y, config.times, config, inducing_ids)
    k = int(np.flatnonzero(np.isclose(config.times, model.t))[0])
    return SAgpFit(model, H, S_uu, k)


def _consistent_fu(H_uf, S_uu, ids, inducing_ids):
    """``Sigma_fu`` per time from raw estimates ``H_uf`` (times x m x n) and projected ``S_uu``.

    Rows of labeled points that are themselves inducing points are replaced by
    the matching row of the projected ``Sigma_uu``, so that choosing the
    inducing set equal to the labeled set reproduces the dense model exactly.
    """
    out = np.swapaxes(H_uf, 1, 2).copy()
    pos = {int(u): k for k, u in enumerate(inducing_ids)}
    for r, i in enumerate(ids):
        u = pos.get(int(i))
        if u is not None:
            for k in range(out.shape[0]):
                out[k, r] = S_uu[k][u]
    return out


def predict_s_agp(fit: SAgpFit, test_ids):
    """SoR predictive mean and variance at cloud points ``test_ids``."""
    test_ids = np.asarray(test_ids, dtype=np.int64)
    k = fit.time_index
    S_su = _consistent_fu(fit.heat_u[k:k + 1][:, :, test_ids], fit.S_uu[k:k + 1], test_ids,
                          fit.model.inducing_ids)[0]
    return predict_s_agp_from_matrix(fit.model, S_su)


def heat_gp_predict(S_ff, S_sf, y, rescale, noise_var):
    """Dense GP with covariance ``rescale * S`` (for checking the sparse approximation).

    ``S_ff`` is PSD-projected. Test rows ``S_sf`` are projected onto its range,
    since a cross-covariance with components in the null space of ``S_ff`` is
    not part of any valid joint covariance.
    """
    S_ff = psd_project(np.asarray(S_ff, dtype=float))
    S_sf = np.atleast_2d(np.asarray(S_sf, dtype=float))
    U, _ = _range_basis(S_ff)
    mean, _ = gp_predict(rescale * S_ff, rescale * (S_sf @ U) @ U.T, np.zeros(len(S_sf)), y, noise_var)
    return mean
