"""Charts: maps between a low-dimensional latent space and the ambient space.

Four kinds are provided. ``gplvm`` charts are learned from a subset of the
cloud with a Gaussian-process latent variable model; ``identity`` charts are
used when the latent and ambient dimensions agree; ``analytic_circle`` and
``analytic_torus`` charts are exact parametrisations used as references.

All charts share a batched interface (``forward_batch``, ``metric_batch`` and
so on) that the path simulator relies on. The module-level functions
(:func:`forward`, :func:`expected_metric`, ...) are the single-point API.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree

from . import _accel
from .cover import PointCloud, isomap_project, pca_project
from .errors import BackwardMapError, NotApplicableError, NumericalError, PreconditionError, TrainingError
from .gp_core import LOG_2PI, RbfParams, cholesky, optimize
from .oracles import torus_angles, torus_drift, torus_embed, torus_metric

METRIC_FLOOR = 1e-8
_CHUNK = 4096


@dataclass(frozen=True)
class JacobianDist:
    """Gaussian distribution of the chart Jacobian at one latent point.

    Every row of the ``p x q`` Jacobian has mean ``mean[l]`` and covariance
    ``cov``.
    """

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class MetricTensor:
    G: np.ndarray
    det_G: float
    inv_G: np.ndarray
    inv_sqrt_G: np.ndarray


def metric_parts(G):
    """Symmetrize and floor a batch of metrics.

    Returns ``(G, det, inv, inv_sqrt)`` for an array of shape ``(B, q, q)``.
    Eigenvalues below ``1e-8 * trace / q`` are raised to that floor.
    """
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    q = G.shape[-1]
    lam, V = np.linalg.eigh(G)
    floor = METRIC_FLOOR * np.trace(G, axis1=-2, axis2=-1)[..., None] / q
    floor = np.maximum(floor, np.finfo(float).tiny)
    clipped = lam < floor
    lam = np.maximum(lam, floor)
    if clipped.any():
        rows = clipped.any(axis=-1)
        G = G.copy()
        G[rows] = np.einsum("bij,bj,bkj->bik", V[rows], lam[rows], V[rows])
    det = np.prod(lam, axis=-1)
    inv = np.einsum("bij,bj,bkj->bik", V, 1.0 / lam, V)
    inv_sqrt = np.einsum("bij,bj,bkj->bik", V, 1.0 / np.sqrt(lam), V)
    return G, det, inv, inv_sqrt


def _wrap_angle(a):
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


def _median_nn(X):
    if len(X) < 2:
        return 1.0
    d, _ = cKDTree(X).query(X, k=2)
    m = float(np.median(d[:, 1]))
    return m if m > 0 else 1.0


class Chart:
    """Common interface. Subclasses implement the batched methods."""

    kind = None

    def __init__(self, subset_ids, latent, ambient):
        self.subset_ids = np.asarray(subset_ids, dtype=np.int64)
        self.latent = np.ascontiguousarray(latent, dtype=float)
        self.ambient = np.ascontiguousarray(ambient, dtype=float)
        if self.latent.shape[0] != self.subset_ids.size or self.ambient.shape[0] != self.subset_ids.size:
            raise PreconditionError("latent, ambient and subset_ids must have matching lengths")
        self._spacing = None

    @property
    def q(self):
        return self.latent.shape[1]

    @property
    def p(self):
        return self.ambient.shape[1]

    @property
    def periods(self):
        """Period of each latent coordinate (0 for non-periodic)."""
        return np.zeros(self.q)

    @property
    def latent_spacing(self):
        """Median nearest-neighbour distance between training latents."""
        if self._spacing is None:
            self._spacing = _median_nn(self.latent)
        return self._spacing

    @property
    def latent_scale(self):
        """Root-mean-square distance of the training latents from their mean."""
        if not len(self.latent):
            return 1.0
        c = self.latent - self.latent.mean(axis=0)
        s = float(np.sqrt(np.mean(np.sum(c * c, axis=1))))
        return s if s > 0 else 1.0

    def wrap(self, X):
        return X

    def latent_diff(self, X, x0):
        """``X - x0`` with periodic coordinates wrapped to the short way round."""
        return np.asarray(X) - np.asarray(x0)

    def forward_batch(self, X):
        raise NotImplementedError

    def backward_batch(self, S):
        raise NotImplementedError

    def jacobian_batch(self, X):
        raise NotImplementedError

    def metric_batch(self, X):
        """Expected metric ``E[J]^T E[J] + p * cov`` (before flooring) and predictive variance."""
        EJ, cov, var = self.jacobian_batch(X)
        G = np.einsum("bpi,bpj->bij", EJ, EJ) + self.p * cov
        return G, var

    def in_boundary_batch(self, X):
        raise NotImplementedError

    def analytic_drift_batch(self, X):
        """Exact drift when the chart knows it, else ``None``."""
        return None

    def to_dict(self):
        raise NotImplementedError


class GplvmChart(Chart):
    """Gaussian-process map from latent coordinates to a centered ambient subset.

    The forward mean is ``offset + K(x, X) (K + noise I)^-1 (S - offset)``,
    where ``offset`` is the subset mean. Training ``S`` is centered so that far
    from the data the map reverts to the subset mean rather than the origin.
    """

    kind = "gplvm"

    def __init__(self, subset_ids, latent, ambient, params: RbfParams, threshold=None, offset=None,
                 log_likelihood=None, history=None):
        super().__init__(subset_ids, latent, ambient)
        self.params = params
        self.offset = self.ambient.mean(axis=0) if offset is None else np.asarray(offset, dtype=float)
        self.threshold = 0.5 * params.gamma if threshold is None else float(threshold)
        if not 0 < self.threshold <= params.gamma * (1 + 1e-12):
            raise PreconditionError("boundary threshold must lie in (0, gamma]")
        self.log_likelihood = log_likelihood
        self.history = list(history or [])
        self._prepare()

    def _prepare(self):
        g, rho, nv = self.params.gamma, self.params.rho, self.params.noise_var
        n = self.latent.shape[0]
        K = _accel.rbf_cross(self.latent, self.latent, g, rho)
        K = 0.5 * (K + K.T) + nv * np.eye(n)
        self._L, self.jitter = cholesky(K)
        Kinv = linalg.cho_solve((self._L, True), np.eye(n), check_finite=False)
        self._Kinv = 0.5 * (Kinv + Kinv.T)
        self._alpha = self._Kinv @ (self.ambient - self.offset)
        self._tree = cKDTree(self.ambient)

    def _kernel_terms(self, X, jacobian):
        g, rho = self.params.gamma, self.params.rho
        k = _accel.rbf_cross(X, self.latent, g, rho)
        mean = k @ self._alpha + self.offset
        if not jacobian:
            var = g - np.einsum("bn,bn->b", k @ self._Kinv, k)
            return mean, np.maximum(var, 0.0)
        B, q = X.shape
        D = 2.0 * rho * (self.latent.T[None, :, :] - X[:, :, None]) * k[:, None, :]  # B x q x n
        stack = np.concatenate([k[:, None, :], D], axis=1).reshape(B * (q + 1), -1)
        W = (stack @ self._Kinv).reshape(B, q + 1, -1)
        var = np.maximum(g - np.einsum("bn,bn->b", W[:, 0], k), 0.0)
        EJ = np.swapaxes(D @ self._alpha, 1, 2)
        cov = 2.0 * rho * g * np.eye(q)[None] - W[:, 1:] @ np.swapaxes(D, 1, 2)
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        return mean, var, EJ, cov

    def _chunked(self, X, jacobian):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(X) <= _CHUNK:
            return self._kernel_terms(X, jacobian)
        parts = [self._kernel_terms(X[i:i + _CHUNK], jacobian) for i in range(0, len(X), _CHUNK)]
        return tuple(np.concatenate(z, axis=0) for z in zip(*parts))

    def forward_batch(self, X):
        return self._chunked(X, False)

    def jacobian_batch(self, X):
        _, var, EJ, cov = self._chunked(X, True)
        return EJ, cov, var

    def metric_batch(self, X):
        _, var, EJ, cov = self._chunked(X, True)
        G = np.einsum("bpi,bpj->bij", EJ, EJ) + self.p * cov
        return G, var

    def in_boundary_batch(self, X):
        return self.forward_batch(X)[1] <= self.threshold

    def log_predictive(self, X, S):
        """``log N(s | mean(x), (var(x) + noise) I)`` row-wise."""
        mean, var = self.forward_batch(X)
        v = var + self.params.noise_var
        v = np.maximum(v, 1e-300)
        r2 = np.sum((S - mean) ** 2, axis=1)
        return -0.5 * self.p * (np.log(v) + LOG_2PI) - 0.5 * r2 / v

    def _mean_jacobian(self, X):
        """Forward mean and ``E[J]`` only (no variance terms)."""
        k = _accel.rbf_cross(X, self.latent, self.params.gamma, self.params.rho)
        D = 2.0 * self.params.rho * (self.latent.T[None, :, :] - X[:, :, None]) * k[:, None, :]
        return k @ self._alpha + self.offset, np.swapaxes(D @ self._alpha, 1, 2)

    def backward_batch(self, S, gn_iters=8, cd_rounds=6):
        """Latent points maximizing the predictive likelihood of each row of ``S``.

        Starts at the latent of the nearest training point, takes damped
        Gauss-Newton steps on the mean residual, then polishes the exact
        objective by coordinate descent with a shrinking step.
        """
        S = np.atleast_2d(np.asarray(S, dtype=float))
        _, nn = self._tree.query(S)
        X = self.latent[nn].copy()
        best = self.log_predictive(X, S)
        if not np.all(np.isfinite(best)):
            raise BackwardMapError("non-finite backward objective at the initial point")
        q = self.q
        eye = 1e-6 * np.eye(q)
        tiny = 1e-9 * self.latent_spacing
        active = np.arange(len(S))
        for _ in range(gn_iters):
            if not len(active):
                break
            mean, EJ = self._mean_jacobian(X[active])
            r = S[active] - mean
            JtJ = np.swapaxes(EJ, 1, 2) @ EJ
            scale = np.trace(JtJ, axis1=1, axis2=2)[:, None, None] / q + 1e-300
            step = np.linalg.solve(JtJ + scale * eye, (np.swapaxes(EJ, 1, 2) @ r[..., None]))[..., 0]
            cand = X[active] + step
            val = self.log_predictive(cand, S[active])
            better = val > best[active]
            X[active[better]] = cand[better]
            best[active[better]] = val[better]
            active = active[better & (np.abs(step).max(axis=1) > tiny)]
        h = np.full(len(S), 0.1 * self.latent_spacing)
        active = np.arange(len(S))
        for _ in range(cd_rounds):
            if not len(active):
                break
            moved = np.zeros(len(active), dtype=bool)
            for d in range(q):
                for sign in (-1.0, 1.0):
                    cand = X[active].copy()
                    cand[:, d] += sign * h[active]
                    val = self.log_predictive(cand, S[active])
                    better = val > best[active]
                    X[active[better]] = cand[better]
                    best[active[better]] = val[better]
                    moved |= better
            h[active[~moved]] *= 0.25
        if not np.all(np.isfinite(best)):
            raise BackwardMapError("non-finite backward objective")
        return X

    def to_dict(self):
        return {
            "kind": self.kind,
            "subset_ids": self.subset_ids.tolist(),
            "latent": self.latent.tolist(),
            "ambient": self.ambient.tolist(),
            "offset": self.offset.tolist(),
            "params": {"gamma": self.params.gamma, "rho": self.params.rho, "noise_var": self.params.noise_var},
            "threshold": self.threshold,
            "log_likelihood": self.log_likelihood,
        }


class IdentityChart(Chart):
    """Latent coordinates are the ambient coordinates themselves.

    The chart domain is the bounding box of the subset widened by ``margin``
    (default: half the median nearest-neighbour spacing). With
    ``support_radius`` set, a point must additionally lie within that distance
    of some subset member, which keeps walkers out of gaps inside the box.
    """

    kind = "identity"

    def __init__(self, subset_ids, ambient, margin=None, support_radius=None):
        super().__init__(subset_ids, ambient, ambient)
        self.margin = 0.5 * self.latent_spacing if margin is None else float(margin)
        self.support_radius = support_radius
        self.lo = self.ambient.min(axis=0) - self.margin
        self.hi = self.ambient.max(axis=0) + self.margin
        self._tree = cKDTree(self.ambient) if support_radius is not None else None

    def forward_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X.copy(), np.zeros(len(X))

    def backward_batch(self, S):
        return np.atleast_2d(np.asarray(S, dtype=float)).copy()

    def jacobian_batch(self, X):
        raise NotApplicableError("identity charts have no Jacobian distribution; the metric is the identity")

    def metric_batch(self, X):
        X = np.atleast_2d(X)
        return np.broadcast_to(np.eye(self.q), (len(X), self.q, self.q)).copy(), np.zeros(len(X))

    def in_boundary_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ok = np.all((X >= self.lo) & (X <= self.hi), axis=1)
        if self._tree is not None and ok.any():
            d, _ = self._tree.query(X[ok])
            ok[ok] = d <= self.support_radius
        return ok

    def analytic_drift_batch(self, X):
        return np.zeros((len(np.atleast_2d(X)), self.q))

    def to_dict(self):
        return {"kind": self.kind, "subset_ids": self.subset_ids.tolist(), "ambient": self.ambient.tolist(),
                "margin": self.margin, "support_radius": self.support_radius}


class CircleChart(Chart):
    """Exact chart of the unit circle around angle ``offset``.

    ``param="angle"`` uses the angle relative to ``offset``; ``"half_tangent"``
    uses ``v = tan((angle - offset) / 2)``, a non-isometric coordinate with a
    non-zero drift. The domain covers angles within ``half_width`` of the
    offset.
    """

    kind = "analytic_circle"

    def __init__(self, offset=0.0, half_width=0.75 * math.pi, param="angle", subset_ids=None, ambient=None):
        if param not in ("angle", "half_tangent"):
            raise PreconditionError(f"unknown circle parametrisation {param!r}")
        if not 0 < half_width < math.pi:
            raise PreconditionError("half_width must lie in (0, pi)")
        self.offset = float(offset)
        self.half_width = float(half_width)
        self.param = param
        if ambient is None:
            subset_ids, ambient = np.zeros(0, dtype=np.int64), np.zeros((0, 2))
        ambient = np.asarray(ambient, dtype=float).reshape(-1, 2)
        super().__init__(subset_ids, self._to_latent(ambient), ambient)

    def _angle(self, X):
        u = np.asarray(X, dtype=float)[:, 0]
        return self.offset + (u if self.param == "angle" else 2.0 * np.arctan(u))

    def _to_latent(self, S):
        a = _wrap_angle(np.arctan2(S[:, 1], S[:, 0]) - self.offset)
        return (a if self.param == "angle" else np.tan(0.5 * a))[:, None]

    def forward_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = self._angle(X)
        return np.stack([np.cos(a), np.sin(a)], axis=1), np.zeros(len(X))

    def backward_batch(self, S):
        return self._to_latent(np.atleast_2d(np.asarray(S, dtype=float)))

    def _speed(self, X):
        u = np.asarray(X, dtype=float)[:, 0]
        return np.ones_like(u) if self.param == "angle" else 2.0 / (1.0 + u * u)

    def jacobian_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = self._angle(X)
        c = self._speed(X)
        EJ = np.stack([-np.sin(a) * c, np.cos(a) * c], axis=1)[:, :, None]
        return EJ, np.zeros((len(X), 1, 1)), np.zeros(len(X))

    def in_boundary_batch(self, X):
        u = np.atleast_2d(np.asarray(X, dtype=float))[:, 0]
        lim = self.half_width if self.param == "angle" else math.tan(0.5 * self.half_width)
        return np.abs(u) < lim

    def analytic_drift_batch(self, X):
        u = np.atleast_2d(np.asarray(X, dtype=float))[:, 0]
        if self.param == "angle":
            return np.zeros((len(u), 1))
        return (0.25 * u * (1.0 + u * u))[:, None]

    def to_dict(self):
        return {"kind": self.kind, "offset": self.offset, "half_width": self.half_width, "param": self.param,
                "subset_ids": self.subset_ids.tolist(), "ambient": self.ambient.tolist()}


class TorusChart(Chart):
    """Exact angle chart ``(theta, phi)`` of the torus with radii ``R > r``.

    ``theta`` runs around the tube and ``phi`` around the symmetry axis. Both
    coordinates are periodic, so the chart has no boundary.
    """

    kind = "analytic_torus"

    def __init__(self, R=2.0, r=1.3, subset_ids=None, ambient=None):
        self.R, self.r = float(R), float(r)
        if ambient is None:
            subset_ids, ambient = np.zeros(0, dtype=np.int64), np.zeros((0, 3))
        ambient = np.asarray(ambient, dtype=float).reshape(-1, 3)
        super().__init__(subset_ids, torus_angles(ambient, self.R) if len(ambient) else np.zeros((0, 2)), ambient)

    @property
    def periods(self):
        return np.full(2, 2.0 * math.pi)

    def wrap(self, X):
        return _wrap_angle(X)

    def latent_diff(self, X, x0):
        return _wrap_angle(np.asarray(X) - np.asarray(x0))

    def forward_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return torus_embed(X[:, 0], X[:, 1], self.R, self.r), np.zeros(len(X))

    def backward_batch(self, S):
        return torus_angles(np.atleast_2d(np.asarray(S, dtype=float)), self.R)

    def jacobian_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        th, ph = X[:, 0], X[:, 1]
        rho = self.R + self.r * np.cos(th)
        EJ = np.zeros((len(X), 3, 2))
        EJ[:, 0, 0] = -self.r * np.sin(th) * np.cos(ph)
        EJ[:, 1, 0] = -self.r * np.sin(th) * np.sin(ph)
        EJ[:, 2, 0] = self.r * np.cos(th)
        EJ[:, 0, 1] = -rho * np.sin(ph)
        EJ[:, 1, 1] = rho * np.cos(ph)
        return EJ, np.zeros((len(X), 2, 2)), np.zeros(len(X))

    def metric_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return torus_metric(X[:, 0], self.R, self.r), np.zeros(len(X))

    def in_boundary_batch(self, X):
        return np.ones(len(np.atleast_2d(X)), dtype=bool)

    def analytic_drift_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return torus_drift(X[:, 0], self.R, self.r)

    def to_dict(self):
        return {"kind": self.kind, "R": self.R, "r": self.r, "subset_ids": self.subset_ids.tolist(),
                "ambient": self.ambient.tolist()}


def chart_from_dict(d):
    kind = d.get("kind")
    if kind == "gplvm":
        p = d["params"]
        return GplvmChart(d["subset_ids"], np.array(d["latent"], dtype=float).reshape(len(d["subset_ids"]), -1),
                          np.array(d["ambient"], dtype=float).reshape(len(d["subset_ids"]), -1),
                          RbfParams(p["gamma"], p["rho"], p["noise_var"]), d["threshold"],
                          np.array(d["offset"], dtype=float), d.get("log_likelihood"))
    if kind == "identity":
        return IdentityChart(d["subset_ids"], np.array(d["ambient"], dtype=float).reshape(len(d["subset_ids"]), -1),
                             d["margin"], d.get("support_radius"))
    if kind == "analytic_circle":
        return CircleChart(d["offset"], d["half_width"], d["param"], d["subset_ids"], d["ambient"])
    if kind == "analytic_torus":
        return TorusChart(d["R"], d["r"], d["subset_ids"], d["ambient"])
    raise PreconditionError(f"unknown chart kind {kind!r}")


# ---------------------------------------------------------------- training


def _profiled_lml(D2, Y, rho, ratio):
    """GPLVM log likelihood with the signal variance profiled out.

    Returns ``(lml, gamma)`` for covariance ``gamma * (exp(-rho D2) + ratio I)``.
    """
    n, p = Y.shape
    C = np.exp(-rho * D2)
    C[np.diag_indices(n)] += ratio
    L, _ = cholesky(C)
    A = linalg.solve_triangular(L, Y, lower=True, check_finite=False)
    T = float(np.sum(A * A))
    gamma = T / (n * p)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    lml = -0.5 * p * (n * math.log(gamma) + logdet) - 0.5 * n * p * (1.0 + LOG_2PI)
    return lml, gamma


class _GplvmTrainer:
    """Alternating block coordinate ascent on the GPLVM likelihood."""

    RATIO_BOUNDS = (1e-6, 1e-1)

    def __init__(self, latent, Y, seed):
        self.X = latent.copy()
        self.Y = Y
        self.n, self.p = Y.shape
        self.rng = np.random.default_rng(seed)
        scale = float(np.sqrt(np.mean(np.sum((latent - latent.mean(0)) ** 2, axis=1))))
        self.rho_bounds = (1e-2 / scale**2, 1e2 / scale**2)
        self.step = 0.1 * _median_nn(latent)

    def lml(self, rho, ratio):
        return _profiled_lml(_accel.sqdist(self.X, self.X), self.Y, rho, ratio)

    def fit_hyper(self, start=None):
        D2 = _accel.sqdist(self.X, self.X)

        def objective(v):
            return _profiled_lml(D2, self.Y, v[0], v[1])[0]

        bounds = [self.rho_bounds, self.RATIO_BOUNDS]
        if start is None:
            res = optimize(objective, bounds, budget=3000)
        else:
            res = optimize(objective, bounds, budget=60, x0=start, grid=False, tol=1e-3)
        return res.x, res.value

    def sweep(self, rho, ratio, gamma):
        """One pass of per-point coordinate ascent over the latent points.

        Moving point ``j`` changes the likelihood only through the conditional
        density of ``y_j`` given the other points, so each candidate move is
        scored with that conditional.
        """
        n, q = self.X.shape
        noise = ratio * gamma
        cjj = gamma + noise
        offsets = np.concatenate([np.eye(q) * s for s in (self.step, -self.step, 0.25 * self.step, -0.25 * self.step)])
        accepted = 0
        idx = np.arange(n)
        for j in self.rng.permutation(n):
            mask = idx != j
            Xo = self.X[mask]
            C = _accel.rbf_cross(Xo, Xo, gamma, rho)
            C = 0.5 * (C + C.T)
            C[np.diag_indices(n - 1)] += noise
            try:
                L, _ = cholesky(C)
            except NumericalError:
                continue
            alpha = linalg.cho_solve((L, True), self.Y[mask], check_finite=False)
            cands = np.vstack([self.X[j], self.X[j] + offsets])
            k = _accel.rbf_cross(cands, Xo, gamma, rho)
            V = linalg.solve_triangular(L, k.T, lower=True, check_finite=False)
            v = np.maximum(cjj - np.sum(V * V, axis=0), 1e-300)
            r2 = np.sum((self.Y[j] - k @ alpha) ** 2, axis=1)
            ll = -0.5 * self.p * np.log(v) - 0.5 * r2 / v
            best = int(np.argmax(ll))
            if best > 0 and ll[best] > ll[0]:
                accepted += 1
                self.X[j] = cands[best]
        rate = accepted / n
        if rate > 0.5:
            self.step *= 1.5
        elif rate < 0.2:
            self.step *= 0.5
        return rate


def train_gplvm(cloud: PointCloud, subset_ids, q, iters=50, seed=0, init="geodesic", tol=1e-6,
                threshold_frac=0.5, init_neighbors=8) -> GplvmChart:
    """Learn a GPLVM chart for one subset of ``cloud``.

    Parameters
    ----------
    cloud : PointCloud
    subset_ids : array of int
    q : int
        Latent dimension.
    iters : int
        Maximum outer iterations. Each iteration sweeps every latent point once
        and then refines the kernel hyperparameters.
    seed : int
        Seed for the sweep order.
    init : {"geodesic", "pca"}
        Latent initialisation. ``"pca"`` projects the centered subset on its
        principal axes. ``"geodesic"`` applies classical scaling to kNN-graph
        geodesic distances instead, which coincides with PCA on flat subsets
        but does not fold curved subsets that wrap more than half a turn.
    tol : float
        Relative likelihood gain below which iterations stop.
    threshold_frac : float
        Chart boundary threshold as a fraction of the signal variance.

    Returns
    -------
    GplvmChart
        ``history`` holds the likelihood after every outer iteration.
    """
    subset_ids = np.asarray(subset_ids, dtype=np.int64)
    S = cloud.points[subset_ids]
    n, p = S.shape
    if n < q + 2:
        raise PreconditionError(f"subset of size {n} is too small for a {q}-dimensional chart")
    if q > p:
        raise PreconditionError("latent dimension exceeds ambient dimension")
    offset = S.mean(axis=0)
    Y = S - offset
    if init == "pca":
        X0 = pca_project(S, q)
    elif init == "geodesic":
        X0 = isomap_project(S, q, min(init_neighbors, n - 1))
    else:
        raise PreconditionError(f"unknown latent initialisation {init!r}")
    trainer = _GplvmTrainer(X0, Y, seed)
    try:
        (rho, ratio), value = trainer.fit_hyper()
    except Exception as exc:
        raise TrainingError(f"likelihood is not finite at the initial latent points ({exc})") from exc
    if not math.isfinite(value):
        raise TrainingError("likelihood is not finite at the initial latent points")
    history = [value]
    for _ in range(iters):
        _, gamma = trainer.lml(rho, ratio)
        trainer.sweep(rho, ratio, gamma)
        (rho, ratio), value = trainer.fit_hyper(start=(rho, ratio))
        history.append(value)
        if value - history[-2] < tol * abs(history[-2]):
            break
    lml, gamma = trainer.lml(rho, ratio)
    params = RbfParams(gamma=gamma, rho=rho, noise_var=ratio * gamma)
    return GplvmChart(subset_ids, trainer.X, S, params, threshold=threshold_frac * gamma, offset=offset,
                      log_likelihood=lml, history=history)


def identity_chart(cloud: PointCloud, subset_ids, margin=None, support_radius=None) -> IdentityChart:
    subset_ids = np.asarray(subset_ids, dtype=np.int64)
    return IdentityChart(subset_ids, cloud.points[subset_ids], margin, support_radius)


# ---------------------------------------------------------------- single-point API


def _single(x):
    x = np.asarray(x, dtype=float)
    return x.ndim == 1, np.atleast_2d(x)


def forward(chart: Chart, x):
    """Predictive mean (ambient point) and variance at latent ``x``.

    A 2-D ``x`` is treated as a batch and arrays are returned.
    """
    one, X = _single(x)
    mean, var = chart.forward_batch(X)
    return (mean[0], float(var[0])) if one else (mean, var)


def backward(chart: Chart, s):
    """Latent point whose image best explains ambient point ``s``."""
    one, S = _single(s)
    X = chart.backward_batch(S)
    return X[0] if one else X


def jacobian_dist(chart: Chart, x) -> JacobianDist:
    EJ, cov, _ = chart.jacobian_batch(np.atleast_2d(np.asarray(x, dtype=float)))
    return JacobianDist(mean=EJ[0], cov=cov[0])


def expected_metric(chart: Chart, x) -> MetricTensor:
    G, _ = chart.metric_batch(np.atleast_2d(np.asarray(x, dtype=float)))
    G, det, inv, inv_sqrt = metric_parts(G)
    return MetricTensor(G=G[0], det_G=float(det[0]), inv_G=inv[0], inv_sqrt_G=inv_sqrt[0])


def magnification_factor(chart: Chart, x) -> float:
    return math.sqrt(expected_metric(chart, x).det_G)


def in_boundary(chart: Chart, x):
    one, X = _single(x)
    ok = chart.in_boundary_batch(X)
    return bool(ok[0]) if one else ok
