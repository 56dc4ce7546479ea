"""Monte-Carlo heat kernel values from simulated Brownian paths.

The heat kernel ``h^t(s0, s)`` is the density of Brownian motion started at
``s0`` being at ``s`` after time ``t``. It is estimated by counting how many
paths end inside a small latent box around the target and dividing by the
Riemannian volume of that box.
"""
from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import _accel
from .bm_sim import SdeConfig, simulate_ensemble
from .chart import metric_parts
from .errors import DataError, GridError, PreconditionError


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Half-width ``w`` of the latent target box.

    With ``w=None`` each chart uses ``scale`` times its median latent
    nearest-neighbour spacing times ``sqrt(q)``.
    """

    w: float = None
    scale: float = 0.1

    def __post_init__(self):
        if self.w is not None and not self.w > 0:
            raise PreconditionError("window half-width w must be positive")
        if not self.scale > 0:
            raise PreconditionError("scale must be positive")

    def halfwidth(self, chart):
        if self.w is not None:
            return float(self.w)
        if len(chart.latent) < 2:
            raise PreconditionError("chart has no training latents; give w explicitly")
        return self.scale * chart.latent_spacing * math.sqrt(chart.q)


def standard_error(n_hits, n, volume):
    """Binomial standard error of ``n_hits / (n * volume)``."""
    p = n_hits / n
    return math.sqrt(n * p * (1.0 - p)) / (volume * n)


def box_volume(chart, x, w):
    """Riemannian volume ``(2w)^q sqrt(det G(x))`` of the latent box around ``x``."""
    G, _ = chart.metric_batch(np.atleast_2d(np.asarray(x, dtype=float)))
    _, det, _, _ = metric_parts(G)
    return (2.0 * w) ** chart.q * math.sqrt(det[0])


class _Positions:
    """Walker positions at one recorded step, mapped lazily into each chart."""

    def __init__(self, atlas, ens, col):
        self.atlas = atlas
        self.c = ens.chart_ids[:, col]
        self.X = ens.latent[:, col]
        self.n = len(self.c)
        self._views = {}

    def view(self, j):
        """Latents in chart ``j`` of the walkers that can be expressed there."""
        if j not in self._views:
            parts = [self.X[self.c == j]]
            for i in np.unique(self.c):
                if i == j:
                    continue
                Xi = self.X[self.c == i]
                route = self.atlas.overlap_mask(i, Xi)[:, j]
                if route.any():
                    Xj, ok = self.atlas.transition_batch(i, j, Xi[route])
                    parts.append(Xj[ok])
            self._views[j] = np.concatenate(parts, axis=0)
        return self._views[j]


def _positions(atlas, ens, t):
    k = int(round(t / ens.dt))
    if k < 0 or not math.isclose(k * ens.dt, t, rel_tol=1e-9, abs_tol=1e-12):
        raise PreconditionError(f"t={t} is not a multiple of dt={ens.dt}")
    if k > ens.steps[-1]:
        raise PreconditionError(f"t={t} is beyond the simulated horizon {ens.steps[-1] * ens.dt}")
    return _Positions(atlas, ens, ens.column(k))


def _count(pos, target, spec):
    j, x = target
    chart = pos.atlas.charts[j]
    x = np.asarray(x, dtype=float).reshape(-1)
    if not chart.in_boundary_batch(x[None])[0]:
        raise PreconditionError(f"target lies outside chart {j}")
    w = spec.halfwidth(chart)
    pts = pos.view(j)
    hits = int(_accel.box_hits(pts, x, np.full(chart.q, w), chart.periods).sum()) if len(pts) else 0
    return hits, box_volume(chart, x, w)


def estimate_density(atlas, paths, t, target, spec=None):
    """Heat kernel estimate ``N_A / (N V)`` at ``target = (chart id, latent)``."""
    hits, vol = _count(_positions(atlas, paths, t), target, spec or NeighborhoodSpec())
    return hits / (paths.chart_ids.shape[0] * vol)


@dataclass
class DensityProfile:
    values: np.ndarray
    se: np.ndarray
    hits: np.ndarray
    volumes: np.ndarray
    n_paths: int


def density_profile(atlas, paths, t, targets, spec=None) -> DensityProfile:
    """Estimates, standard errors, hit counts and box volumes for many targets."""
    spec = spec or NeighborhoodSpec()
    pos = _positions(atlas, paths, t)
    hits, vols = zip(*(_count(pos, tg, spec) for tg in targets))
    hits = np.array(hits)
    vols = np.array(vols)
    n = pos.n
    se = np.array([standard_error(h, n, v) for h, v in zip(hits, vols)])
    return DensityProfile(hits / (n * vols), se, hits, vols, n)


def psd_project(K):
    """Nearest (Frobenius) positive semidefinite matrix by eigenvalue clipping."""
    K = 0.5 * (K + K.T)
    lam, U = np.linalg.eigh(K)
    P = (U * np.maximum(lam, 0.0)) @ U.T
    return 0.5 * (P + P.T)


def medoid(points):
    """Row index minimizing the summed distance to the other rows."""
    d = np.sqrt(_accel.sqdist(points, points))
    return int(np.argmin(d.sum(axis=1)))


@dataclass(frozen=True)
class GridConfig:
    times: tuple
    n_paths: int = 2000
    dt: float = 1e-2
    seed: int = 0
    max_rejects: int = 20
    spec: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)

    def sde(self):
        n_steps = max(int(round(max(self.times) / self.dt)), 1)
        return SdeConfig(dt=self.dt, n_steps=n_steps, n_paths=self.n_paths, max_rejects=self.max_rejects,
                         seed=self.seed)


@dataclass
class HeatKernelGrid:
    """Chart-centre heat kernel matrices, one per diffusion time."""

    center_ids: np.ndarray
    centers: np.ndarray
    times: np.ndarray
    raw: np.ndarray
    matrices: np.ndarray
    n_paths: int
    w: list
    dt: float
    seed: int = 0
    atlas_digest: str = None

    def __post_init__(self):
        self.center_ids = np.asarray(self.center_ids, dtype=np.int64)
        self.centers = np.asarray(self.centers, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        self.raw = np.asarray(self.raw, dtype=float)
        self.matrices = np.asarray(self.matrices, dtype=float)
        m, nv = len(self.times), len(self.center_ids)
        if self.raw.shape != (m, nv, nv) or self.matrices.shape != (m, nv, nv):
            raise DataError("grid matrices do not match the number of times and centres")

    def matrix(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise PreconditionError(f"t={t} is not one of the grid times {self.times.tolist()}")
        return self.matrices[k]

    def to_dict(self):
        return {
            "center_ids": self.center_ids.tolist(), "centers": self.centers.tolist(),
            "times": self.times.tolist(), "raw": self.raw.tolist(), "matrices": self.matrices.tolist(),
            "n_paths": self.n_paths, "w": list(self.w), "dt": self.dt, "seed": self.seed,
            "atlas_digest": self.atlas_digest,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["center_ids"], d["centers"], d["times"], d["raw"], d["matrices"], d["n_paths"],
                       d["w"], d["dt"], d.get("seed", 0), d.get("atlas_digest"))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed heat kernel grid: {exc}") from None

    def save(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON ({exc})") from None


def chart_centers(atlas, cover):
    """Per chart: cloud id and chart latent of the subset medoid."""
    ids, latents, ambient = [], [], []
    for i, chart in enumerate(atlas.charts):
        if not np.array_equal(np.sort(chart.subset_ids), cover.subsets[i]):
            raise DataError(f"chart {i} was not built from subset {i} of this cover")
        m = medoid(chart.ambient)
        ids.append(int(chart.subset_ids[m]))
        latents.append(chart.latent[m])
        ambient.append(chart.ambient[m])
    return np.array(ids), latents, np.array(ambient)


def build_grid(atlas, cover, config: GridConfig) -> HeatKernelGrid:
    """Estimate ``K_h^t[i, j]`` between all chart centres at every requested time.

    Raises
    ------
    GridError
        If some centre receives no paths from its own start at some time.
    """
    sde = config.sde()
    for t in config.times:
        sde.step_of(t)
    ids, latents, ambient = chart_centers(atlas, cover)
    nv = atlas.n_charts
    steps = [sde.step_of(t) for t in config.times]
    ens = simulate_ensemble(atlas, [(i, latents[i]) for i in range(nv)], sde, record_steps=steps,
                            start_keys=ids.tolist())
    targets = [(j, latents[j]) for j in range(nv)]
    raw = np.zeros((len(config.times), nv, nv))
    hits = np.zeros_like(raw, dtype=np.int64)
    for k, t in enumerate(config.times):
        for i in range(nv):
            prof = density_profile(atlas, ens[i], t, targets, config.spec)
            raw[k, i] = prof.values
            hits[k, i] = prof.hits
    zero = [(float(t), i) for k, t in enumerate(config.times) for i in range(nv) if raw[k, i, i] <= 0]
    if zero:
        raise GridError(f"no path returned to its own centre for (t, chart) in {zero[:5]}; "
                        "increase the window w or the number of paths")
    sym = 0.5 * (raw + np.swapaxes(raw, 1, 2))
    proj = np.stack([psd_project(K) for K in sym])
    w = [config.spec.halfwidth(c) for c in atlas.charts]
    return HeatKernelGrid(ids, ambient, np.array(config.times, dtype=float), raw, proj, config.n_paths, w,
                          config.dt, config.seed, atlas.digest)
