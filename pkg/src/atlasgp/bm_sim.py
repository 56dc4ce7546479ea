"""Brownian motion on a manifold represented by an atlas.

Within a chart a walker follows the Ito SDE of Brownian motion for the chart's
metric ``G``::

    dx^l = 0.5 / sqrt(det G) * sum_r d/dx^r (G^{lr} sqrt(det G)) dt + (G^{-1/2} dW)^l

Each step is an Euler-Maruyama proposal, re-drawn while it falls outside the
chart. When the walker sits in an overlap region it is moved to one of the
overlapping charts, picked uniformly at random.

Random numbers come from a counter-based generator keyed by
``(seed, start index, path index)``, so every path is reproducible on its own
and the ensemble does not depend on batching or evaluation order.
"""
from dataclasses import dataclass
import csv
import math

import numpy as np

from . import _accel
from .chart import Chart, metric_parts
from .errors import DriftError, PreconditionError

FLAG_REJECTED = 1
FLAG_TRANSITION_FAILED = 2
FLAG_ONE_SIDED_DRIFT = 4
FLAG_DRIFT_FAILED = 8


@dataclass(frozen=True)
class SdeConfig:
    dt: float = 1e-2
    n_steps: int = 100
    n_paths: int = 1000
    max_rejects: int = 20
    seed: int = 0
    fd_step: float = None  # None: 1e-3 x latent scale of the chart

    def __post_init__(self):
        if not (self.dt > 0 and self.n_steps >= 1 and self.n_paths >= 1 and self.max_rejects >= 1):
            raise PreconditionError(f"invalid SDE configuration {self}")
        if self.fd_step is not None and not self.fd_step > 0:
            raise PreconditionError("fd_step must be positive")

    def step_of(self, t):
        """Step index for diffusion time ``t``; ``t`` must be a multiple of ``dt``."""
        k = int(round(t / self.dt))
        if not math.isclose(k * self.dt, t, rel_tol=1e-9, abs_tol=1e-12):
            raise PreconditionError(f"time {t} is not a multiple of dt={self.dt}")
        return k


class PathStream:
    """Random stream of one path, keyed by ``(seed, start index, path index)``."""

    def __init__(self, seed, start_index=0, path_index=0):
        self.key = _accel.path_keys(seed, start_index, np.array([path_index]))

    def normal(self, step, attempt, q):
        return _accel.normals(self.key, _accel.counter(step, attempt), q)[0]

    def uniform(self, step):
        return float(_accel.uniforms(self.key, _accel.counter(step, 0, _accel._SLOT_CHOICE))[0])


@dataclass(frozen=True)
class BmPath:
    """One sample path. Row ``k`` holds the state after step ``steps[k]``."""

    steps: np.ndarray
    chart_ids: np.ndarray
    latent: np.ndarray
    ambient: np.ndarray
    flags: np.ndarray


class PathEnsemble:
    """All paths from one start, stored as stacked arrays.

    Indexing returns a :class:`BmPath`; iteration yields every path.
    """

    def __init__(self, start, steps, chart_ids, latent, ambient, flags, dt):
        self.start = start
        self.steps = np.asarray(steps)
        self.chart_ids = chart_ids
        self.latent = latent
        self.ambient = ambient
        self.flags = flags
        self.dt = dt

    def __len__(self):
        return self.chart_ids.shape[0]

    def __getitem__(self, k):
        return BmPath(self.steps, self.chart_ids[k], self.latent[k], self.ambient[k], self.flags[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def column(self, step):
        """Index of ``step`` among the recorded steps."""
        pos = np.searchsorted(self.steps, step)
        if pos >= len(self.steps) or self.steps[pos] != step:
            raise PreconditionError(f"step {step} was not recorded (recorded: {self.steps[0]}..{self.steps[-1]})")
        return int(pos)

    def flag_counts(self):
        f = self.flags
        return {
            "rejected": int(np.count_nonzero(f & FLAG_REJECTED)),
            "transition_failed": int(np.count_nonzero(f & FLAG_TRANSITION_FAILED)),
            "one_sided_drift": int(np.count_nonzero(f & FLAG_ONE_SIDED_DRIFT)),
            "drift_failed": int(np.count_nonzero(f & FLAG_DRIFT_FAILED)),
        }


def _fd_step(chart, config_step):
    return config_step if config_step is not None else 1e-3 * chart.latent_scale


def local_sde(chart: Chart, X, fd_step=None):
    """Drift, noise factor ``G^{-1/2}`` and drift flags for a batch of latents.

    Charts with a closed-form drift use it. Otherwise the drift comes from
    central differences of ``G^{-1} sqrt(det G)``, falling back to one-sided
    differences where a displaced point leaves the chart.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B, q = X.shape
    flags = np.zeros(B, dtype=np.int64)
    exact = chart.analytic_drift_batch(X)
    if exact is not None:
        G, _ = chart.metric_batch(X)
        _, _, _, inv_sqrt = metric_parts(G)
        return exact, inv_sqrt, flags
    h = _fd_step(chart, fd_step)
    shifts = np.concatenate([np.zeros((1, q)), h * np.eye(q), -h * np.eye(q)])
    pts = (X[None, :, :] + shifts[:, None, :]).reshape(-1, q)
    G, var = chart.metric_batch(pts)
    _, det, inv, inv_sqrt = metric_parts(G)
    limit = getattr(chart, "threshold", None)
    inside = (var <= limit if limit is not None else chart.in_boundary_batch(pts)).reshape(2 * q + 1, B)
    F = (inv * np.sqrt(det)[:, None, None]).reshape(2 * q + 1, B, q, q)
    div = np.zeros((B, q))
    for r in range(q):
        plus, minus = inside[1 + r], inside[1 + q + r]
        col_p, col_m, col_0 = F[1 + r][:, :, r], F[1 + q + r][:, :, r], F[0][:, :, r]
        d = np.zeros((B, q))
        both = plus & minus
        d[both] = (col_p[both] - col_m[both]) / (2 * h)
        only_p = plus & ~minus
        d[only_p] = (col_p[only_p] - col_0[only_p]) / h
        only_m = minus & ~plus
        d[only_m] = (col_0[only_m] - col_m[only_m]) / h
        flags[only_p | only_m] |= FLAG_ONE_SIDED_DRIFT
        flags[~plus & ~minus] |= FLAG_DRIFT_FAILED
        div += d
    drift = 0.5 * div / np.sqrt(det[:B])[:, None]
    drift[flags & FLAG_DRIFT_FAILED > 0] = 0.0
    return drift, inv_sqrt[:B], flags


def drift(chart: Chart, x, fd_step=None):
    """Drift vector of Brownian motion at latent ``x`` of ``chart``.

    Raises
    ------
    DriftError
        If the metric cannot be evaluated on either side of ``x``.
    """
    b, _, flags = local_sde(chart, np.atleast_2d(np.asarray(x, dtype=float)), fd_step)
    if flags[0] & FLAG_DRIFT_FAILED:
        raise DriftError("metric unavailable on both sides of the point")
    return b[0]


def step(chart: Chart, x, dt, rng, fd_step=None):
    """One Euler-Maruyama proposal from latent ``x``.

    ``rng`` is a ``numpy.random.Generator`` or a pre-drawn standard normal
    vector.
    """
    x = np.asarray(x, dtype=float)
    b, inv_sqrt, _ = local_sde(chart, x[None], fd_step)
    z = rng.standard_normal(x.size) if hasattr(rng, "standard_normal") else np.asarray(rng, dtype=float)
    return chart.wrap(x + b[0] * dt + math.sqrt(dt) * inv_sqrt[0] @ z)


def _forward_means(atlas, charts, X):
    out = np.empty((len(X), atlas.p))
    for i in np.unique(charts):
        sel = charts == i
        out[sel] = atlas.charts[i].forward_batch(X[sel])[0]
    return out


def _run(atlas, chart0, X0, keys, config: SdeConfig, record_steps):
    """Advance all walkers together; returns the recorded arrays."""
    N = len(keys)
    q = atlas.q
    c = np.array(chart0, dtype=np.int64)
    X = np.array(X0, dtype=float).reshape(N, q)
    record_steps = np.asarray(record_steps, dtype=np.int64)
    R = len(record_steps)
    rec_c = np.empty((N, R), dtype=np.int32)
    rec_x = np.empty((N, R, q))
    rec_a = np.empty((N, R, atlas.p))
    rec_f = np.zeros((N, R), dtype=np.int32)
    flags = np.zeros(N, dtype=np.int64)
    sqdt = math.sqrt(config.dt)
    col = 0

    def record(tau):
        nonlocal col, flags
        while col < R and record_steps[col] == tau:
            rec_c[:, col] = c
            rec_x[:, col] = X
            rec_a[:, col] = _forward_means(atlas, c, X)
            rec_f[:, col] = flags
            flags = np.zeros(N, dtype=np.int64)
            col += 1

    record(0)
    for tau in range(1, config.n_steps + 1):
        moved_any = []
        for i in np.unique(c):
            chart = atlas.charts[i]
            idx = np.flatnonzero(c == i)
            b, inv_sqrt, dflags = local_sde(chart, X[idx], config.fd_step)
            flags[idx] |= dflags
            mean = X[idx] + b * config.dt
            pending = np.arange(len(idx))
            for attempt in range(config.max_rejects):
                z = _accel.normals(keys[idx[pending]], _accel.counter(tau, attempt), q)
                prop = chart.wrap(mean[pending] + sqdt * np.einsum("bij,bj->bi", inv_sqrt[pending], z))
                ok = chart.in_boundary_batch(prop)
                X[idx[pending[ok]]] = prop[ok]
                moved_any.append(idx[pending[ok]])
                pending = pending[~ok]
                if not len(pending):
                    break
            flags[idx[pending]] |= FLAG_REJECTED
        if atlas.n_charts > 1 and moved_any:
            moved = np.concatenate(moved_any)
            _switch_charts(atlas, c, X, flags, keys, moved, tau)
        record(tau)
    return rec_c, rec_x, rec_a, rec_f


def _switch_charts(atlas, c, X, flags, keys, moved, tau):
    src = c[moved]
    target = np.full(len(moved), -1)
    for i in np.unique(src):
        sel = np.flatnonzero(src == i)
        mask = atlas.overlap_mask(i, X[moved[sel]])
        counts = mask.sum(axis=1)
        has = counts > 0
        if not has.any():
            continue
        u = _accel.uniforms(keys[moved[sel[has]]], _accel.counter(tau, 0, _accel._SLOT_CHOICE))
        pick = np.minimum((u * counts[has]).astype(np.int64), counts[has] - 1)
        cum = np.cumsum(mask[has], axis=1)
        target[sel[has]] = np.argmax(cum > pick[:, None], axis=1)
    for i in np.unique(src):
        for j in np.unique(target[src == i]):
            if j < 0:
                continue
            sel = moved[(src == i) & (target == j)]
            Xj, ok = atlas.transition_batch(i, j, X[sel])
            X[sel[ok]] = Xj[ok]
            c[sel[ok]] = j
            flags[sel[~ok]] |= FLAG_TRANSITION_FAILED


def _record_steps(config, record_steps):
    if record_steps is None:
        return np.arange(config.n_steps + 1)
    steps = np.unique(np.concatenate([[0], np.asarray(record_steps, dtype=np.int64)]))
    if steps[-1] > config.n_steps or steps[0] < 0:
        raise PreconditionError("recorded steps must lie in [0, n_steps]")
    return steps


def _check_start(atlas, start):
    i, x = start
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if not 0 <= i < atlas.n_charts:
        raise PreconditionError(f"start chart {i} does not exist")
    if not atlas.charts[i].in_boundary_batch(x)[0]:
        raise PreconditionError(f"start point lies outside chart {i}")
    return int(i), x[0]


def simulate_path(atlas, start, config: SdeConfig, path_rng: PathStream, record_steps=None) -> BmPath:
    """Simulate a single path from ``start = (chart id, latent)`` with its own stream."""
    i, x = _check_start(atlas, start)
    steps = _record_steps(config, record_steps)
    rc, rx, ra, rf = _run(atlas, [i], x[None], path_rng.key, config, steps)
    return BmPath(steps, rc[0], rx[0], ra[0], rf[0])


def simulate_ensemble(atlas, starts, config: SdeConfig, record_steps=None, start_keys=None):
    """Simulate ``config.n_paths`` paths from every start.

    Parameters
    ----------
    atlas : Atlas
    starts : list of (chart id, latent)
    config : SdeConfig
    record_steps : sequence of int, optional
        Steps at which states are stored (step 0 is always stored). Defaults
        to every step.
    start_keys : sequence of int, optional
        Integers identifying each start in the random-stream hash. Defaults to
        the position in ``starts``.

    Returns
    -------
    list of PathEnsemble
        One ensemble per start.
    """
    steps = _record_steps(config, record_steps)
    keys_for = range(len(starts)) if start_keys is None else start_keys
    out = []
    for start, skey in zip(starts, keys_for):
        i, x = _check_start(atlas, start)
        keys = _accel.path_keys(config.seed, skey, np.arange(config.n_paths))
        rc, rx, ra, rf = _run(atlas, np.full(config.n_paths, i), np.tile(x, (config.n_paths, 1)), keys, config, steps)
        out.append(PathEnsemble((i, x), steps, rc, rx, ra, rf, config.dt))
    return out


def write_paths_csv(path, ensembles, header_comment=None):
    """Dump paths as rows ``start, path, step, chart_id, latent..., ambient..., flags``."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        q = ensembles[0].latent.shape[2]
        p = ensembles[0].ambient.shape[2]
        w.writerow(["start", "path", "step", "chart_id"] + [f"latent{k}" for k in range(q)]
                   + [f"ambient{k}" for k in range(p)] + ["flags"])
        for s, ens in enumerate(ensembles):
            for k in range(len(ens)):
                for col, tau in enumerate(ens.steps):
                    w.writerow([s, k, int(tau), int(ens.chart_ids[k, col])]
                               + [repr(float(v)) for v in ens.latent[k, col]]
                               + [repr(float(v)) for v in ens.ambient[k, col]]
                               + [int(ens.flags[k, col])])
