"""Regression benchmarks on the bundled torus and horseshoe fixtures.

Each replicate draws a fresh labeled set and a fresh noise realization; the
cover, atlas and heat-kernel grid are shared by all replicates. Errors are
root-mean-squared differences between predictive means and the noise-free
function over every cloud point.
"""
from dataclasses import asdict, dataclass, replace
import csv
import json

import numpy as np

from .agp import (SAgpConfig, assign, fit_rc_agp, fit_s_agp_from_matrices, heat_rows,
                  predict_rc_agp, predict_s_agp_from_matrix, _consistent_fu)
from .atlas import AtlasConfig, build_atlas
from .baselines import GlConfig, euclidean_gp_fit_predict, gl_heat_gp_fit_predict
from .cover import decompose
from .heat_kernel import GridConfig, NeighborhoodSpec, build_grid, psd_project
from .oracles import add_noise, horseshoe, torus_fixture, torus_function, ushape_fixture

METHODS = ("rc-agp", "euclid", "gl")

# Suite defaults. The horseshoe uses identity charts; its support radius is
# just above the largest distance from any point of an arm to the nearest grid
# point (half the grid cell diagonal, 0.106), so walkers cannot sit in the slit.
_DEFAULTS = {
    "torus": dict(n_subsets=8, projection="pca", kind="gplvm", support_radius=None,
                  times=(0.25, 0.5, 1.0, 2.0), window=0.25, n_paths=1000),
    "ushape": dict(n_subsets=10, projection="isomap", kind="identity", support_radius=0.108,
                   times=(0.25, 0.5, 1.0, 2.0, 4.0), window=0.1, n_paths=2000),
}


@dataclass(frozen=True)
class SuiteConfig:
    suite: str = "ushape"
    snr_db: float = 30.0
    replicates: int = 10
    seed: int = 0
    n_labeled: int = 30
    dt: float = 1e-2
    n_paths: int = None
    times: tuple = None
    window: float = None
    methods: tuple = METHODS
    inducing_counts: tuple = ()
    sagp_paths: int = 500
    sagp_times: tuple = (0.5, 1.0, 2.0)

    def resolved(self):
        if self.suite not in _DEFAULTS:
            raise ValueError(f"unknown suite {self.suite!r}; choose torus or ushape")
        d = _DEFAULTS[self.suite]
        return replace(self, n_paths=self.n_paths or d["n_paths"], times=tuple(self.times or d["times"]),
                       window=self.window or d["window"])


@dataclass
class SuiteData:
    cloud: object
    truth: np.ndarray
    cover: object
    atlas: object
    grid: object


def setup_suite(config: SuiteConfig) -> SuiteData:
    """Fixture cloud, noise-free function values, cover, atlas and heat grid."""
    config = config.resolved()
    d = _DEFAULTS[config.suite]
    if config.suite == "torus":
        cloud, angles = torus_fixture()
        truth = torus_function(angles)
    else:
        cloud, xy = ushape_fixture()
        truth = horseshoe(xy)
    cover = decompose(cloud, d["n_subsets"], 2, seed=config.seed, projection=d["projection"])
    atlas = build_atlas(cloud, cover, 2, AtlasConfig(kind=d["kind"], seed=config.seed,
                                                     support_radius=d["support_radius"]))
    grid = build_grid(atlas, cover, GridConfig(times=config.times, n_paths=config.n_paths, dt=config.dt,
                                               seed=config.seed, spec=NeighborhoodSpec(w=config.window)))
    return SuiteData(cloud, truth, cover, atlas, grid)


def replicate_data(config: SuiteConfig, truth, r):
    """Labeled ids and noisy values of replicate ``r``."""
    rng = np.random.default_rng([config.seed, r, 1])
    ids = np.sort(rng.choice(len(truth), config.n_labeled, replace=False))
    noisy = add_noise(truth, config.snr_db, seed=int(rng.integers(2**31)))
    return ids, noisy[ids]


def _rmse(mean, truth):
    return float(np.sqrt(np.mean((mean - truth) ** 2)))


def inducing_pool(data: SuiteData, max_count, seed=0):
    """Nested inducing-point ordering: one point per chart first, then round robin.

    Taking the first ``m`` entries gives a set that covers every chart whenever
    ``m`` is at least the number of charts, and smaller sets are contained in
    larger ones.
    """
    cloud, cover, grid = data.cloud, data.cover, data.grid
    asg = assign(cloud, cover, cloud.ids, grid.centers)
    rng = np.random.default_rng([seed, 7])
    per_chart = [list(rng.permutation(np.flatnonzero(asg.chart == c))) for c in range(cover.n_subsets)]
    order = []
    while len(order) < max_count and any(per_chart):
        for lst in per_chart:
            if lst and len(order) < max_count:
                order.append(int(lst.pop(0)))
    return np.array(order, dtype=np.int64)


def run_suite(config: SuiteConfig, data: SuiteData = None, log=None):
    """Per-method RMSE over replicates; returns ``{method: array}``."""
    config = config.resolved()
    data = data or setup_suite(config)
    n = data.cloud.n
    all_ids = np.arange(n)
    out = {m: [] for m in config.methods}
    sagp = None
    if config.inducing_counts:
        pool = inducing_pool(data, max(config.inducing_counts), config.seed)
        sc = SAgpConfig(times=config.sagp_times, n_paths=config.sagp_paths, dt=config.dt, seed=config.seed,
                        spec=NeighborhoodSpec(w=config.window))
        H = heat_rows(data.atlas, data.cloud, data.cover, data.grid.centers, pool, all_ids, sc)
        sagp = (pool, sc, H)
        for m in config.inducing_counts:
            out[f"s-agp-{m}"] = []
    for r in range(config.replicates):
        ids, y = replicate_data(config, data.truth, r)
        if "rc-agp" in out:
            model = fit_rc_agp(data.cloud, data.cover, data.grid, ids, y)
            out["rc-agp"].append(_rmse(predict_rc_agp(model, all_ids)[0], data.truth))
        if "euclid" in out:
            out["euclid"].append(euclidean_gp_fit_predict(data.cloud, ids, y, all_ids, truth=data.truth).rmse)
        if "gl" in out:
            out["gl"].append(gl_heat_gp_fit_predict(data.cloud, ids, y, all_ids, GlConfig(), truth=data.truth).rmse)
        if sagp is not None:
            pool, sc, H = sagp
            for m in config.inducing_counts:
                u = pool[:m]
                S_uu = np.stack([psd_project(Hk[:m][:, u]) for Hk in H])
                S_fu = _consistent_fu(H[:, :m][:, :, ids], S_uu, ids, u)
                model = fit_s_agp_from_matrices(S_uu, S_fu, y, sc.times, sc, u)
                k = int(np.flatnonzero(np.isclose(sc.times, model.t))[0])
                S_su = _consistent_fu(H[k:k + 1, :m], S_uu[k:k + 1], all_ids, u)[0]
                out[f"s-agp-{m}"].append(_rmse(predict_s_agp_from_matrix(model, S_su)[0], data.truth))
        if log:
            log(r, {k: v[-1] for k, v in out.items()})
    return {k: np.array(v) for k, v in out.items()}


def summary_rows(results):
    """``(method, mean, sd)`` rows; ``sd`` is the sample standard deviation."""
    rows = []
    for method, v in results.items():
        sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
        rows.append((method, float(np.mean(v)), sd))
    return rows


def write_results_csv(path, results, config=None):
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write(f"# config {json_line(config)}\n")
        w = csv.writer(fh)
        w.writerow(["method", "rmse_mean", "rmse_sd", "table"])
        for method, mean, sd in summary_rows(results):
            w.writerow([method, repr(mean), repr(sd), f"{mean:.3f}({sd:.2f})"])


def json_line(obj):
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    return json.dumps(obj, sort_keys=True, default=list)
