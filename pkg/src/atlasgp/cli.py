"""Command-line driver: ``atlasgp <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import AtlasGPError, DataError, DigestMismatchError

log = logging.getLogger("atlasgp")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise _UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _config_of(args):
    skip = {"func", "config", "command", "out", "threads", "verbose"}  # keep reruns byte-identical
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _read_labeled(path):
    """``id,y`` rows (optional header, ``#`` comments)."""
    ids, ys = [], []
    seen = 0
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            seen += 1
            try:
                i, y = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                if seen == 1:
                    continue  # header
                raise DataError(f"{path}: bad labeled row {row}") from None
            ids.append(i)
            ys.append(y)
    if not ids:
        raise DataError(f"{path}: no labeled rows")
    return np.array(ids, dtype=np.int64), np.array(ys)


def _read_ids(path):
    """First column of a CSV as integer ids (optional header)."""
    ids = []
    seen = 0
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            seen += 1
            try:
                ids.append(int(row[0]))
            except ValueError:
                if seen > 1:
                    raise DataError(f"{path}: bad id {row[0]!r}") from None
    if not ids:
        raise DataError(f"{path}: no ids")
    return np.array(ids, dtype=np.int64)


# ---------------------------------------------------------------- subcommands


def cmd_decompose(args):
    from .cover import PointCloud, decompose, validate_cover
    cloud = PointCloud.from_csv(args.cloud)
    cover = decompose(cloud, args.n_subsets, args.q, overlap_k=args.overlap_k, seed=args.seed,
                      projection=args.projection)
    report = validate_cover(cloud, cover)
    cover.to_json(args.out, extra={"config": _config_of(args), "seed": args.seed,
                                   "cloud_digest": _file_digest(args.cloud)})
    print(f"{cover.n_subsets} subsets, sizes {[len(s) for s in cover.subsets]}, valid={report.passed}")


def cmd_learn_atlas(args):
    from .atlas import AtlasConfig, build_atlas
    from .cover import Cover, PointCloud
    cloud = PointCloud.from_csv(args.cloud)
    cover = Cover.from_json(args.cover)
    atlas = build_atlas(cloud, cover, args.q, AtlasConfig(kind=args.kind, iters=args.iters, seed=args.seed,
                                                          identity_margin=args.margin,
                                                          support_radius=args.support_radius))
    atlas.save(args.out, extra={"run_config": _config_of(args), "seed": args.seed})
    print(f"atlas with {atlas.n_charts} charts, digest {atlas.digest[:12]}")


def _read_starts(path, q):
    starts = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                continue
            if len(vals) != q + 1:
                raise DataError(f"{path}: start rows need chart_id plus {q} latent coordinates")
            starts.append((int(vals[0]), np.array(vals[1:])))
    if not starts:
        raise DataError(f"{path}: no start rows")
    return starts


def cmd_simulate(args):
    from .atlas import Atlas
    from .bm_sim import SdeConfig, simulate_ensemble, write_paths_csv
    atlas = Atlas.load(args.atlas)
    starts = _read_starts(args.starts, atlas.q)
    cfg = SdeConfig(dt=args.dt, n_steps=args.steps, n_paths=args.paths, seed=args.seed,
                    max_rejects=args.max_rejects)
    record = None if args.every <= 1 else list(range(0, args.steps + 1, args.every)) + [args.steps]
    ens = simulate_ensemble(atlas, starts, cfg, record_steps=record)
    write_paths_csv(args.out, ens, header_comment="config " + json.dumps(_config_of(args), sort_keys=True))
    for k, e in enumerate(ens):
        print(f"start {k}: {e.flag_counts()}")


def cmd_estimate_kernel(args):
    from .atlas import Atlas
    from .cover import Cover
    from .heat_kernel import GridConfig, NeighborhoodSpec, build_grid
    atlas = Atlas.load(args.atlas)
    cover = Cover.from_json(args.cover)
    spec = NeighborhoodSpec(w=args.window)
    grid = build_grid(atlas, cover, GridConfig(times=_floats(args.times), n_paths=args.paths, dt=args.dt,
                                               seed=args.seed, spec=spec))
    grid.save(args.out, extra={"config": _config_of(args)})
    print(f"grid over {len(grid.times)} times, {len(grid.center_ids)} centres")


def _model_payload(args, kind, params, ids, y):
    refs = {"cloud": os.path.abspath(args.cloud), "cloud_digest": _file_digest(args.cloud)}
    for key in ("cover", "atlas", "grid"):
        path = getattr(args, key, None)
        if path:
            refs[key] = os.path.abspath(path)
            refs[f"{key}_digest"] = _file_digest(path)
    return {"model": kind, "params": params, "train_ids": ids.tolist(), "y": y.tolist(), "refs": refs,
            "config": _config_of(args), "seed": args.seed,
            "data_digest": hashlib.sha256(np.concatenate([ids.astype(float), y]).tobytes()).hexdigest()}


def _need(args, *names):
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise _UsageError(f"--model {args.model} needs " + ", ".join("--" + n for n in missing))


def cmd_fit(args):
    from .agp import SearchConfig, fit_rc_agp
    from .baselines import GlConfig, euclidean_gp_fit_predict, gl_heat_gp_fit_predict
    from .cover import Cover, PointCloud
    cloud = PointCloud.from_csv(args.cloud)
    ids, y = _read_labeled(args.labeled)
    if ids.min() < 0 or ids.max() >= cloud.n:
        raise DataError("labeled id out of range of the point cloud")
    search = SearchConfig(fixed_noise=args.fix_noise)
    if args.model == "rc-agp":
        _need(args, "cover", "grid")
        from .heat_kernel import HeatKernelGrid
        grid = HeatKernelGrid.load(args.grid)
        m = fit_rc_agp(cloud, Cover.from_json(args.cover), grid, ids, y, search)
        params = {"t": m.t, "rho": m.rho, "sigma_r2": m.sigma_r2, "noise_var": m.noise_var, "lml": m.lml}
    elif args.model == "euclid":
        r = euclidean_gp_fit_predict(cloud, ids, y, ids[:1], search)
        params = r.params
    elif args.model == "gl":
        r = gl_heat_gp_fit_predict(cloud, ids, y, ids[:1], GlConfig(k_neighbors=args.k_neighbors), search)
        params = dict(r.params, k_neighbors=args.k_neighbors)
    else:  # s-agp
        _need(args, "cover", "atlas", "grid", "inducing")
        from .agp import SAgpConfig, fit_s_agp
        from .atlas import Atlas
        from .heat_kernel import HeatKernelGrid, NeighborhoodSpec
        grid = HeatKernelGrid.load(args.grid)
        cfg = SAgpConfig(times=_floats(args.times), n_paths=args.paths, seed=args.seed,
                         spec=NeighborhoodSpec(w=args.window), fixed_noise=args.fix_noise)
        fit = fit_s_agp(Atlas.load(args.atlas), cloud, Cover.from_json(args.cover), grid.centers,
                        _read_ids(args.inducing), ids, y, cfg)
        k = fit.time_index
        params = {"t": fit.model.t, "rescale": fit.model.rescale, "noise_var": fit.model.noise_var,
                  "lml": fit.model.lml, "inducing_ids": fit.model.inducing_ids.tolist(),
                  "heat_u": fit.heat_u[k].tolist(), "S_uu": fit.S_uu[k].tolist()}
    payload = _model_payload(args, args.model, params, ids, y)
    _write_json(args.out, payload)
    print(f"{args.model}: " + ", ".join(f"{k}={v:.6g}" for k, v in params.items() if isinstance(v, float)))


def _check_ref(refs, key, override):
    if override is None:
        path = refs.get(key)
        if path is None:
            raise DataError(f"model does not reference a {key} file")
    else:
        path = override
    digest = _file_digest(path)
    if digest != refs.get(f"{key}_digest"):
        raise DigestMismatchError(f"{key} digest mismatch: model was fitted with "
                                  f"{refs.get(f'{key}_digest', '?')[:12]}, file {path} has {digest[:12]}")
    return path


def cmd_predict(args):
    from .cover import Cover, PointCloud
    model = _read_json(args.model)
    refs = model.get("refs", {})
    if args.atlas and "atlas_digest" not in refs and model["model"] != "s-agp":
        if "grid" in refs:
            from .heat_kernel import HeatKernelGrid
            from .atlas import Atlas
            g = HeatKernelGrid.load(refs["grid"])
            if g.atlas_digest is not None and Atlas.load(args.atlas).digest != g.atlas_digest:
                raise DigestMismatchError("atlas digest does not match the one the heat kernel grid was built from")
    elif args.atlas:
        _check_ref(refs, "atlas", args.atlas)
    cloud = PointCloud.from_csv(_check_ref(refs, "cloud", args.cloud))
    test = _read_ids(args.test)
    if test.min() < 0 or test.max() >= cloud.n:
        raise DataError("test id out of range of the point cloud")
    ids = np.array(model["train_ids"], dtype=np.int64)
    y = np.array(model["y"], dtype=float)
    p = model["params"]
    kind = model["model"]
    if kind == "rc-agp":
        from .agp import RcAgpModel, assign, predict_rc_agp
        from .heat_kernel import HeatKernelGrid
        grid = HeatKernelGrid.load(_check_ref(refs, "grid", None))
        cover = Cover.from_json(_check_ref(refs, "cover", None))
        m = RcAgpModel(p["t"], p["rho"], p["sigma_r2"], p["noise_var"], p["lml"], ids, y,
                       assign(cloud, cover, ids, grid.centers), grid, cloud.points, cover=cover)
        mean, var = predict_rc_agp(m, test)
    elif kind == "euclid":
        from .baselines import euclidean_gp_predict
        mean, var = euclidean_gp_predict(cloud.points[ids], y, cloud.points[test], p["rho"], p["scale"], p["noise_var"])
    elif kind == "gl":
        from .baselines import GlConfig, gl_heat_gp_fit_predict
        from .agp import SearchConfig
        r = gl_heat_gp_fit_predict(cloud, ids, y, test, GlConfig(k_neighbors=p["k_neighbors"], t=p["t"]),
                                   SearchConfig(fixed_noise=p["noise_var"]))
        mean, var = r.mean, r.var
    elif kind == "s-agp":
        from .agp import _consistent_fu, fit_s_agp_from_matrices, predict_s_agp_from_matrix
        from .agp import SAgpConfig
        u = np.array(p["inducing_ids"], dtype=np.int64)
        H = np.array(p["heat_u"])[None]
        S_uu = np.array(p["S_uu"])[None]
        S_fu = _consistent_fu(H[:, :, ids], S_uu, ids, u)
        cfg = SAgpConfig(times=(p["t"],), fixed_noise=p["noise_var"])
        m = fit_s_agp_from_matrices(S_uu, S_fu, y, (p["t"],), cfg, u)
        S_su = _consistent_fu(H[:, :, test], S_uu, test, u)[0]
        mean, var = predict_s_agp_from_matrix(m, S_su)
    else:
        raise DataError(f"unknown model kind {kind!r}")
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# config {json.dumps(_config_of(args), sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(["id", "mean", "variance"])
        for i, m_, v in zip(test, mean, var):
            w.writerow([int(i), repr(float(m_)), repr(float(v))])
    print(f"wrote {len(test)} predictions")


def cmd_benchmark(args):
    from .suites import SuiteConfig, run_suite, summary_rows, write_results_csv
    cfg = SuiteConfig(suite=args.suite, snr_db=args.snr_db, replicates=args.replicates, seed=args.seed,
                      n_paths=args.paths, inducing_counts=tuple(int(v) for v in _floats(args.inducing)))
    res = run_suite(cfg, log=lambda r, row: log.info("replicate %d: %s", r, row))
    write_results_csv(args.out, res, cfg.resolved())
    for method, mean, sd in summary_rows(res):
        print(f"{method:10s} {mean:.3f}({sd:.2f})")


def cmd_selftest(args):
    from .selftest import run_selftest
    failures = run_selftest(print)
    if failures:
        raise _SelftestFailed(f"{failures} self-test check(s) failed")


class _SelftestFailed(AtlasGPError):
    exit_code = 3


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="atlasgp", description="Atlas Gaussian processes on point-cloud manifolds.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON file whose keys mirror long flags (flags given explicitly win)")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS and numba worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("decompose", help="split a point cloud into overlapping subsets")
    s.add_argument("--cloud", required=True)
    s.add_argument("--n-subsets", type=int, required=True)
    s.add_argument("--q", type=int, required=True)
    s.add_argument("--overlap-k", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--projection", choices=("pca", "isomap"), default="pca")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("learn-atlas", help="train one chart per subset")
    s.add_argument("--cloud", required=True)
    s.add_argument("--cover", required=True)
    s.add_argument("--q", type=int, required=True)
    s.add_argument("--kind", choices=("auto", "gplvm", "identity"), default="auto")
    s.add_argument("--iters", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--margin", type=float, default=None)
    s.add_argument("--support-radius", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_learn_atlas)

    s = sub.add_parser("simulate", help="simulate Brownian paths and dump them as CSV")
    s.add_argument("--atlas", required=True)
    s.add_argument("--starts", required=True, help="CSV rows: chart_id, latent coordinates")
    s.add_argument("--dt", type=float, default=1e-2)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--paths", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-rejects", type=int, default=20)
    s.add_argument("--every", type=int, default=1, help="record every k-th step")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate-kernel", help="heat kernel matrices between chart centres")
    s.add_argument("--atlas", required=True)
    s.add_argument("--cover", required=True)
    s.add_argument("--times", required=True, help="comma-separated diffusion times")
    s.add_argument("--paths", type=int, default=2000)
    s.add_argument("--window", type=float, default=None)
    s.add_argument("--dt", type=float, default=1e-2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate_kernel)

    s = sub.add_parser("fit", help="fit a regression model")
    s.add_argument("--model", choices=("rc-agp", "s-agp", "euclid", "gl"), required=True)
    s.add_argument("--cloud", required=True)
    s.add_argument("--labeled", required=True, help="CSV rows: id, y")
    s.add_argument("--cover")
    s.add_argument("--atlas")
    s.add_argument("--grid")
    s.add_argument("--inducing", help="CSV of inducing point ids (s-agp)")
    s.add_argument("--times", default="0.5,1,2", help="diffusion times (s-agp)")
    s.add_argument("--paths", type=int, default=1000, help="paths per inducing point (s-agp)")
    s.add_argument("--window", type=float, default=None)
    s.add_argument("--k-neighbors", type=int, default=10, help="graph neighbours (gl)")
    s.add_argument("--fix-noise", type=float, default=None, help="fix the noise variance")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="predict with a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--test", required=True, help="CSV of point ids")
    s.add_argument("--cloud", default=None, help="override the cloud path stored in the model")
    s.add_argument("--atlas", default=None, help="atlas to check against the model's references")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("benchmark", help="run a regression benchmark suite")
    s.add_argument("--suite", choices=("torus", "ushape"), required=True)
    s.add_argument("--snr-db", type=float, default=30.0)
    s.add_argument("--replicates", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--paths", type=int, default=None)
    s.add_argument("--inducing", default="", help="comma-separated inducing counts for s-agp")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("selftest", help="run the oracle invariant checks")
    s.set_defaults(func=cmd_selftest)
    return p


def _apply_config(parser, argv):
    """Insert keys from ``--config`` as flags before the explicit ones so explicit flags win."""
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    data = _read_json(known.config)
    if not isinstance(data, dict):
        raise DataError("--config must hold a JSON object")
    argv = list(argv)
    cmd_pos = next((k for k, a in enumerate(argv) if a in _subcommands(parser)), None)
    if cmd_pos is None:
        return argv
    given = {a.split("=")[0] for a in argv[cmd_pos + 1:] if a.startswith("--")}
    extra = []
    for key, val in data.items():
        flag = "--" + key.replace("_", "-")
        if flag in given:
            continue
        if isinstance(val, bool):
            if val:
                extra.append(flag)
        elif isinstance(val, list):
            extra += [flag, ",".join(str(v) for v in val)]
        elif val is not None:
            extra += [flag, str(val)]
    return argv[:cmd_pos + 1] + extra + argv[cmd_pos + 1:]


def _subcommands(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return set(action.choices)
    return set()


def _limit_threads(n):
    from threadpoolctl import threadpool_limits
    threadpool_limits(n)
    try:
        import numba
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    except ImportError:  # pragma: no cover
        pass


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except AtlasGPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads:
        _limit_threads(args.threads)
    try:
        args.func(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except AtlasGPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
