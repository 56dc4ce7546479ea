"""Time the numba kernels against the numpy fallback.

Part 1 calls both implementations of each hot kernel in this process and
checks they agree. Part 2 runs the same short flat-square simulation in two
subprocesses, one per ``ATLASGP_BACKEND`` value, and compares wall time and
output.

    python3 benchmarks/bench_backends.py [--paths 20000] [--steps 100]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from atlasgp import _accel

SIM = """
import sys, time, numpy as np
from atlasgp.atlas import Atlas
from atlasgp.bm_sim import SdeConfig, simulate_ensemble
from atlasgp.chart import IdentityChart
from atlasgp import _accel
g = np.linspace(-3, 3, 31)
pts = np.array([(x, y) for x in g for y in g])
atlas = Atlas([IdentityChart(np.arange(len(pts)), pts)])
cfg = SdeConfig(dt=0.01, n_steps=int(sys.argv[2]), n_paths=int(sys.argv[1]), seed=3)
simulate_ensemble(atlas, [(0, np.zeros(2))], SdeConfig(dt=0.01, n_steps=2, n_paths=10))  # warm up the jit
t0 = time.perf_counter()
ens = simulate_ensemble(atlas, [(0, np.zeros(2))], cfg, record_steps=[cfg.n_steps])[0]
dt = time.perf_counter() - t0
print(_accel.BACKEND, dt, repr(float(np.abs(ens.latent[:, -1]).sum())))
"""


def best_of(fn, repeat=5):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernels():
    if not _accel._HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    A = rng.standard_normal((2000, 3))
    B = rng.standard_normal((600, 3))
    keys = _accel.path_keys_np(7, 0, np.arange(200_000))
    box = rng.standard_normal((200_000, 2))
    half, per = np.array([0.3, 0.3]), np.array([0.0, 2 * np.pi])
    cases = [
        ("sqdist 2000x600", lambda: _accel.sqdist_np(A, B), lambda: _accel._sqdist_nb(A, B)),
        ("rbf_cross 2000x600", lambda: _accel.rbf_cross_np(A, B, 1.0, 0.5),
         lambda: _accel._rbf_cross_nb(A, B, 1.0, 0.5)),
        ("nearest 2000 in 600", lambda: _accel.nearest_np(A, B), lambda: _accel._nearest_nb(A, B)),
        ("normals 200k x 2", lambda: _accel.normals_np(keys, 16, 2),
         lambda: _accel._normals_nb(keys, np.int64(16), np.int64(2))),
        ("uniforms 200k", lambda: _accel.uniforms_np(keys, 15), lambda: _accel._uniforms_nb(keys, np.uint64(15))),
        ("box_hits 200k", lambda: _accel.box_hits_np(box.copy(), np.zeros(2), half, per),
         lambda: _accel._box_hits_nb(box, np.zeros(2), half, per)),
    ]
    print(f"{'kernel':24s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  max|diff|")
    for name, f_np, f_nb in cases:
        a, b = f_np(), f_nb()
        diff = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
        t_np, t_nb = best_of(f_np), best_of(f_nb)
        print(f"{name:24s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.2f}  {diff:.1e}")


def simulation(paths, steps):
    print(f"\nflat-square simulation, {paths} paths x {steps} steps")
    outs = []
    for backend in ("numpy", "numba"):
        env = dict(os.environ, ATLASGP_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", SIM, str(paths), str(steps)], env=env,
                             capture_output=True, text=True, check=True)
        name, secs, checksum = res.stdout.split()
        outs.append(checksum)
        print(f"  {name:6s} {float(secs):7.2f} s   checksum {checksum}")
    print("  identical paths" if outs[0] == outs[1] else "  WARNING: backends disagree")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=100)
    args = ap.parse_args()
    kernels()
    simulation(args.paths, args.steps)


if __name__ == "__main__":
    main()
