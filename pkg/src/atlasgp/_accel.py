"""Hot loops with two interchangeable backends.

Each kernel exists as a numba ``@njit`` function and as a pure numpy function
with identical results. The numba versions are used when numba imports and the
environment variable ``ATLASGP_BACKEND`` is not set to ``numpy``; set it to
``numpy`` to force the fallback (useful for debugging and for the backend
benchmark in ``benchmarks/bench_backends.py``).

The random numbers used by the path simulator come from a counter-based
generator: each draw is a pure function of (path key, counter), so a path's
trajectory does not depend on which other paths are simulated alongside it.
"""
import os

import numpy as np

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

BACKEND = os.environ.get("ATLASGP_BACKEND", "numba" if _HAVE_NUMBA else "numpy").lower()
if BACKEND not in ("numba", "numpy"):
    raise ValueError(f"ATLASGP_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")
if BACKEND == "numba" and not _HAVE_NUMBA:
    BACKEND = "numpy"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi

# counter layout: step << 20 | attempt << 4 | slot
_SLOT_CHOICE = 15
_MAX_NORMAL_SLOTS = 14


def counter(step, attempt, slot=0):
    return (int(step) << 20) | (int(attempt) << 4) | int(slot)


# ---------------------------------------------------------------- numpy


def _mix_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def path_keys_np(seed, start_index, path_index):
    path_index = np.asarray(path_index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix_np(np.uint64(seed) + _GOLDEN)
        h = _mix_np(h ^ (np.uint64(start_index) * _GOLDEN + _M1))
        return _mix_np(h ^ (path_index * _GOLDEN + _M2))


def uniforms_np(keys, ctr):
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix_np(keys + np.uint64(ctr) * _GOLDEN)
    return ((bits >> _S11).astype(np.float64) + 0.5) * _INV53


def normals_np(keys, ctr, q):
    keys = np.asarray(keys, dtype=np.uint64)
    npairs = (q + 1) // 2
    out = np.empty((keys.shape[0], 2 * npairs))
    for k in range(npairs):
        u1 = uniforms_np(keys, ctr + 2 * k)
        u2 = uniforms_np(keys, ctr + 2 * k + 1)
        rad = np.sqrt(-2.0 * np.log(u1))
        out[:, 2 * k] = rad * np.cos(_TWO_PI * u2)
        out[:, 2 * k + 1] = rad * np.sin(_TWO_PI * u2)
    return out[:, :q]


def sqdist_np(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(d, 0.0, out=d)
    return d


def rbf_cross_np(A, B, gamma, rho):
    d = sqdist_np(A, B)
    d *= -rho
    np.exp(d, out=d)
    d *= gamma
    return d


def box_hits_np(points, center, halfwidth, periods):
    diff = points - center
    wrap = periods > 0
    if wrap.any():
        p = periods[wrap]
        diff[:, wrap] = (diff[:, wrap] + 0.5 * p) % p - 0.5 * p
    return np.all(np.abs(diff) <= halfwidth, axis=1)


def nearest_np(A, B):
    return np.argmin(sqdist_np(A, B), axis=1)


# ---------------------------------------------------------------- numba

if _HAVE_NUMBA:

    @njit(cache=True)
    def _mix_nb(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def _unit_nb(key, ctr):
        bits = _mix_nb(key + ctr * np.uint64(0x9E3779B97F4A7C15))
        return (np.float64(bits >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)

    @njit(cache=True)
    def _uniforms_nb(keys, ctr):
        out = np.empty(keys.shape[0])
        c = np.uint64(ctr)
        for i in range(keys.shape[0]):
            out[i] = _unit_nb(keys[i], c)
        return out

    @njit(cache=True)
    def _normals_nb(keys, ctr, q):
        n = keys.shape[0]
        out = np.empty((n, q))
        npairs = (q + 1) // 2
        for i in range(n):
            for k in range(npairs):
                u1 = _unit_nb(keys[i], np.uint64(ctr + 2 * k))
                u2 = _unit_nb(keys[i], np.uint64(ctr + 2 * k + 1))
                rad = np.sqrt(-2.0 * np.log(u1))
                out[i, 2 * k] = rad * np.cos(2.0 * np.pi * u2)
                if 2 * k + 1 < q:
                    out[i, 2 * k + 1] = rad * np.sin(2.0 * np.pi * u2)
        return out

    @njit(cache=True)
    def _sqdist_nb(A, B):
        m, q = A.shape
        n = B.shape[0]
        out = np.empty((m, n))
        for i in range(m):
            for j in range(n):
                s = 0.0
                for d in range(q):
                    t = A[i, d] - B[j, d]
                    s += t * t
                out[i, j] = s
        return out

    @njit(cache=True)
    def _rbf_cross_nb(A, B, gamma, rho):
        m, q = A.shape
        n = B.shape[0]
        out = np.empty((m, n))
        for i in range(m):
            for j in range(n):
                s = 0.0
                for d in range(q):
                    t = A[i, d] - B[j, d]
                    s += t * t
                out[i, j] = gamma * np.exp(-rho * s)
        return out

    @njit(cache=True)
    def _box_hits_nb(points, center, halfwidth, periods):
        n, q = points.shape
        out = np.empty(n, dtype=np.bool_)
        for i in range(n):
            inside = True
            for d in range(q):
                t = points[i, d] - center[d]
                if periods[d] > 0:
                    p = periods[d]
                    t = (t + 0.5 * p) % p - 0.5 * p
                if abs(t) > halfwidth[d]:
                    inside = False
                    break
            out[i] = inside
        return out

    @njit(cache=True)
    def _nearest_nb(A, B):
        m, q = A.shape
        n = B.shape[0]
        out = np.empty(m, dtype=np.int64)
        for i in range(m):
            best = np.inf
            arg = 0
            for j in range(n):
                s = 0.0
                for d in range(q):
                    t = A[i, d] - B[j, d]
                    s += t * t
                if s < best:
                    best = s
                    arg = j
            out[i] = arg
        return out


# ---------------------------------------------------------------- dispatch


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def path_keys(seed, start_index, path_index):
    """64-bit stream keys for paths ``path_index`` of start ``start_index``."""
    return path_keys_np(seed, start_index, path_index)


def uniforms(keys, ctr):
    """One uniform in (0, 1) per key at counter ``ctr``."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    if BACKEND == "numba":
        return _uniforms_nb(keys, np.uint64(ctr))
    return uniforms_np(keys, ctr)


def normals(keys, ctr, q):
    """``q`` standard normals per key, using counters ``ctr .. ctr + 2*ceil(q/2) - 1``."""
    if 2 * ((q + 1) // 2) > _MAX_NORMAL_SLOTS:
        raise ValueError("too many normals per draw for the counter layout")
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    if BACKEND == "numba":
        return _normals_nb(keys, np.int64(ctr), np.int64(q))
    return normals_np(keys, ctr, q)


def sqdist(A, B):
    A, B = _f64(A), _f64(B)
    if BACKEND == "numba":
        return _sqdist_nb(A, B)
    return sqdist_np(A, B)


def rbf_cross(A, B, gamma, rho):
    A, B = _f64(A), _f64(B)
    if BACKEND == "numba":
        return _rbf_cross_nb(A, B, float(gamma), float(rho))
    return rbf_cross_np(A, B, float(gamma), float(rho))


def box_hits(points, center, halfwidth, periods):
    """Boolean mask of rows of ``points`` inside the axis-aligned box.

    ``periods[d] > 0`` marks a periodic coordinate; differences along it are
    wrapped into ``[-period/2, period/2)`` before the test.
    """
    points = _f64(points)
    q = points.shape[1]
    center = _f64(np.broadcast_to(center, (q,)))
    halfwidth = _f64(np.broadcast_to(halfwidth, (q,)))
    periods = _f64(np.broadcast_to(periods, (q,)))
    if BACKEND == "numba":
        return _box_hits_nb(points, center, halfwidth, periods)
    return box_hits_np(points.copy(), center, halfwidth, periods)


def nearest(A, B):
    """Index of the nearest row of ``B`` for every row of ``A`` (first on ties)."""
    A, B = _f64(A), _f64(B)
    if BACKEND == "numba":
        return _nearest_nb(A, B)
    return nearest_np(A, B)
