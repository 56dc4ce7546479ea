"""Closed-form references and synthetic benchmark data."""
import math

import numpy as np

from .cover import PointCloud

TORUS_R = 2.0
TORUS_r = 1.3


def euclidean_heat(q, s0, s, t):
    """Heat kernel of ``0.5 * Laplacian`` on R^q: ``(2 pi t)^(-q/2) exp(-|s - s0|^2 / 2t)``.

    ``s`` may be a single point or an ``m x q`` array of points.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    s0 = np.asarray(s0, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float)
    d2 = np.sum((s.reshape(-1, s0.size) - s0) ** 2, axis=1)
    out = (2.0 * math.pi * t) ** (-0.5 * q) * np.exp(-d2 / (2.0 * t))
    return float(out[0]) if s.ndim <= 1 and out.size == 1 else out


def circle_heat(dtheta, t, k_max=20):
    """Heat kernel of ``0.5 * Laplacian`` on the unit circle, Fourier series truncated at ``k_max``."""
    if t <= 0:
        raise ValueError("t must be positive")
    k = np.arange(1, k_max + 1)
    dtheta = np.asarray(dtheta, dtype=float)
    terms = np.exp(-0.5 * k**2 * t) * np.cos(np.multiply.outer(dtheta, k))
    out = (1.0 + 2.0 * terms.sum(axis=-1)) / (2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def circle_heat_truncation_bound(t, k_max=20):
    """Upper bound on the tail of the series dropped by :func:`circle_heat`."""
    return math.exp(-0.5 * k_max**2 * t) / (1.0 - math.exp(-k_max * t))


def circle_heat_wrapped(dtheta, t, m_max=50):
    """Same kernel as a sum of Euclidean kernels over the images ``dtheta + 2 pi m``."""
    m = np.arange(-m_max, m_max + 1)
    dtheta = np.asarray(dtheta, dtype=float)
    d = np.add.outer(dtheta, 2.0 * math.pi * m)
    out = np.exp(-d**2 / (2.0 * t)).sum(axis=-1) / math.sqrt(2.0 * math.pi * t)
    return float(out) if out.ndim == 0 else out


def torus_embed(theta, phi, R=TORUS_R, r=TORUS_r):
    """Embed tube angle ``theta`` and revolution angle ``phi`` in R^3."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    rho = R + r * np.cos(theta)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), r * np.sin(theta)], axis=-1)


def torus_angles(points, R=TORUS_R):
    """Recover ``(theta, phi)`` in ``[-pi, pi)`` from embedded torus points."""
    points = np.atleast_2d(points)
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    phi = np.arctan2(y, x)
    theta = np.arctan2(z, np.hypot(x, y) - R)
    return np.stack([theta, phi], axis=1)


def torus_metric(theta, R=TORUS_R, r=TORUS_r):
    """Induced metric ``diag(r^2, (R + r cos theta)^2)``; shape ``(..., 2, 2)``."""
    theta = np.asarray(theta, dtype=float)
    G = np.zeros(theta.shape + (2, 2))
    G[..., 0, 0] = r * r
    G[..., 1, 1] = (R + r * np.cos(theta)) ** 2
    return G


def torus_drift(theta, R=TORUS_R, r=TORUS_r):
    """Drift of Brownian motion in torus angles: ``(-sin(theta) / (2 r (R + r cos theta)), 0)``."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape + (2,))
    out[..., 0] = -0.5 * np.sin(theta) / (r * (R + r * np.cos(theta)))
    return out


def torus_fixture(n_theta=25, n_phi=25, R=TORUS_R, r=TORUS_r, jitter=0.0, seed=0):
    """Grid of points on the torus and their angles.

    With ``jitter > 0`` every angle is displaced uniformly by up to ``jitter``
    grid cells (seeded), giving an irregular, non-uniform sample.

    Returns
    -------
    cloud : PointCloud
    angles : ndarray, shape (n, 2)
        ``(theta, phi)`` per point, for evaluation only.
    """
    th = 2.0 * math.pi * np.arange(n_theta) / n_theta
    ph = 2.0 * math.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(th, ph, indexing="ij")
    angles = np.stack([T.ravel(), P.ravel()], axis=1)
    if jitter > 0:
        rng = np.random.default_rng(seed)
        cell = np.array([2.0 * math.pi / n_theta, 2.0 * math.pi / n_phi])
        angles = angles + rng.uniform(-jitter, jitter, size=angles.shape) * cell
    angles = (angles + math.pi) % (2.0 * math.pi) - math.pi
    return PointCloud(torus_embed(angles[:, 0], angles[:, 1], R, r)), angles


# horseshoe domain: centre line of radius 0.5 bending around the origin,
# arms of length 3 along +x, half width 0.4
_HS_R = 0.5
_HS_R0 = 0.1
_HS_L = 3.0
_HS_SLOPE = 6.0 / (math.pi * _HS_R / 2 + _HS_L)


def _horseshoe_coords(x, y):
    q = math.pi * _HS_R / 2
    a = np.zeros_like(x)
    d = np.zeros_like(x)
    up = (x >= 0) & (y > 0)
    a[up] = q + x[up]
    d[up] = y[up] - _HS_R
    low = (x >= 0) & (y <= 0)
    a[low] = -q - x[low]
    d[low] = -_HS_R - y[low]
    left = x < 0
    a[left] = -np.arctan(y[left] / x[left]) * _HS_R
    d[left] = np.hypot(x[left], y[left]) - _HS_R
    outside = (np.abs(d) > _HS_R - _HS_R0) | ((x > _HS_L) & ((x - _HS_L) ** 2 + d**2 > (_HS_R - _HS_R0) ** 2))
    return a, d, outside


def horseshoe(xy):
    """Smooth function on the horseshoe: rises linearly along the arm plus a squared offset term.

    The value is about -6 at the end of the lower arm and +6 at the end of the
    upper arm. Points outside the domain give ``nan``.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    a, d, outside = _horseshoe_coords(xy[:, 0].copy(), xy[:, 1].copy())
    f = _HS_SLOPE * a + d**2
    f[outside] = np.nan
    return f


def ushape_fixture(nx=26, ny=19):
    """Regular grid points inside the horseshoe (355 points for the default grid)."""
    X, Y = np.meshgrid(np.linspace(-1.0, 3.5, nx), np.linspace(-1.0, 1.0, ny))
    x, y = X.ravel(), Y.ravel()
    _, _, outside = _horseshoe_coords(x.copy(), y.copy())
    pts = np.stack([x[~outside], y[~outside]], axis=1)
    return PointCloud(pts), pts.copy()


def torus_function(angles):
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    return np.sin(2.0 * angles[:, 0]) * np.cos(2.0 * angles[:, 1])


_FUNCTIONS = {"torus": torus_function, "ushape": horseshoe}


def benchmark_functions(name):
    """Evaluator for a bundled regression target over its hidden coordinates.

    ``"torus"`` takes ``(theta, phi)`` rows, ``"ushape"`` takes ``(x, y)`` rows.
    """
    try:
        return _FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark function {name!r}; choose from {sorted(_FUNCTIONS)}") from None


def add_noise(y, snr_db, seed=0):
    """Add white Gaussian noise with variance ``var(y) / 10**(snr_db / 10)``."""
    y = np.asarray(y, dtype=float)
    if math.isinf(snr_db) and snr_db > 0:
        return y.copy()
    sd = math.sqrt(np.var(y) / 10.0 ** (snr_db / 10.0))
    return y + sd * np.random.default_rng(seed).standard_normal(y.shape)
