"""Fast closed-form checks behind ``atlasgp selftest``."""
import math

import numpy as np

from . import oracles
from .chart import TorusChart, expected_metric, magnification_factor

_trapz = getattr(np, "trapezoid", None) or np.trapz


def _checks():
    yield "euclidean heat at the origin, q=1, t=1", \
        abs(oracles.euclidean_heat(1, [0.0], [0.0], 1.0) - 1 / math.sqrt(2 * math.pi)) < 1e-15
    yield "euclidean heat, q=2, |d|=1, t=0.5", \
        abs(oracles.euclidean_heat(2, [0, 0], [1, 0], 0.5) - math.exp(-1) / math.pi) < 1e-15
    d = np.linspace(-math.pi, math.pi, 9)
    yield "circle series equals wrapped Gaussians", \
        np.max(np.abs(oracles.circle_heat(d, 0.5) - oracles.circle_heat_wrapped(d, 0.5))) < 1e-10
    th = np.linspace(0, 2 * math.pi, 10001)
    yield "circle kernel integrates to one", \
        abs(_trapz(oracles.circle_heat(th, 0.3), th) - 1) < 1e-8
    u = np.linspace(-30, 30, 60001)
    lhs = _trapz(oracles.euclidean_heat(1, [0.0], u[:, None], 0.4)
                 * oracles.euclidean_heat(1, [0.7], u[:, None], 0.6), u)
    yield "euclidean heat semigroup", abs(lhs - oracles.euclidean_heat(1, [0.0], [0.7], 1.0)) < 1e-4
    cloud, _ = oracles.torus_fixture()
    x, y, z = cloud.points.T
    yield "torus fixture on the implicit surface", \
        np.max(np.abs((np.hypot(x, y) - 2.0) ** 2 + z**2 - 1.69)) < 1e-12
    chart = TorusChart()
    yield "torus metric closed form", \
        np.max(np.abs(expected_metric(chart, [0.4, 1.0]).G - oracles.torus_metric(0.4))) < 1e-12
    yield "torus magnification at theta=0", round(magnification_factor(chart, [0.0, 0.0]), 2) == 4.29
    yield "torus magnification at theta=pi", round(magnification_factor(chart, [math.pi, 0.0]), 2) == 0.91
    y = np.sin(np.linspace(0, 20, 100000))
    noisy = oracles.add_noise(y, 10.0, seed=1)
    snr = 10 * math.log10(np.var(y) / np.var(noisy - y))
    yield "add_noise hits the target SNR", abs(snr - 10.0) < 0.2


def run_selftest(echo=print):
    """Run every check, report one line each, return the number of failures."""
    failures = 0
    for name, ok in _checks():
        ok = bool(ok)
        failures += not ok
        echo(f"{'ok  ' if ok else 'FAIL'} {name}")
    return failures
