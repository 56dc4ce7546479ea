"""Small fixture builders shared by several test modules."""
import math

import numpy as np

from atlasgp.atlas import Atlas
from atlasgp.chart import CircleChart, IdentityChart


def interior_points(chart, k, seed=0):
    """Points between training latents, away from the chart boundary."""
    r = np.random.default_rng(seed)
    idx = r.choice(len(chart.latent), k, replace=False)
    nb = r.choice(len(chart.latent), k)
    return 0.7 * chart.latent[idx] + 0.3 * chart.latent[nb]


def circle_atlas(n=720, half_width=0.75 * math.pi, member_width=0.7 * math.pi, params=("angle", "angle")):
    """Two analytic charts of the unit circle centred at angles 0 and pi."""
    ang = 2 * math.pi * np.arange(n) / n - math.pi
    pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    charts = []
    for off, param in zip((0.0, math.pi), params):
        d = np.abs((ang - off + math.pi) % (2 * math.pi) - math.pi)
        ids = np.flatnonzero(d < member_width)
        charts.append(CircleChart(off, half_width, param, ids, pts[ids]))
    return Atlas(charts)


def square_atlas(half=50.0, n=11):
    """One identity chart whose box is far larger than any path will travel."""
    g = np.linspace(-half, half, n)
    pts = np.array([(x, y) for x in g for y in g])
    return Atlas([IdentityChart(np.arange(len(pts)), pts)])


def three_strip_atlas(n=41):
    """Flat strip [0, 3] x [0, 1] split into three overlapping identity charts."""
    xs = np.linspace(0, 3, 3 * (n - 1) + 1)
    ys = np.linspace(0, 1, n)
    pts = np.array([(x, y) for x in xs for y in ys])
    charts = []
    for lo, hi in ((0.0, 1.2), (0.9, 2.1), (1.8, 3.0)):
        ids = np.flatnonzero((pts[:, 0] >= lo - 1e-9) & (pts[:, 0] <= hi + 1e-9))
        charts.append(IdentityChart(ids, pts[ids], margin=0.0))
    return Atlas(charts), pts
