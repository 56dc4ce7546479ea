"""Gaussian-process regression on point-cloud manifolds through a learned atlas.

The pipeline: split a cloud into overlapping subsets (:mod:`atlasgp.cover`),
fit one chart per subset (:mod:`atlasgp.chart`, :mod:`atlasgp.atlas`), run
Brownian motion across the charts (:mod:`atlasgp.bm_sim`), turn the paths
into heat-kernel estimates (:mod:`atlasgp.heat_kernel`) and regress with the
resulting kernel (:mod:`atlasgp.agp`).
"""
__version__ = "0.1.0"

from .errors import AtlasGPError  # noqa: F401
