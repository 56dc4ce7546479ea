"""A collection of charts glued along their overlaps."""
from dataclasses import asdict, dataclass
import hashlib
import json

import numpy as np

from . import _accel
from .chart import chart_from_dict, identity_chart, train_gplvm
from .cover import Cover, PointCloud
from .errors import DataError, PreconditionError, TransitionError


@dataclass(frozen=True)
class AtlasConfig:
    """How charts are built from a cover.

    ``kind="auto"`` picks identity charts when ``q`` equals the ambient
    dimension and GPLVM charts otherwise.
    """

    kind: str = "auto"
    iters: int = 50
    seed: int = 0
    init: str = "geodesic"
    threshold_frac: float = 0.5
    identity_margin: float = None
    support_radius: float = None


class Atlas:
    """Charts plus, for every training latent, the set of charts sharing that point.

    ``labels[i]`` is a boolean matrix with one row per training point of
    chart ``i`` and one column per chart.
    """

    def __init__(self, charts, labels=None, config=None):
        self.charts = list(charts)
        n_v = len(self.charts)
        if labels is None:
            labels = _labels_from_members(self.charts)
        self.labels = [np.asarray(lab, dtype=bool).reshape(len(c.subset_ids), n_v)
                       for lab, c in zip(labels, self.charts)]
        for i, lab in enumerate(self.labels):
            lab[:, i] = True
        self.config = config or {}
        self._digest = None

    @property
    def n_charts(self):
        return len(self.charts)

    @property
    def q(self):
        return self.charts[0].q

    @property
    def p(self):
        return self.charts[0].p

    def overlap_mask(self, i, X):
        """Per row of ``X``: boolean vector of charts reachable from chart ``i``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        chart = self.charts[i]
        if len(chart.latent) == 0 or self.n_charts == 1:
            return np.zeros((len(X), self.n_charts), dtype=bool)
        nn = _accel.nearest(X, chart.latent)
        mask = self.labels[i][nn].copy()
        mask[:, i] = False
        return mask

    def transition_batch(self, i, j, X):
        """Map latents of chart ``i`` into chart ``j``; also returns the in-boundary mask."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if i == j:
            return X.copy(), np.ones(len(X), dtype=bool)
        S, _ = self.charts[i].forward_batch(X)
        Xj = self.charts[j].backward_batch(S)
        return Xj, self.charts[j].in_boundary_batch(Xj)

    def to_dict(self):
        return {
            "charts": [c.to_dict() for c in self.charts],
            "labels": [lab.astype(int).tolist() for lab in self.labels],
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            charts = [chart_from_dict(c) for c in data["charts"]]
            return cls(charts, [np.array(lab, dtype=bool) for lab in data["labels"]], data.get("config"))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed atlas: {exc}") from None

    @property
    def digest(self):
        """SHA-256 of the canonical JSON payload (charts and labels)."""
        if self._digest is None:
            payload = self.to_dict()
            payload.pop("config", None)
            blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
            self._digest = hashlib.sha256(blob).hexdigest()
        return self._digest

    def save(self, path, extra=None):
        payload = self.to_dict()
        payload["digest"] = self.digest
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)


def _labels_from_members(charts):
    owner = {}
    for i, c in enumerate(charts):
        for pid in c.subset_ids:
            owner.setdefault(int(pid), []).append(i)
    labels = []
    for c in charts:
        lab = np.zeros((len(c.subset_ids), len(charts)), dtype=bool)
        for row, pid in enumerate(c.subset_ids):
            lab[row, owner[int(pid)]] = True
        labels.append(lab)
    return labels


def build_atlas(cloud: PointCloud, cover: Cover, q: int, config: AtlasConfig = None) -> Atlas:
    """Train one chart per subset of ``cover`` and record the overlap labels."""
    config = config or AtlasConfig()
    kind = config.kind
    if kind == "auto":
        kind = "identity" if q == cloud.p else "gplvm"
    if kind == "identity" and q != cloud.p:
        raise PreconditionError("identity charts need q equal to the ambient dimension")
    charts = []
    for i, ids in enumerate(cover.subsets):
        try:
            if kind == "identity":
                charts.append(identity_chart(cloud, ids, config.identity_margin, config.support_radius))
            elif kind == "gplvm":
                charts.append(train_gplvm(cloud, ids, q, iters=config.iters, seed=config.seed + i,
                                          init=config.init, threshold_frac=config.threshold_frac))
            else:
                raise PreconditionError(f"unknown chart kind {kind!r}")
        except PreconditionError as exc:
            raise type(exc)(f"subset {i}: {exc}") from exc
        except Exception as exc:
            if hasattr(exc, "exit_code"):
                raise type(exc)(f"subset {i}: {exc}") from exc
            raise
    cfg = asdict(config)
    cfg["kind"] = kind
    cfg["q"] = q
    return Atlas(charts, config=cfg)


def overlap_targets(atlas: Atlas, i: int, x) -> set:
    """Charts other than ``i`` that share the region around latent ``x`` of chart ``i``."""
    mask = atlas.overlap_mask(i, np.atleast_2d(x))[0]
    return {int(j) for j in np.flatnonzero(mask)}


def transition(atlas: Atlas, i: int, j: int, x):
    """Move latent ``x`` of chart ``i`` into chart ``j``.

    Raises
    ------
    TransitionError
        If the image falls outside chart ``j``.
    """
    Xj, ok = atlas.transition_batch(i, j, np.atleast_2d(np.asarray(x, dtype=float)))
    if not ok[0]:
        raise TransitionError(f"point lands outside chart {j}")
    return Xj[0]
