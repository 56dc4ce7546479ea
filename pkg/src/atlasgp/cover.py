"""Point clouds and overlapping covers.

A cover is built in three steps: project the cloud to ``q`` principal
components, cluster the projection with k-means, then grow every cluster by
the points whose ambient nearest neighbours already belong to it. The growth
step is what creates the overlaps that charts are later glued along.
"""
from dataclasses import dataclass, field
import csv
import io
import json

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from sklearn.cluster import KMeans
from sklearn.manifold import Isomap

from .errors import CoverError, DataError, PreconditionError

MAX_SEED_RETRIES = 5
ISOMAP_MIN_NEIGHBORS = 5  # fewer tends to split the neighbour graph


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ambient coordinates of ``n`` points; point ids are the row indices."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
            raise DataError(f"a point cloud needs n >= 2 rows and p >= 1 columns, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("point cloud contains non-finite coordinates")
        pairs = cKDTree(pts).query_pairs(1e-12, output_type="ndarray")
        if len(pairs):
            i, j = pairs[0]
            raise DataError(f"duplicate points {int(i)} and {int(j)}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def p(self):
        return self.points.shape[1]

    @property
    def ids(self):
        return np.arange(self.n)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            text = fh.read()
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
        if not rows:
            raise DataError(f"{path}: empty point cloud file")
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
        try:
            pts = np.array([[float(v) for v in r] for r in rows])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric entry ({exc})") from None
        if pts.ndim != 2:
            raise DataError(f"{path}: rows have differing column counts")
        return cls(pts)

    def to_csv(self, path, header=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header or [f"x{k}" for k in range(self.p)])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True, eq=False)
class Cover:
    """Overlapping index sets ``S_1 .. S_nv`` over the ids of a point cloud."""

    subsets: tuple = field()

    def __post_init__(self):
        subs = tuple(np.unique(np.asarray(s, dtype=np.int64)) for s in self.subsets)
        if not subs or any(s.size == 0 for s in subs):
            raise DataError("a cover needs at least one non-empty subset")
        for s in subs:
            s.setflags(write=False)
        object.__setattr__(self, "subsets", subs)

    @property
    def n_subsets(self):
        return len(self.subsets)

    @property
    def adjacency(self):
        """Pairs ``(i, j)``, ``i < j``, of subsets that share at least one point."""
        out = []
        for i in range(self.n_subsets):
            for j in range(i + 1, self.n_subsets):
                if np.intersect1d(self.subsets[i], self.subsets[j], assume_unique=True).size:
                    out.append((i, j))
        return out

    def members(self, point_id):
        """Indices of the subsets containing ``point_id``."""
        return [i for i, s in enumerate(self.subsets) if np.searchsorted(s, point_id) < s.size
                and s[np.searchsorted(s, point_id)] == point_id]

    def membership(self, n):
        """Boolean ``n_v x n`` membership matrix."""
        M = np.zeros((self.n_subsets, n), dtype=bool)
        for i, s in enumerate(self.subsets):
            M[i, s] = True
        return M

    def to_dict(self):
        return {"subsets": [[int(v) for v in s] for s in self.subsets]}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(tuple(data["subsets"]))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed cover: {exc}") from None

    def to_json(self, path, extra=None):
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)


def _connected(n_nodes, pairs):
    if n_nodes <= 1:
        return True
    if not pairs:
        return False
    i, j = np.array(pairs).T
    g = coo_matrix((np.ones(len(i)), (i, j)), shape=(n_nodes, n_nodes))
    return connected_components(g, directed=False)[0] == 1


def pca_project(points, q):
    """Scores of the centered points on their first ``q`` principal axes."""
    X = points - points.mean(axis=0)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    # fix the sign of each axis so the projection is reproducible
    signs = np.sign(Vt[:q, np.argmax(np.abs(Vt[:q]), axis=1)].diagonal())
    signs[signs == 0] = 1.0
    return (X @ Vt[:q].T) * signs


def isomap_project(points, q, n_neighbors):
    """Classical scaling of kNN-graph geodesic distances (Isomap) to ``q`` dims."""
    return Isomap(n_neighbors=n_neighbors, n_components=q, eigen_solver="dense").fit_transform(points)


def decompose(cloud: PointCloud, n_v: int, q: int, overlap_k: int = 5, seed: int = 0,
              n_init: int = 10, projection: str = "pca") -> Cover:
    """Split ``cloud`` into ``n_v`` overlapping subsets.

    Parameters
    ----------
    cloud : PointCloud
    n_v : int
        Number of subsets.
    q : int
        Latent dimension; also the PCA dimension used for clustering.
    overlap_k : int
        A point joins cluster ``c`` when any of its ``overlap_k`` nearest
        ambient neighbours is a member of ``c``.
    seed : int
        Seed for the k-means++ initialisation.
    n_init : int
        Number of seeded k-means++ restarts; the lowest-inertia run is kept.
    projection : {"pca", "isomap"}
        Low-dimensional view the clustering runs on. ``"isomap"`` uses graph
        geodesic distances over ``max(overlap_k, 5)`` neighbours, which keeps thin
        folded shapes (such as a horseshoe) from being clustered across a gap.

    Raises
    ------
    PreconditionError
        If ``n_v`` exceeds ``n / (q + 2)`` or ``overlap_k < 1``.
    CoverError
        If the grown subsets do not form a connected adjacency graph, or if
        clustering keeps producing clusters that are too small.
    """
    n = cloud.n
    if not (1 <= n_v <= n // (q + 2)):
        raise PreconditionError(f"n_v must lie in [1, n/(q+2)] = [1, {n // (q + 2)}], got {n_v}")
    if overlap_k < 1:
        raise PreconditionError("overlap_k must be >= 1")
    if n_v == 1:
        return Cover((np.arange(n),))

    if projection == "pca":
        Z = pca_project(cloud.points, q)
    elif projection == "isomap":
        Z = isomap_project(cloud.points, q, max(overlap_k, ISOMAP_MIN_NEIGHBORS))
    else:
        raise PreconditionError(f"unknown projection {projection!r}")
    k = min(overlap_k, n - 1)
    _, nbrs = cKDTree(cloud.points).query(cloud.points, k=k + 1)
    nbrs = nbrs[:, 1:]

    for attempt in range(MAX_SEED_RETRIES):
        km = KMeans(n_clusters=n_v, init="k-means++", n_init=n_init, max_iter=100, tol=1e-6,
                    random_state=seed + attempt)
        labels = km.fit_predict(Z)
        counts = np.bincount(labels, minlength=n_v)
        if counts.min() == 0:
            continue
        subsets = []
        for c in range(n_v):
            grown = (labels == c) | np.any(labels[nbrs] == c, axis=1)
            subsets.append(np.flatnonzero(grown))
        if min(len(s) for s in subsets) < q + 2:
            continue
        cover = Cover(tuple(subsets))
        if not _connected(n_v, cover.adjacency):
            raise CoverError(
                f"subsets do not form a connected overlap graph with overlap_k={overlap_k}; "
                "increase overlap_k")
        return cover
    raise CoverError(f"k-means produced empty or undersized clusters for {MAX_SEED_RETRIES} seeds")


@dataclass
class CoverReport:
    complete: bool
    missing: list
    intersections: dict
    connected: bool
    isolated: list
    passed: bool


def validate_cover(cloud: PointCloud, cover: Cover) -> CoverReport:
    """Check coverage, pairwise intersections and connectivity of ``cover``."""
    seen = np.zeros(cloud.n, dtype=bool)
    out_of_range = []
    for s in cover.subsets:
        bad = s[(s < 0) | (s >= cloud.n)]
        out_of_range.extend(int(v) for v in bad)
        seen[s[(s >= 0) & (s < cloud.n)]] = True
    missing = [int(v) for v in np.flatnonzero(~seen)]
    inter = {}
    for i in range(cover.n_subsets):
        for j in range(i + 1, cover.n_subsets):
            inter[(i, j)] = int(np.intersect1d(cover.subsets[i], cover.subsets[j], assume_unique=True).size)
    pairs = [k for k, v in inter.items() if v > 0]
    connected = _connected(cover.n_subsets, pairs)
    touched = {i for pair in pairs for i in pair}
    isolated = [i for i in range(cover.n_subsets) if cover.n_subsets > 1 and i not in touched]
    complete = not missing and not out_of_range
    return CoverReport(complete=complete, missing=missing, intersections=inter, connected=connected,
                       isolated=isolated, passed=complete and connected and not isolated)
