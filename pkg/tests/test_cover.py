import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from atlasgp.cover import Cover, PointCloud, decompose, validate_cover
from atlasgp.errors import DataError, PreconditionError
from atlasgp.oracles import torus_fixture, ushape_fixture


def test_point_cloud_rejects_duplicates_and_nan():
    with pytest.raises(DataError):
        PointCloud(np.array([[0.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(DataError):
        PointCloud(np.array([[0.0, np.nan], [1.0, 1.0]]))
    with pytest.raises(DataError):
        PointCloud(np.array([[0.0]]))


def test_point_cloud_csv_roundtrip(tmp_path):
    c = PointCloud(np.random.default_rng(0).standard_normal((7, 3)))
    c.to_csv(tmp_path / "c.csv")
    d = PointCloud.from_csv(tmp_path / "c.csv")
    assert np.array_equal(c.points, d.points)
    (tmp_path / "bad.csv").write_text("1,2\n3,x\n")
    with pytest.raises(DataError):
        PointCloud.from_csv(tmp_path / "bad.csv")


def test_single_subset():
    cloud = PointCloud(np.random.default_rng(0).standard_normal((20, 2)))
    cover = decompose(cloud, 1, 2)
    assert cover.n_subsets == 1 and len(cover.subsets[0]) == 20
    assert cover.adjacency == []


def test_torus_eight_subsets():
    cloud, _ = torus_fixture()
    cover = decompose(cloud, 8, 2, seed=0)
    rep = validate_cover(cloud, cover)
    assert rep.passed
    assert np.array_equal(np.unique(np.concatenate(cover.subsets)), np.arange(625))
    # every subset touches at least two others, so the overlap graph holds a cycle
    deg = np.zeros(8, int)
    for i, j in cover.adjacency:
        deg[i] += 1
        deg[j] += 1
    assert deg.min() >= 2 and len(cover.adjacency) >= 8


def test_bridged_blobs_share_bridge_points():
    r = np.random.default_rng(3)
    left = r.normal([-5, 0], 0.4, (60, 2))
    right = r.normal([5, 0], 0.4, (60, 2))
    bridge = np.stack([np.linspace(-4, 4, 30), np.zeros(30)], axis=1)
    pts = np.vstack([left, right, bridge])
    cover = decompose(PointCloud(pts), 2, 2, overlap_k=3, seed=1)
    both = set(cover.subsets[0]) & set(cover.subsets[1])
    assert both and all(i >= 120 for i in both)


def test_deterministic_and_growth_only_adds():
    cloud, _ = ushape_fixture()
    a = decompose(cloud, 6, 2, seed=4, projection="isomap")
    b = decompose(cloud, 6, 2, seed=4, projection="isomap")
    assert all(np.array_equal(x, y) for x, y in zip(a.subsets, b.subsets))
    assert all(len(s) >= 4 for s in a.subsets)
    # same clustering (isomap uses at least 5 neighbours), smaller growth radius
    small = decompose(cloud, 6, 2, seed=4, projection="isomap", overlap_k=3)
    assert all(set(x) <= set(y) for x, y in zip(small.subsets, a.subsets))
    assert sum(map(len, small.subsets)) < sum(map(len, a.subsets))


def test_precondition_errors():
    cloud = PointCloud(np.random.default_rng(0).standard_normal((20, 2)))
    with pytest.raises(PreconditionError):
        decompose(cloud, 6, 2)
    with pytest.raises(PreconditionError):
        decompose(cloud, 2, 2, overlap_k=0)


def test_validate_examples():
    cloud = PointCloud(np.arange(10.0))
    ok = validate_cover(cloud, Cover((range(0, 6), range(5, 10))))
    assert ok.passed and ok.intersections[(0, 1)] == 1
    bad = validate_cover(cloud, Cover(([0, 1, 2], [2, 4, 5, 6, 7, 8, 9])))
    assert not bad.passed and bad.missing == [3]
    split = validate_cover(cloud, Cover(([0, 1, 2, 3, 4], [5, 6, 7, 8, 9])))
    assert not split.passed and not split.connected


@given(st.integers(2, 6), st.integers(0, 1000))
def test_decompose_invariants(n_v, seed):
    cloud, _ = torus_fixture(12, 12)
    cover = decompose(cloud, n_v, 2, seed=seed)
    rep = validate_cover(cloud, cover)
    assert rep.passed
    assert min(len(s) for s in cover.subsets) >= 4


def test_cover_json(tmp_path):
    c = Cover(([0, 1, 2], [2, 3]))
    c.to_json(tmp_path / "c.json", extra={"seed": 3})
    assert json.loads((tmp_path / "c.json").read_text())["seed"] == 3
    d = Cover.from_json(tmp_path / "c.json")
    assert [list(s) for s in d.subsets] == [[0, 1, 2], [2, 3]]
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(DataError):
        Cover.from_json(tmp_path / "x.json")
