import math

import numpy as np
import pytest

from atlasgp.atlas import Atlas, AtlasConfig, build_atlas, overlap_targets, transition
from atlasgp.cover import Cover, PointCloud, decompose
from atlasgp.errors import DataError, PreconditionError, TransitionError
from atlasgp.oracles import torus_fixture, ushape_fixture

from helpers import circle_atlas, three_strip_atlas


@pytest.fixture(scope="module")
def torus_atlas():
    cloud, _ = torus_fixture()
    cover = decompose(cloud, 8, 2, seed=0)
    return cloud, cover, build_atlas(cloud, cover, 2, AtlasConfig(seed=0))


def test_ushape_identity_charts():
    cloud, _ = ushape_fixture()
    cover = decompose(cloud, 4, 2, projection="isomap")
    atlas = build_atlas(cloud, cover, 2)
    assert atlas.n_charts == 4 and all(c.kind == "identity" for c in atlas.charts)
    for i, j in cover.adjacency:
        assert atlas.labels[i][:, j].any() and atlas.labels[j][:, i].any()


def test_single_subset_atlas():
    cloud = PointCloud(np.random.default_rng(0).uniform(size=(20, 2)))
    atlas = build_atlas(cloud, Cover((np.arange(20),)), 2)
    assert atlas.n_charts == 1
    assert overlap_targets(atlas, 0, [0.5, 0.5]) == set()


def test_identity_needs_matching_dims():
    cloud = PointCloud(np.random.default_rng(0).uniform(size=(20, 3)))
    with pytest.raises(PreconditionError):
        build_atlas(cloud, Cover((np.arange(20),)), 2, AtlasConfig(kind="identity"))


def test_training_error_names_subset():
    cloud = PointCloud(np.random.default_rng(0).uniform(size=(20, 3)))
    with pytest.raises(PreconditionError, match="subset 1"):
        build_atlas(cloud, Cover((np.arange(18), [17, 18, 19])), 2)


def test_overlap_targets_examples():
    atlas, pts = three_strip_atlas()
    c0 = atlas.charts[0]
    shared = np.flatnonzero(c0.ambient[:, 0] >= 0.9)[0]
    assert overlap_targets(atlas, 0, c0.latent[shared]) == {1}
    assert overlap_targets(atlas, 0, [0.1, 0.5]) == set()


def test_overlap_labels_symmetric(torus_atlas):
    cloud, cover, atlas = torus_atlas
    for i, j in cover.adjacency:
        shared = np.intersect1d(cover.subsets[i], cover.subsets[j])
        ri = np.searchsorted(atlas.charts[i].subset_ids, shared)
        rj = np.searchsorted(atlas.charts[j].subset_ids, shared)
        assert atlas.labels[i][ri, j].all() and atlas.labels[j][rj, i].all()
        # brute force: every intersection member's latent routes to j
        for r in ri:
            assert j in overlap_targets(atlas, i, atlas.charts[i].latent[r])


def test_identity_transition_exact():
    atlas, _ = three_strip_atlas()
    x = np.array([1.0, 0.4])
    assert np.array_equal(transition(atlas, 0, 1, x), x)
    with pytest.raises(TransitionError):
        transition(atlas, 0, 2, [0.5, 0.5])


def test_circle_transition_closed_form():
    atlas = circle_atlas()
    for x in (1.4, -1.7, 2.0):
        got = transition(atlas, 0, 1, [x])[0]
        want = (x - math.pi + math.pi) % (2 * math.pi) - math.pi
        assert got == pytest.approx(want, abs=1e-12)


def test_torus_round_trip(torus_atlas):
    cloud, cover, atlas = torus_atlas
    good = total = 0
    for i, j in cover.adjacency:
        for a, b in ((i, j), (j, i)):
            ci = atlas.charts[a]
            X = ci.latent[atlas.labels[a][:, b]]
            Xj, ok = atlas.transition_batch(a, b, X)
            Xi, ok2 = atlas.transition_batch(b, a, Xj)
            s0 = ci.forward_batch(X)[0]
            s1 = ci.forward_batch(Xi)[0]
            diam = np.ptp(ci.ambient, axis=0).max()
            good += np.count_nonzero(ok & ok2 & (np.linalg.norm(s0 - s1, axis=1) < 0.05 * diam))
            total += len(X)
    assert good >= 0.95 * total


def test_save_load_digest(tmp_path, torus_atlas):
    atlas = torus_atlas[2]
    atlas.save(tmp_path / "a.json", extra={"seed": 0})
    back = Atlas.load(tmp_path / "a.json")
    assert back.digest == atlas.digest
    x = atlas.charts[2].latent[:5]
    assert np.array_equal(back.charts[2].forward_batch(x)[0], atlas.charts[2].forward_batch(x)[0])
    other = Atlas(back.charts[:-1])
    assert other.digest != atlas.digest
    (tmp_path / "bad.json").write_text('{"charts": 3}')
    with pytest.raises(DataError):
        Atlas.load(tmp_path / "bad.json")
