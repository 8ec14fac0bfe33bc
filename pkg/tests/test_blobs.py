import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alcfcn.blobs import label_blobs, watershed_split
from oracles import flood_fill_labels, priority_flood


def test_single_pixel_one_blob():
    m = np.zeros((4, 4), bool)
    m[2, 1] = True
    assert label_blobs(m).count == 1


def test_diagonal_pixels_join_under_8_connectivity():
    m = np.array([[1, 0], [0, 1]], bool)
    lab = label_blobs(m)
    assert lab.count == 1
    assert lab.labels[0, 0] == lab.labels[1, 1] == 1


def test_empty_mask():
    lab = label_blobs(np.zeros((3, 5), bool))
    assert lab.count == 0 and not lab.labels.any()


def test_label_order_is_first_encounter():
    m = np.zeros((5, 5), bool)
    m[0, 4] = True
    m[3, 0] = True
    m[1, 2] = True
    lab = label_blobs(m)
    assert lab.labels[0, 4] == 1 and lab.labels[1, 2] == 2 and lab.labels[3, 0] == 3


def test_flood_fill_oracle_50_masks():
    r = np.random.default_rng(5)
    for _ in range(50):
        m = r.random((16, 16)) < r.uniform(0.2, 0.6)
        lab = label_blobs(m)
        ref, n = flood_fill_labels(m)
        assert lab.count == n
        np.testing.assert_array_equal(lab.labels, ref)


@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_labels_match_oracle_property(m):
    lab = label_blobs(m)
    ref, n = flood_fill_labels(m)
    assert lab.count == n
    np.testing.assert_array_equal(lab.labels, ref)
    np.testing.assert_array_equal(lab.sizes(), np.bincount(ref.ravel(), minlength=n + 1)[1:])


def test_label_rejects_non_2d():
    with pytest.raises(ValueError):
        label_blobs(np.zeros(4, bool))


# -- watershed ------------------------------------------------------------------------

def test_one_seed_empty_boundary():
    blob = np.ones((3, 4), bool)
    ws = watershed_split(blob, [(1, 1)], np.zeros((3, 4)))
    assert not ws.boundary.any()
    assert np.all(ws.region[blob] == 1)


def test_strip_boundary_is_middle_pixel():
    blob = np.ones((1, 5), bool)
    ws = watershed_split(blob, [(0, 0), (0, 4)], np.zeros((1, 5)))
    np.testing.assert_array_equal(ws.boundary[0], [0, 0, 1, 0, 0])
    np.testing.assert_array_equal(ws.region[0], [1, 1, 0, 2, 2])


def test_strip_oracle_agrees():
    blob = np.ones((1, 5), bool)
    region, boundary = priority_flood(blob, [(0, 0), (0, 4)], np.zeros((1, 5)))
    np.testing.assert_array_equal(boundary[0], [0, 0, 1, 0, 0])


@pytest.mark.parametrize("n", [2, 3, 4, 6, 7, 10])
def test_flat_1d_single_separator(n):
    blob = np.ones((1, n), bool)
    ws = watershed_split(blob, [(0, 0), (0, n - 1)], np.zeros((1, n)))
    assert ws.boundary.sum() <= 1
    assert np.all(ws.region[0, ~ws.boundary[0]] > 0)


def test_seed_validation():
    blob = np.zeros((3, 3), bool)
    blob[1, :] = True
    with pytest.raises(ValueError):
        watershed_split(blob, [(0, 0), (1, 1)], np.zeros((3, 3)))
    with pytest.raises(ValueError):
        watershed_split(blob, [], np.zeros((3, 3)))
    with pytest.raises(ValueError):
        watershed_split(blob, [(1, 1), (1, 1)], np.zeros((3, 3)))


def _random_blob(r, size=12):
    while True:
        m = r.random((size, size)) < 0.65
        lab, n = flood_fill_labels(m, conn=4)
        if n == 0:
            continue
        sizes = np.bincount(lab.ravel())[1:]
        k = int(np.argmax(sizes)) + 1
        if sizes[k - 1] >= 6:
            return lab == k


def _seeds(r, blob, k, spread=False):
    """``k`` distinct blob pixels; with ``spread`` no two are 4-adjacent (adjacent seeds cannot be split)."""
    ys, xs = np.nonzero(blob)
    out = []
    for i in r.permutation(ys.size):
        p = (int(ys[i]), int(xs[i]))
        if spread and any(abs(p[0] - q[0]) + abs(p[1] - q[1]) == 1 for q in out):
            continue
        out.append(p)
        if len(out) == k:
            break
    return out


def test_matches_priority_flood_oracle():
    r = np.random.default_rng(11)
    for _ in range(100):
        blob = _random_blob(r)
        seeds = _seeds(r, blob, int(r.integers(2, 5)))
        surface = np.round(r.random(blob.shape), 1)  # coarse heights force ties
        ws = watershed_split(blob, seeds, surface)
        region, boundary = priority_flood(blob, seeds, surface)
        np.testing.assert_array_equal(ws.region, region)
        np.testing.assert_array_equal(ws.boundary, boundary)


def test_seed_separation_200_blobs():
    r = np.random.default_rng(12)
    for _ in range(200):
        blob = _random_blob(r)
        seeds = _seeds(r, blob, int(r.integers(2, 5)), spread=True)
        ws = watershed_split(blob, seeds, r.random(blob.shape))
        assert not ws.boundary[~blob].any()
        assert not ws.boundary[tuple(np.array(seeds).T)].any()
        comp, n = flood_fill_labels(blob & ~ws.boundary, conn=4)
        seed_comp = [comp[s] for s in seeds]
        assert len(set(seed_comp)) == len(seeds)
        # each region is confined to its seed's component and no two regions touch
        for k, s in enumerate(seeds, 1):
            assert set(np.unique(comp[ws.region == k])) == {comp[s]}
        for a, b in ((ws.region[:, 1:], ws.region[:, :-1]), (ws.region[1:], ws.region[:-1])):
            clash = (a > 0) & (b > 0) & (a != b)
            assert not clash.any()


def test_unreached_pixels_only_behind_boundary():
    r = np.random.default_rng(13)
    for _ in range(100):
        blob = _random_blob(r)
        seeds = _seeds(r, blob, 3)
        ws = watershed_split(blob, seeds, r.random(blob.shape))
        orphan = blob & ~ws.boundary & (ws.region == 0)
        reach, _ = flood_fill_labels(blob & ~ws.boundary, conn=4)
        seeded = {reach[s] for s in seeds}
        assert all(reach[p] not in seeded for p in zip(*np.nonzero(orphan)))
