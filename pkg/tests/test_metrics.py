import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from alcfcn.metrics import (ConfusionCounts, always_median_baseline, blob_centroids, count_blobs,
                            foreground, game, game_image, grid_cells, instance_centroids, iou, mae,
                            miou)
from oracles import cell_tally, flood_fill_labels


def counts(pred, gt):
    return ConfusionCounts().add(pred, gt)


def test_identical_and_disjoint_masks():
    m = np.zeros((4, 4), bool)
    m[:2] = True
    assert iou(counts(m, m)) == 1.0
    assert iou(counts(m, ~m)) == 0.0


def test_empty_union_is_one():
    z = np.zeros((3, 3), bool)
    assert iou(counts(z, z)) == 1.0
    assert iou(counts(z, z).swapped()) == 1.0
    assert iou(counts(z, np.ones((3, 3), bool))) == 0.0


def test_iou_matches_pixel_loop_oracle():
    r = np.random.default_rng(3)
    for _ in range(50):
        p = r.random((7, 9)) < r.random()
        g = r.random((7, 9)) < r.random()
        tp = fp = fn = 0
        for a, b in zip(p.ravel(), g.ravel()):
            tp += a and b
            fp += a and not b
            fn += b and not a
        ref = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
        assert iou(counts(p, g)) == pytest.approx(ref, abs=1e-15)


@given(arrays(bool, (6, 5)), arrays(bool, (6, 5)))
def test_iou_symmetry_and_conservation(p, g):
    c = counts(p, g)
    assert iou(c) == iou(counts(g, p))
    assert iou(c.swapped()) == iou(counts(~p, ~g))
    assert c.total == p.size
    assert 0 <= miou(iou(c), iou(c.swapped())) <= 1


def test_counts_accumulate_over_images(rng):
    c = ConfusionCounts()
    for _ in range(4):
        c.add(rng.random((5, 6)) < 0.3, rng.random((5, 6)) < 0.3)
    assert c.total == 4 * 30 and min(c.tp, c.fp, c.fn, c.tn) >= 0
    with pytest.raises(ValueError):
        c.add(np.zeros((2, 2)), np.zeros((3, 2)))


def test_count_blobs():
    S = np.zeros((2, 8, 8))
    S[0] = 1
    assert count_blobs(S) == 0
    S[1, 1:3, 1:3] = 2
    S[1, 5:7, 4:7] = 2
    assert count_blobs(S) == 2


def test_foreground_ties_go_to_background():
    S = np.full((2, 2, 2), 0.5)
    assert not foreground(S).any()


def test_count_blobs_flood_fill_oracle():
    r = np.random.default_rng(8)
    for _ in range(30):
        S = r.random((2, 10, 12))
        assert count_blobs(S) == flood_fill_labels(S[1] > S[0])[1]


def test_mae():
    assert mae([1, 2, 3], [1, 2, 3]) == 0
    assert mae([2, 3, 0], [1, 2, 1]) == 1
    r = np.random.default_rng(0)
    p, t = r.integers(0, 9, 40), r.integers(0, 9, 40)
    assert mae(p, t) == pytest.approx(sum(abs(int(a) - int(b)) for a, b in zip(p, t)) / 40)
    with pytest.raises(ValueError):
        mae([1], [1, 2])


def test_centroid_rounding():
    m = np.zeros((6, 6), bool)
    m[1:3, 1:3] = True  # centroid (1.5, 1.5) -> (2, 2)
    np.testing.assert_array_equal(blob_centroids(m), [[2, 2]])
    assert blob_centroids(np.zeros((3, 3), bool)).shape == (0, 2)


def test_game_zero_is_count_error():
    pts = [[(1, 1), (5, 5)], [(0, 0)]]
    true = [[(2, 2)], [(3, 3), (4, 4), (1, 1)]]
    assert game(pts, true, (8, 8), L=0) == pytest.approx((1 + 2) / 2)


def test_game_wrong_cell_costs_two():
    assert game([[(1, 1)]], [[(6, 6)]], (8, 8), L=1) == 2
    assert game([[(1, 1)]], [[(2, 2)]], (8, 8), L=1) == 0


def test_grid_remainder_absorbed_by_last_cells():
    # 10 rows / 4 = 2 per cell; rows 6..9 fall in the last cell row
    cells = grid_cells([(9, 0), (6, 0), (5, 0)], (10, 8), 2)
    np.testing.assert_array_equal(cells // 4, [3, 3, 2])


def test_game_matches_cell_tally_oracle():
    r = np.random.default_rng(4)
    for _ in range(40):
        H, W = int(r.integers(5, 40)), int(r.integers(5, 40))
        L = int(r.integers(0, 4))
        pp = np.stack([r.integers(0, H, 5), r.integers(0, W, 5)], 1)
        tp = np.stack([r.integers(0, H, 3), r.integers(0, W, 3)], 1)
        ref = np.abs(cell_tally(pp, (H, W), L) - cell_tally(tp, (H, W), L)).sum()
        assert game_image(pp, tp, (H, W), L) == ref


@st.composite
def point_sets(draw):
    k = draw(st.integers(0, 3))
    H, W = 8 * 2 ** k, 8 * 2 ** draw(st.integers(0, 3))
    pts = st.lists(st.tuples(st.integers(0, H - 1), st.integers(0, W - 1)), max_size=6)
    n = draw(st.integers(1, 4))
    return [draw(pts) for _ in range(n)], [draw(pts) for _ in range(n)], (H, W)


@given(point_sets())
def test_game_monotone_in_L_and_equals_mae_at_zero(case):
    # sizes divisible by 2^L so that finer grids nest inside coarser ones
    pred, true, shape = case
    vals = [game(pred, true, shape, L) for L in range(4)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[0] == mae([len(p) for p in pred], [len(t) for t in true])


def test_game_rejects_bad_input():
    with pytest.raises(ValueError):
        game([[]], [[], []], (4, 4))
    with pytest.raises(ValueError):
        game([[]], [[]], (4, 4), L=-1)


def test_always_median():
    assert always_median_baseline([0, 1, 1, 2]).value == 1
    assert always_median_baseline([0, 0, 0]).value == 0
    r = np.random.default_rng(1)
    train, test = r.integers(0, 5, 21), r.integers(0, 5, 17)
    pred = always_median_baseline(train)(len(test))
    med = sorted(train)[10]
    assert mae(pred, test) == pytest.approx(np.mean([abs(med - t) for t in test]))
    with pytest.raises(ValueError):
        always_median_baseline([])


def test_instance_centroids_match_blob_centroids_for_separated_instances():
    m = np.zeros((9, 9), np.int32)
    m[1:3, 1:4] = 2
    m[5:8, 5:8] = 1
    np.testing.assert_array_equal(instance_centroids(m), [[6, 6], [2, 2]])
    np.testing.assert_array_equal(blob_centroids(m == 2), [[2, 2]])
    assert instance_centroids(np.zeros((3, 3), np.int32)).shape == (0, 2)
