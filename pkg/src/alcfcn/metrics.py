"""Segmentation and counting metrics: IoU/mIoU, count MAE, GAME(L), always-median."""
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .blobs import label_blobs


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, pred, gt):
        p = np.asarray(pred, dtype=bool)
        g = np.asarray(gt, dtype=bool)
        if p.shape != g.shape:
            raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
        self.tp += int(np.count_nonzero(p & g))
        self.fp += int(np.count_nonzero(p & ~g))
        self.fn += int(np.count_nonzero(~p & g))
        self.tn += int(np.count_nonzero(~p & ~g))
        return self

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self):
        """Counts for the background class (roles of positives and negatives exchanged)."""
        return ConfusionCounts(self.tn, self.fn, self.fp, self.tp)


def iou(counts):
    """TP / (TP + FP + FN); an empty union counts as perfect agreement."""
    union = counts.tp + counts.fp + counts.fn
    return 1.0 if union == 0 else counts.tp / union


def miou(fg_iou, bg_iou):
    return 0.5 * (fg_iou + bg_iou)


def foreground(S):
    """Argmax foreground of a [2,H,W] score map; ties go to background."""
    s = S.data if isinstance(S, Tensor) else np.asarray(S)
    return s[1] > s[0]


def blob_centroids(mask):
    """Rounded (row, col) centroid of every 8-connected blob, in label order."""
    lab = label_blobs(mask)
    if lab.count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    ys, xs = np.nonzero(lab.labels)
    ids = lab.labels[ys, xs]
    n = np.bincount(ids, minlength=lab.count + 1)[1:]
    cy = np.bincount(ids, weights=ys, minlength=lab.count + 1)[1:] / n
    cx = np.bincount(ids, weights=xs, minlength=lab.count + 1)[1:] / n
    return np.stack([np.floor(cy + 0.5), np.floor(cx + 0.5)], axis=1).astype(np.int64)


def instance_centroids(instance_mask):
    """Rounded centroid of every instance id (ascending), localized like predicted blobs."""
    m = np.asarray(instance_mask)
    ids, inv = np.unique(m, return_inverse=True)
    inv = inv.reshape(m.shape)
    ys, xs = np.indices(m.shape)
    n = np.bincount(inv.ravel())
    cy = np.bincount(inv.ravel(), weights=ys.ravel()) / n
    cx = np.bincount(inv.ravel(), weights=xs.ravel()) / n
    keep = ids != 0
    return np.stack([np.floor(cy[keep] + 0.5), np.floor(cx[keep] + 0.5)], axis=1).astype(np.int64)


def count_blobs(S):
    return label_blobs(foreground(S)).count


def mae(pred_counts, true_counts):
    p = np.asarray(pred_counts, dtype=np.float64)
    t = np.asarray(true_counts, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("count vectors differ in length")
    if p.size == 0:
        return 0.0
    return float(np.abs(p - t).sum() / p.size)


def grid_cells(points, shape, L):
    """Flat cell index of every point on a 2^L x 2^L grid; the last row/column absorbs remainders."""
    n = 2 ** L
    H, W = shape
    ch, cw = max(H // n, 1), max(W // n, 1)
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    r = np.minimum(pts[:, 0] // ch, n - 1)
    c = np.minimum(pts[:, 1] // cw, n - 1)
    return r * n + c


def game_image(pred_points, true_points, shape, L):
    n = 4 ** L
    pc = np.bincount(grid_cells(pred_points, shape, L), minlength=n)
    tc = np.bincount(grid_cells(true_points, shape, L), minlength=n)
    return int(np.abs(pc - tc).sum())


def game(pred_points, true_points, shapes, L=4):
    """Grid average mean absolute error over a set of images.

    ``pred_points``/``true_points`` are per-image (n_i, 2) arrays of locations;
    ``shapes`` gives each image's (H, W) or a single shared shape.
    """
    N = len(true_points)
    if len(pred_points) != N:
        raise ValueError("prediction and ground-truth lists differ in length")
    if L < 0:
        raise ValueError("L must be >= 0")
    if N == 0:
        return 0.0
    if len(shapes) == 2 and np.isscalar(shapes[0]):
        shapes = [tuple(shapes)] * N
    total = sum(game_image(p, t, s, L) for p, t, s in zip(pred_points, true_points, shapes))
    return total / N


class AlwaysMedian:
    """Constant counter that predicts the training-set median count."""

    def __init__(self, train_counts):
        counts = np.asarray(train_counts, dtype=np.float64)
        if counts.size == 0:
            raise ValueError("need at least one training count")
        self.value = float(np.median(counts))

    def __call__(self, n=1):
        return np.full(n, self.value)


def always_median_baseline(train_counts):
    return AlwaysMedian(train_counts)
