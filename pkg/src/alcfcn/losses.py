"""Point-supervised LCFCN loss, the PL-FCN baseline, and the weighted CE/IoU pair.

``S`` is always a softmax map of shape [2, H, W] (channel 0 background,
channel 1 foreground).  Points are (row, col) pairs at the same resolution.
The discrete structure the LCFCN terms select (argmax pixel, blobs,
watershed boundaries) is computed from ``S.data`` and receives no gradient.
"""
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, log, max_all
from .blobs import label_blobs, watershed_split


def as_points(pts, shape=None):
    """Validate and return points as an int64 array of shape (n, 2)."""
    arr = np.asarray(pts, dtype=np.int64).reshape(-1, 2)
    if shape is not None and arr.size:
        H, W = shape
        bad = (arr[:, 0] < 0) | (arr[:, 0] >= H) | (arr[:, 1] < 0) | (arr[:, 1] >= W)
        if bad.any():
            raise ValueError(f"point {tuple(arr[bad][0])} outside a {H}x{W} image")
    if arr.shape[0] != np.unique(arr, axis=0).shape[0]:
        raise ValueError("duplicate points")
    return arr


def _zero(S):
    return Tensor(0.0, dtype=S.dtype)


@dataclass
class BlobStructure:
    labels: np.ndarray
    count: int
    points_per_blob: np.ndarray  # index b-1 -> number of points inside blob b
    split_weights: np.ndarray  # per-pixel weight of the split term
    fp_mask: np.ndarray  # pixels of blobs without any point


def blob_structure(S, pts, split_weight="count"):
    """Blobs of argmax(S) and the pixel sets the split/false-positive terms act on."""
    sd = S.data if isinstance(S, Tensor) else np.asarray(S)
    pts = as_points(pts, sd.shape[1:])
    fg = sd[1] > sd[0]
    blobs = label_blobs(fg)
    labels = blobs.labels
    per_blob = np.zeros(blobs.count, dtype=np.int64)
    point_blob = labels[pts[:, 0], pts[:, 1]] if pts.size else np.zeros(0, np.int64)
    for b in point_blob:
        if b > 0:
            per_blob[b - 1] += 1
    split = np.zeros(fg.shape, dtype=np.float64)
    surface = -sd[1].astype(np.float64)
    for b in np.nonzero(per_blob >= 2)[0] + 1:
        inside = labels == b
        seeds = pts[point_blob == b]
        ws = watershed_split(inside, seeds, surface)
        k = seeds.shape[0] if split_weight == "count" else 1
        split[ws.boundary] += k
    fp_ids = np.nonzero(per_blob == 0)[0] + 1
    fp_mask = np.isin(labels, fp_ids) if fp_ids.size else np.zeros(fg.shape, dtype=bool)
    return BlobStructure(labels, blobs.count, per_blob, split, fp_mask)


def loss_image_level(S, pts):
    pts = as_points(pts)
    m = max_all(S[1])
    if pts.shape[0] > 0:
        return -log(m)
    return -log(1.0 - m)


def loss_point_level(S, pts):
    pts = as_points(pts, S.shape[1:])
    if pts.shape[0] == 0:
        return _zero(S)
    return -log(S[1, pts[:, 0], pts[:, 1]]).sum()


def _weighted_bg_nll(S, weights):
    if not np.any(weights):
        return _zero(S)
    return -(log(S[0]) * weights.astype(S.dtype)).sum()


def loss_split_level(S, pts, split_weight="count", structure=None):
    st = structure or blob_structure(S, pts, split_weight)
    return _weighted_bg_nll(S, st.split_weights)


def loss_false_positive(S, pts, structure=None):
    st = structure or blob_structure(S, pts)
    return _weighted_bg_nll(S, st.fp_mask)


def lcfcn_terms(S, pts, split_weight="count"):
    st = blob_structure(S, pts, split_weight)
    return {
        "image": loss_image_level(S, pts),
        "point": loss_point_level(S, pts),
        "split": loss_split_level(S, pts, structure=st),
        "false_positive": loss_false_positive(S, pts, structure=st),
    }


def lcfcn_loss(S, pts, split_weight="count"):
    """Unweighted sum of the image, point, split and false-positive terms."""
    t = lcfcn_terms(S, pts, split_weight)
    return t["image"] + t["point"] + t["split"] + t["false_positive"]


def pl_fcn_loss(S, pts):
    """Point cross-entropy; images without points push every pixel to background."""
    pts = as_points(pts, S.shape[1:])
    if pts.shape[0] == 0:
        return -log(S[0]).sum()
    return -log(S[1, pts[:, 0], pts[:, 1]]).sum()


def box_mean(x, window):
    """Mean over a ``window`` x ``window`` box, zero padded (padding counts)."""
    r = window // 2
    xp = np.pad(np.asarray(x, dtype=np.float64), r)
    c = np.pad(xp.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    H, W = np.shape(x)
    s = c[window:window + H, window:window + W] - c[:H, window:window + W] - c[window:window + H, :W] + c[:H, :W]
    return s / (window * window)


def boundary_weights(mask, window=15, factor=5.0):
    """1 + factor * |local mean(mask) - mask|; large near mask edges."""
    m = np.asarray(mask, dtype=np.float64)
    return 1.0 + factor * np.abs(box_mean(m, window) - m)


def weighted_ce_loss(S, mask, weights=None, window=15, factor=5.0):
    m = np.asarray(mask, dtype=bool)
    w = boundary_weights(m, window, factor) if weights is None else np.asarray(weights, dtype=np.float64)
    w_fg = (w * m).astype(S.dtype)
    w_bg = (w * ~m).astype(S.dtype)
    total = (log(S[1]) * w_fg).sum() + (log(S[0]) * w_bg).sum()
    return -total * (1.0 / float(w.sum()))


def weighted_iou_loss(S, mask, weights=None, window=15, factor=5.0):
    m = np.asarray(mask, dtype=np.float64)
    w = boundary_weights(m, window, factor) if weights is None else np.asarray(weights, dtype=np.float64)
    p = S[1]
    inter = (p * (w * m).astype(S.dtype)).sum()
    union = (p * w.astype(S.dtype)).sum() + float((w * m).sum())
    return 1.0 - (inter + 1.0) / (union - inter + 1.0)


def fs_loss(S, mask, window=15, factor=5.0):
    w = boundary_weights(mask, window, factor)
    return weighted_ce_loss(S, mask, w) + weighted_iou_loss(S, mask, w)
