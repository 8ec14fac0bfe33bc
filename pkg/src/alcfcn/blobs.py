"""Connected blobs of a foreground mask and seeded watershed splitting."""
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass
class BlobLabeling:
    labels: np.ndarray  # 0 background, 1..count in row-major first-encounter order
    count: int

    def sizes(self):
        return np.bincount(self.labels.ravel(), minlength=self.count + 1)[1:]


@dataclass
class WatershedResult:
    region: np.ndarray  # seed id (1-based, annotation order) per pixel, 0 = unassigned
    boundary: np.ndarray  # bool

    @property
    def boundary_pixels(self):
        return np.argwhere(self.boundary)


def label_blobs(fg_mask):
    """8-connected components of a binary map."""
    mask = np.ascontiguousarray(np.asarray(fg_mask, dtype=bool))
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-d mask, got shape {mask.shape}")
    labels, count = kernels.label8(mask)
    return BlobLabeling(labels, int(count))


def watershed_split(blob, seeds, surface):
    """Grow one region per seed over ``blob`` and return the separating pixels.

    Pixels pop in order of increasing ``surface`` height; ties go to the entry
    pushed first, and seeds are pushed in the order given.  Growth uses the
    4-neighbourhood.  A popped pixel that already touches two different
    regions becomes boundary and is claimed by neither.  Blob pixels reachable
    only through boundary pixels (or only diagonally) stay unassigned.
    """
    blob = np.ascontiguousarray(np.asarray(blob, dtype=bool))
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1, 2)
    if seeds.shape[0] == 0:
        raise ValueError("watershed_split needs at least one seed")
    H, W = blob.shape
    for r, c in seeds:
        if not (0 <= r < H and 0 <= c < W) or not blob[r, c]:
            raise ValueError(f"seed ({r}, {c}) lies outside the blob")
    flat_seeds = seeds[:, 0] * W + seeds[:, 1]
    if np.unique(flat_seeds).size != flat_seeds.size:
        raise ValueError("duplicate seeds")
    heights = np.ascontiguousarray(np.asarray(surface, dtype=np.float64).reshape(-1))
    region, boundary = kernels.watershed(heights, blob.reshape(-1), W, flat_seeds)
    return WatershedResult(region.reshape(H, W), boundary.reshape(H, W))
