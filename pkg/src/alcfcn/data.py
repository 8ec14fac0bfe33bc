"""Synthetic fish scenes, the on-disk dataset format, point extraction, normalisation.

Layout under a dataset root::

    manifest.json
    {train,val,test}/images/NNNN.png   8-bit RGB
    {train,val,test}/masks/NNNN.png    instance ids, 8-bit (16-bit above 255 ids)
    {train,val,test}/points/NNNN.json  [{"y": row, "x": col, "instance_id": k}, ...]
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image

from . import kernels
from .autodiff import Tensor, interp_matrix

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
MANIFEST_VERSION = 1


class DatasetError(IOError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 uint8
    points: np.ndarray  # n x 2 int64 (row, col)
    instance_mask: Optional[np.ndarray] = None  # H x W, 0 = background
    instance_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    split: str = "train"
    name: str = ""

    @property
    def count(self):
        return int(self.points.shape[0])

    @property
    def fg_mask(self):
        return None if self.instance_mask is None else self.instance_mask > 0


@dataclass
class DatasetManifest:
    root: Path
    samples: List[dict]
    splits: dict
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def records(self, split=None):
        return [r for r in self.samples if split is None or r["split"] == split]

    def to_json(self):
        return {"format_version": MANIFEST_VERSION, "seed": self.seed, "splits": self.splits,
                "meta": self.meta, "samples": self.samples}


# --------------------------------------------------------------------------
# points from instance masks
# --------------------------------------------------------------------------

def points_from_mask(instance_mask, ids=None):
    """One point per instance: the pixel farthest (Euclidean) from the instance's complement.

    Ties resolve to the smallest row-major index.  Returns (points[n,2], ids[n]).
    """
    m = np.asarray(instance_mask)
    if ids is None:
        ids = np.unique(m)
        ids = ids[ids != 0]
    H, W = m.shape
    pts, kept = [], []
    for k in ids:
        ys, xs = np.nonzero(m == k)
        if ys.size == 0:
            log.warning("instance id %s has no pixels; skipped", k)
            continue
        y0, y1 = max(ys.min() - 1, 0), min(ys.max() + 2, H)
        x0, x1 = max(xs.min() - 1, 0), min(xs.max() + 2, W)
        crop = np.ascontiguousarray(m[y0:y1, x0:x1] == k)
        d = kernels.edt_sq(crop)
        d[~crop] = -1
        r, c = np.unravel_index(int(np.argmax(d)), crop.shape)
        pts.append((r + y0, c + x0))
        kept.append(int(k))
    return np.array(pts, dtype=np.int64).reshape(-1, 2), np.array(kept, dtype=np.int64)


# --------------------------------------------------------------------------
# synthetic scenes
# --------------------------------------------------------------------------

DIFFICULTIES = {
    # count_probs over 0..4 fish; axes in pixels; contrast in [0,1] of fish vs water
    "trivial": dict(count_probs=(0.2, 0.3, 0.3, 0.2, 0.0), major=(10, 15), minor=(4.5, 6.5),
                    contrast=(0.85, 1.0), texture=0.02, gap=3, overlap=False),
    "standard": dict(count_probs=(0.2, 0.25, 0.25, 0.15, 0.15), major=(7, 14), minor=(3, 5.5),
                     contrast=(0.45, 0.8), texture=0.06, gap=1, overlap=False),
    "hard": dict(count_probs=(0.15, 0.2, 0.25, 0.2, 0.2), major=(6, 14), minor=(2.5, 5),
                 contrast=(0.25, 0.6), texture=0.1, gap=0, overlap=True),
}


def _smooth_noise(rng, H, W, cell):
    gh, gw = H // cell + 2, W // cell + 2
    g = rng.normal(size=(gh, gw))
    return interp_matrix(gh, H) @ g @ interp_matrix(gw, W).T


def _ellipse(H, W, cy, cx, a, b, theta):
    yy, xx = np.mgrid[0:H, 0:W]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _dilate(mask, r):
    if r <= 0:
        return mask
    out = mask.copy()
    H, W = mask.shape
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            src = mask[max(0, -dy):H - max(0, dy), max(0, -dx):W - max(0, dx)]
            out[max(0, dy):H - max(0, -dy), max(0, dx):W - max(0, -dx)] |= src
    return out


def synth_scene(rng, height=64, width=96, difficulty="standard", n_fish=None):
    """One image with its instance mask."""
    p = DIFFICULTIES[difficulty]
    H, W = height, width
    if n_fish is None:
        n_fish = int(rng.choice(len(p["count_probs"]), p=p["count_probs"]))
    water = np.array([0.12, 0.35, 0.42]) + rng.uniform(-0.05, 0.05, 3)
    img = np.empty((H, W, 3))
    shade = 0.08 * _smooth_noise(rng, H, W, 16) + p["texture"] * _smooth_noise(rng, H, W, 4)
    for c in range(3):
        img[..., c] = water[c] + shade + 0.02 * rng.normal(size=(H, W))
    mask = np.zeros((H, W), dtype=np.int32)
    placed = 0
    for _ in range(60 * max(n_fish, 1)):
        if placed == n_fish:
            break
        a = rng.uniform(*p["major"])
        b = min(rng.uniform(*p["minor"]), a * 0.8)
        theta = rng.uniform(0, np.pi)
        cy = rng.uniform(b + 1, H - b - 2)
        cx = rng.uniform(a * 0.5 + 1, W - a * 0.5 - 2)
        fish = _ellipse(H, W, cy, cx, a, b, theta)
        if fish.sum() < 12:
            continue
        if not p["overlap"] and np.any(_dilate(fish, p["gap"]) & (mask > 0)):
            continue
        placed += 1
        mask[fish] = placed
        contrast = rng.uniform(*p["contrast"])
        tint = np.array([0.85, 0.88, 0.9]) + rng.uniform(-0.08, 0.08, 3)
        body = water + contrast * (tint - water)
        stripes = 0.05 * np.sin(rng.uniform(0.5, 1.5) * np.arange(W))[None, :]
        for c in range(3):
            chan = img[..., c]
            chan[fish] = (body[c] + stripes + 0.02 * rng.normal(size=(H, W)))[fish]
    if mask.max() > 0 and difficulty == "hard":
        # occlusion can leave an instance id with no pixels; renumber densely
        ids = np.unique(mask[mask > 0])
        remap = np.zeros(mask.max() + 1, np.int32)
        remap[ids] = np.arange(1, ids.size + 1)
        mask = remap[mask]
    img8 = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    return img8, mask


def synth_generate(root, n_train=200, n_val=40, n_test=50, seed=0, difficulty="standard",
                   height=64, width=96):
    """Write a synthetic dataset under ``root`` and return its manifest."""
    sizes = {"train": n_train, "val": n_val, "test": n_test}
    if any(int(v) <= 0 for v in sizes.values()):
        raise ValueError(f"split sizes must be positive, got {sizes}")
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    root = Path(root)
    records = []
    for si, split in enumerate(SPLITS):
        for i in range(sizes[split]):
            rng = np.random.default_rng([seed, si, i])
            img, mask = synth_scene(rng, height, width, difficulty)
            pts, ids = points_from_mask(mask)
            sample = Sample(img, pts, mask, ids, split, f"{i:04d}")
            records.append(save_sample(root, sample))
    manifest = DatasetManifest(root, records, sizes, seed,
                               {"difficulty": difficulty, "height": height, "width": width,
                                "generator": "alcfcn.synth"})
    write_manifest(manifest)
    return manifest


# --------------------------------------------------------------------------
# disk IO
# --------------------------------------------------------------------------

def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_manifest(manifest):
    manifest.root.mkdir(parents=True, exist_ok=True)
    _write_json(manifest.root / "manifest.json", manifest.to_json())


def save_sample(root, sample):
    """Write image, mask and points for ``sample``; returns its manifest record."""
    root = Path(root)
    rel = {}
    for kind in ("images", "masks", "points"):
        (root / sample.split / kind).mkdir(parents=True, exist_ok=True)
    rel["image"] = f"{sample.split}/images/{sample.name}.png"
    Image.fromarray(np.asarray(sample.image, dtype=np.uint8)).save(root / rel["image"])
    rel["mask"] = None
    if sample.instance_mask is not None:
        rel["mask"] = f"{sample.split}/masks/{sample.name}.png"
        m = np.asarray(sample.instance_mask)
        arr = m.astype(np.uint16) if m.max(initial=0) > 255 else m.astype(np.uint8)
        Image.fromarray(arr).save(root / rel["mask"])
    rel["points"] = f"{sample.split}/points/{sample.name}.json"
    ids = sample.instance_ids if len(sample.instance_ids) == len(sample.points) else np.zeros(len(sample.points), int)
    pts = [{"y": int(r), "x": int(c), "instance_id": int(k)} for (r, c), k in zip(sample.points, ids)]
    _write_json(root / rel["points"], pts)
    return {"split": sample.split, "name": sample.name, **rel}


def read_manifest(root):
    root = Path(root)
    path = root / "manifest.json"
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc
    records = obj.get("samples", [])
    seen = set()
    for r in records:
        key = (r.get("split"), r.get("name"))
        if r.get("split") not in SPLITS:
            raise DatasetError(f"{path}: unknown split {r.get('split')!r}")
        if key in seen:
            raise DatasetError(f"{path}: duplicate sample {key}")
        seen.add(key)
    return DatasetManifest(root, records, obj.get("splits", {}), obj.get("seed"), obj.get("meta", {}))


def _read_points(path, shape):
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise DatasetError(f"cannot read points file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed points file {path}: {exc}") from exc
    if not isinstance(obj, list):
        raise DatasetError(f"points file {path} must hold a list")
    pts, ids = [], []
    H, W = shape
    for e in obj:
        try:
            r, c, k = int(e["y"]), int(e["x"]), int(e.get("instance_id", 0))
        except (TypeError, KeyError, ValueError) as exc:
            raise DatasetError(f"points file {path}: bad entry {e!r}") from exc
        if not (0 <= r < H and 0 <= c < W):
            raise DatasetError(f"points file {path}: point ({r}, {c}) outside {H}x{W} image")
        pts.append((r, c))
        ids.append(k)
    arr = np.array(pts, dtype=np.int64).reshape(-1, 2)
    if np.unique(arr, axis=0).shape[0] != arr.shape[0]:
        raise DatasetError(f"points file {path}: duplicate points")
    return arr, np.array(ids, dtype=np.int64)


def load_sample(root, record):
    root = Path(root)
    img_path = root / record["image"]
    try:
        image = np.array(Image.open(img_path).convert("RGB"))
    except OSError as exc:
        raise DatasetError(f"cannot read image {img_path}: {exc}") from exc
    mask = None
    if record.get("mask"):
        mpath = root / record["mask"]
        try:
            mask = np.array(Image.open(mpath)).astype(np.int32)
        except OSError as exc:
            raise DatasetError(f"cannot read mask {mpath}: {exc}") from exc
        if mask.shape != image.shape[:2]:
            raise DatasetError(f"mask {mpath} has shape {mask.shape}, image is {image.shape[:2]}")
    ppath = root / record["points"]
    pts, ids = _read_points(ppath, image.shape[:2])
    if mask is not None:
        inst = np.unique(mask[mask > 0])
        if not np.array_equal(np.sort(ids), inst):
            raise DatasetError(f"points file {ppath}: instance ids {sorted(ids.tolist())} "
                               f"do not match mask ids {inst.tolist()}")
        if pts.size and np.any(mask[pts[:, 0], pts[:, 1]] != ids):
            raise DatasetError(f"points file {ppath}: a point lies outside its instance")
    return Sample(image, pts, mask, ids, record["split"], record.get("name", ""))


def load_dataset(manifest, split=None):
    """Decode and validate every sample of ``split`` (all splits if None)."""
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    return [load_sample(manifest.root, r) for r in manifest.records(split)]


def save_overlay(path, image, pred_mask=None, points=None, gt_mask=None, alpha=0.5):
    """Blend the predicted mask (red), GT outline (yellow) and points (green) onto the image."""
    out = np.asarray(image, dtype=np.float64).copy()
    if pred_mask is not None:
        pm = np.asarray(pred_mask, dtype=bool)
        out[pm] = (1 - alpha) * out[pm] + alpha * np.array([255.0, 0, 0])
    if gt_mask is not None:
        g = np.asarray(gt_mask) > 0
        edge = g & ~(_erode4(g))
        out[edge] = [255, 255, 0]
    if points is not None:
        H, W = out.shape[:2]
        for r, c in np.asarray(points).reshape(-1, 2):
            out[max(r - 1, 0):min(r + 2, H), max(c - 1, 0):min(c + 2, W)] = [0, 255, 0]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.clip(out, 0, 255).astype(np.uint8)).save(path)
    return path


def _erode4(m):
    p = np.pad(m, 1)
    return p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]


def pad4(n):
    return (n + 3) // 4 * 4


def normalize_image(image):
    """uint8 H x W x 3 -> Tensor[3, pad4(H), pad4(W)] with ImageNet statistics."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {img.shape}")
    x = (img.astype(np.float64) / 255.0 - IMAGENET_MEAN) / IMAGENET_STD
    H, W = img.shape[:2]
    x = np.pad(x, ((0, pad4(H) - H), (0, pad4(W) - W), (0, 0)), mode="edge")
    return Tensor(np.transpose(x, (2, 0, 1)))
