"""Pseudo-mask export from a trained weak model and full training on those masks.

Exported layout under the output directory::

    provenance.json             checkpoint id, source dataset, file list
    {split}/NNNN.png            0 = background, 255 = foreground
    {split}/NNNN.json           per-mask provenance (checkpoint id, size)
"""
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor, bilinear_upsample, no_grad
from .config import ConfigError
from .data import DatasetError, load_dataset, normalize_image, read_manifest
from .params import checkpoint_id
from .train import load_model, train


def argmax_mask(scores):
    """Per-pixel argmax of [2, H, W] scores; ties go to background."""
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return (s[1] > s[0]).astype(np.uint8)


def pseudo_mask(model, image):
    """Refined activations, bilinearly upsampled to the image, then argmax."""
    H, W = np.asarray(image).shape[:2]
    with no_grad():
        x = normalize_image(image)
        _, aux = model(x)
        up = bilinear_upsample(aux["f_ref"], x.shape[1], x.shape[2])
    return argmax_mask(up.data[:, :H, :W])


def generate_pseudo_masks(checkpoint, dataset, out_dir=None, splits=("train",)):
    """Return {(split, name): uint8 0/1 mask}; also writes PNG + JSON when ``out_dir`` is given."""
    model, meta = load_model(checkpoint)
    if meta.get("kind") != "alcfcn":
        raise ConfigError("pseudo-masks come from a weak (alcfcn) checkpoint")
    cid = checkpoint_id(checkpoint)
    manifest = dataset if hasattr(dataset, "records") else read_manifest(dataset)
    masks = {}
    files = []
    for split in splits:
        for s in load_dataset(manifest, split):
            m = pseudo_mask(model, s.image)
            masks[(split, s.name)] = m
            if out_dir is None:
                continue
            d = Path(out_dir) / split
            d.mkdir(parents=True, exist_ok=True)
            Image.fromarray(m * 255).save(d / f"{s.name}.png")
            rec = {"checkpoint_id": cid, "image": f"{split}/images/{s.name}.png",
                   "height": int(m.shape[0]), "width": int(m.shape[1])}
            (d / f"{s.name}.json").write_text(json.dumps(rec, sort_keys=True) + "\n")
            files.append(f"{split}/{s.name}.png")
    if out_dir is not None:
        prov = {"checkpoint_id": cid, "splits": list(splits), "files": files,
                "source_seed": manifest.seed}
        (Path(out_dir) / "provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True) + "\n")
    return masks


def read_pseudo_masks(pseudo_dir, samples):
    """Load 0/255 masks written by :func:`generate_pseudo_masks` for ``samples``."""
    out = []
    for s in samples:
        path = Path(pseudo_dir) / s.split / f"{s.name}.png"
        try:
            m = np.asarray(Image.open(path))
        except OSError as exc:
            raise DatasetError(f"cannot read pseudo-mask {path}: {exc}") from exc
        if m.shape != s.image.shape[:2]:
            raise DatasetError(f"{path}: mask {m.shape} does not match image {s.image.shape[:2]}")
        out.append(m > 0)
    return out


def train_full(cfg, masks=None, out_dir=None, seed=None):
    """Train the fully-supervised student on pseudo masks (or ground truth when no dir is set)."""
    cfg.loss.kind = "fs"
    manifest = read_manifest(cfg.data.root)
    tr = load_dataset(manifest, "train")
    va = load_dataset(manifest, "val")
    if not tr:
        raise ConfigError("training split is empty")
    if masks is None:
        if cfg.data.pseudo_dir:
            masks = read_pseudo_masks(cfg.data.pseudo_dir, tr)
        else:
            if any(s.instance_mask is None for s in tr):
                raise ConfigError("no pseudo_dir set and the training split has no masks")
            masks = [s.fg_mask for s in tr]
    return train(cfg, tr, va, out_dir or Path(cfg.output_dir) / "full", targets=masks, seed=seed)
