"""One trainer for every loss plug, plus evaluation, prediction and the grid runner.

Training is batch size 1: forward, loss, backward and one Adam step per image.
After every epoch the model is scored on the validation split by foreground /
background mIoU; the best epoch is checkpointed and training stops after
``patience`` epochs without improvement.
"""
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import backward, no_grad
from .config import AffinityConfig, ConfigError, ModelConfig, dump_config, set_key
from .data import load_dataset, normalize_image, read_manifest, save_overlay
from .losses import fs_loss, lcfcn_loss, pl_fcn_loss
from .metrics import (AlwaysMedian, ConfusionCounts, blob_centroids, foreground, game, instance_centroids, iou,
                      mae, miou)
from .models import ALCFCNModel, FSModel
from .params import Adam, checkpoint_id, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    """Non-finite loss; ``step`` is the global optimizer step that produced it."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass
class TrainLog:
    kind: str
    lr: float
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_miou: float = -1.0
    stopped_early: bool = False
    checkpoint: str = ""

    def to_json(self, with_time=True):
        rows = self.epochs if with_time else [{k: v for k, v in e.items() if k != "wall_time"} for e in self.epochs]
        return {"kind": self.kind, "lr": self.lr, "epochs": rows, "best_epoch": self.best_epoch,
                "best_val_miou": self.best_val_miou, "stopped_early": self.stopped_early,
                "checkpoint": self.checkpoint}

    @property
    def losses(self):
        return [e["train_loss"] for e in self.epochs]


# --------------------------------------------------------------------------
# models and checkpoints
# --------------------------------------------------------------------------

def model_kind(loss_kind):
    return "fs" if loss_kind == "fs" else "alcfcn"


def build_model(cfg, kind, seed=None):
    seed = cfg.seed if seed is None else seed
    if kind == "fs":
        return FSModel.create(cfg.model, seed=seed)
    return ALCFCNModel.create(cfg.model, cfg.affinity, seed=seed)


def _model_meta(model, kind):
    meta = {"kind": kind, "model": _plain(model.config.__dict__)}
    if kind == "alcfcn":
        meta["affinity"] = _plain(model.affinity.__dict__)
    return meta


def _plain(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_model(path):
    """Rebuild a model from a checkpoint written by :func:`train`."""
    store, meta = load_checkpoint(path)
    mcfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["model"].items()})
    if meta.get("kind") == "fs":
        return FSModel(store, mcfg), meta
    return ALCFCNModel(store, mcfg, AffinityConfig(**meta["affinity"])), meta


# --------------------------------------------------------------------------
# forward helpers
# --------------------------------------------------------------------------

def predict_scores(model, image):
    """Softmax map [2, H, W] cropped back to the image extent."""
    H, W = np.asarray(image).shape[:2]
    S, aux = model(normalize_image(image))
    if S.shape[1:] != (H, W):
        S = S[:, :H, :W]
    return S, aux


def predict_mask(model, image):
    with no_grad():
        S, _ = predict_scores(model, image)
    return foreground(S)


def _loss(cfg, S, sample, target):
    kind = cfg.loss.kind
    if kind == "lcfcn":
        return lcfcn_loss(S, sample.points, cfg.loss.split_weight)
    if kind == "pl_fcn":
        return pl_fcn_loss(S, sample.points)
    return fs_loss(S, target, cfg.loss.fs_window, cfg.loss.fs_factor)


def val_miou(model, samples):
    fg = ConfusionCounts()
    for s in samples:
        fg.add(predict_mask(model, s.image), s.fg_mask)
    return miou(iou(fg), iou(fg.swapped()))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def train(cfg, train_samples, val_samples, out_dir, targets=None, seed=None, lr=None):
    """Shared training loop; ``targets`` supplies per-sample masks for the fs plug.

    Returns (model, TrainLog).  The model holds the best-epoch parameters.
    """
    kind = model_kind(cfg.loss.kind)
    seed = cfg.seed if seed is None else seed
    lr = cfg.optim.lr if lr is None else lr
    if not train_samples:
        raise ConfigError("training split is empty")
    if not val_samples or any(s.instance_mask is None for s in val_samples):
        raise ConfigError("validation split needs instance masks for mIoU")
    if kind == "fs":
        if targets is None or len(targets) != len(train_samples):
            raise ConfigError("full training needs one mask per training image")
    if cfg.optim.max_train_images > 0:
        train_samples = train_samples[:cfg.optim.max_train_images]
        targets = None if targets is None else targets[:cfg.optim.max_train_images]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(dump_config(cfg))
    model = build_model(cfg, kind, seed)
    opt = Adam(model.store, lr=lr)
    rng = np.random.default_rng([seed, 7919])
    tlog = TrainLog(kind=cfg.loss.kind, lr=float(lr))
    ckpt = out_dir / "best.ckpt"
    best = None
    step = 0
    for epoch in range(1, cfg.optim.epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        for i in rng.permutation(len(train_samples)):
            s = train_samples[i]
            S, _ = predict_scores(model, s.image)
            L = _loss(cfg, S, s, None if targets is None else targets[i])
            step += 1
            value = float(L.data)
            if not math.isfinite(value):
                log.error("non-finite loss at step %d (epoch %d, image %s)", step, epoch, s.name)
                raise NumericError(f"non-finite loss {value} at step {step}", step)
            model.store.zero_grad()
            backward(L)
            opt.step()
            total += value
        train_loss = total / len(train_samples)
        score = val_miou(model, val_samples)
        row = {"epoch": epoch, "train_loss": train_loss, "val_miou": score,
               "wall_time": time.perf_counter() - t0}
        tlog.epochs.append(row)
        log.info("epoch %d loss %.4f val mIoU %.4f", epoch, train_loss, score)
        if score > tlog.best_val_miou:
            tlog.best_val_miou = score
            tlog.best_epoch = epoch
            best = model.store.snapshot()
            meta = _model_meta(model, kind)
            meta.update(epoch=epoch, lr=float(lr), seed=int(seed), val_miou=score)
            save_checkpoint(ckpt, model.store, meta)
        elif epoch - tlog.best_epoch >= cfg.optim.patience:
            tlog.stopped_early = True
            break
    model.store.load_arrays(best)
    tlog.checkpoint = ckpt.name
    (out_dir / "train_log.json").write_text(json.dumps(tlog.to_json(), indent=1) + "\n")
    return model, tlog


def _dataset(cfg):
    manifest = read_manifest(cfg.data.root)
    return manifest, load_dataset(manifest, "train"), load_dataset(manifest, "val")


def train_weak(cfg, out_dir=None, seed=None, lr=None):
    """Weakly supervised training from point annotations (loss plug lcfcn or pl_fcn)."""
    if cfg.loss.kind == "fs":
        raise ConfigError("train-weak needs loss.kind lcfcn or pl_fcn")
    _, tr, va = _dataset(cfg)
    return train(cfg, tr, va, out_dir or Path(cfg.output_dir) / "weak", seed=seed, lr=lr)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

def _table(rows):
    head = f"{'method':<16}{'fg IoU':>9}{'bg IoU':>9}{'mIoU':>9}{'MAE':>9}{'GAME(4)':>9}"
    lines = [head, "-" * len(head)]
    for name, r in rows:
        cells = [r.get(k) for k in ("fg_iou", "bg_iou", "miou", "mae", "game4")]
        lines.append(f"{name:<16}" + "".join(f"{'-':>9}" if c is None else f"{c:>9.3f}" for c in cells))
    return "\n".join(lines) + "\n"


def evaluate_samples(model, samples, train_counts=None):
    """Segmentation and counting metrics of ``model`` over ``samples``."""
    fg = ConfusionCounts()
    pred_counts, true_counts, pred_pts, true_pts, shapes, masks = [], [], [], [], [], []
    for s in samples:
        m = predict_mask(model, s.image)
        masks.append(m)
        if s.instance_mask is not None:
            fg.add(m, s.fg_mask)
        c = blob_centroids(m)
        pred_pts.append(c)
        pred_counts.append(c.shape[0])
        # with masks, truth is localized the same way as predictions
        true_pts.append(s.points if s.instance_mask is None else instance_centroids(s.instance_mask))
        true_counts.append(s.count)
        shapes.append(m.shape)
    out = {"n_images": len(samples), "fg_iou": iou(fg), "bg_iou": iou(fg.swapped())}
    out["miou"] = miou(out["fg_iou"], out["bg_iou"])
    out["mae"] = mae(pred_counts, true_counts)
    out["game4"] = game(pred_pts, true_pts, shapes, L=4)
    top = max(pred_counts + true_counts + [0])
    out["pred_count_hist"] = np.bincount(pred_counts, minlength=top + 1).tolist()
    out["true_count_hist"] = np.bincount(true_counts, minlength=top + 1).tolist()
    if train_counts is not None:
        am = AlwaysMedian(train_counts)
        out["always_median"] = {"value": am.value, "mae": mae(am(len(true_counts)), true_counts)}
    return out, masks


def evaluate(checkpoint, cfg, split="test", out_dir=None, name=None):
    """Write ``metrics.json``, ``table.txt`` and overlays; return the metrics dict."""
    model, meta = load_model(checkpoint)
    manifest = read_manifest(cfg.data.root)
    samples = load_dataset(manifest, split)
    train_counts = [s.count for s in load_dataset(manifest, "train")]
    metrics, masks = evaluate_samples(model, samples, train_counts)
    name = name or meta.get("kind", "model")
    report = {"checkpoint_id": checkpoint_id(checkpoint), "kind": meta.get("kind"), "split": split, **metrics}
    rows = [(name, metrics), ("always-median", {"mae": metrics["always_median"]["mae"]})]
    out_dir = Path(out_dir or Path(cfg.output_dir) / "eval" / name)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    (out_dir / "table.txt").write_text(_table(rows))
    for s, m in list(zip(samples, masks))[:cfg.overlays]:
        save_overlay(out_dir / "overlays" / f"{split}_{s.name}.png", s.image, m, s.points, s.instance_mask)
    return report


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------

def parse_sweep(items):
    """``["optim.lr=1e-3,1e-4", "affinity.t=0,8"]`` -> ordered {key: [values]}."""
    axes = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"sweep must be key=v1,v2,..., got {item!r}")
        k, v = item.split("=", 1)
        vals = [x.strip() for x in v.split(",") if x.strip()]
        if not vals:
            raise ConfigError(f"empty sweep for {k!r}")
        axes[k.strip()] = vals
    return axes


def run_grid(cfg, sweep=None, out_dir=None):
    """Train one weak model per point of the sweep, pick the best by val mIoU.

    Without a sweep the grid runs over ``optim.lrs``.  Every row is also scored
    on the test split so ablations read off one report.
    """
    import copy

    axes = dict(sweep or {"optim.lr": [repr(x) for x in cfg.optim.lrs]})
    out_dir = Path(out_dir or Path(cfg.output_dir) / "grid")
    manifest, tr, va = _dataset(cfg)
    te = load_dataset(manifest, "test")
    train_counts = [s.count for s in tr]
    rows = []
    for combo in itertools.product(*axes.values()):
        run_cfg = copy.deepcopy(cfg)
        for k, v in zip(axes, combo):
            set_key(run_cfg, k, v)
        run_cfg.validate()
        tag = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(axes, combo))
        model, tlog = train(run_cfg, tr, va, out_dir / tag)
        metrics, _ = evaluate_samples(model, te, train_counts)
        rows.append({"tag": tag, "settings": dict(zip(axes, combo)), "best_epoch": tlog.best_epoch,
                     "val_miou": tlog.best_val_miou, "final_train_loss": tlog.losses[-1],
                     "checkpoint_id": checkpoint_id(out_dir / tag / "best.ckpt"), "test": metrics})
    best = max(range(len(rows)), key=lambda i: (rows[i]["val_miou"], -i))
    report = {"axes": axes, "rows": rows, "selected": rows[best]["tag"]}
    (out_dir / "grid.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    lines = [f"{'config':<28}{'val mIoU':>10}{'test fg':>9}{'test mIoU':>11}{'MAE':>8}{'GAME(4)':>9}"]
    for r in rows:
        mark = " *" if r["tag"] == report["selected"] else ""
        t = r["test"]
        lines.append(f"{r['tag']:<28}{r['val_miou']:>10.3f}{t['fg_iou']:>9.3f}{t['miou']:>11.3f}"
                     f"{t['mae']:>8.3f}{t['game4']:>9.3f}{mark}")
    lines.append(f"always-median MAE {rows[0]['test']['always_median']['mae']:.3f}")
    (out_dir / "grid.txt").write_text("\n".join(lines) + "\n")
    return report


# --------------------------------------------------------------------------
# prediction
# --------------------------------------------------------------------------

def predict(checkpoint, images, out_dir):
    """Masks, overlays and per-image counts for a list of image files."""
    from PIL import Image

    from .data import DatasetError

    model, _ = load_model(checkpoint)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cid = checkpoint_id(checkpoint)
    results = []
    for path in map(Path, images):
        try:
            img = np.asarray(Image.open(path).convert("RGB"))
        except OSError as exc:
            raise DatasetError(f"cannot read image {path}: {exc}") from exc
        m = predict_mask(model, img)
        Image.fromarray((m * 255).astype(np.uint8)).save(out_dir / f"{path.stem}_mask.png")
        pts = blob_centroids(m)
        save_overlay(out_dir / f"{path.stem}_overlay.png", img, m, pts)
        results.append({"image": path.name, "count": int(pts.shape[0]), "centroids": pts.tolist()})
    (out_dir / "predictions.json").write_text(
        json.dumps({"checkpoint_id": cid, "images": results}, indent=1) + "\n")
    return results

