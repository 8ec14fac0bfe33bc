"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 IO error (missing or corrupt
files), 4 numeric failure (non-finite loss).
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, build_config
from .train import NumericError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("alcfcn")


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="config override; may be repeated, wins over the file")
    p.add_argument("--seed", type=int, help="run seed (wins over file and overrides)")
    p.add_argument("-q", "--quiet", action="store_true")


def _ckpt(args, cfg, default):
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.output_dir) / default / "best.ckpt"


def cmd_gen_data(args, cfg):
    from .data import synth_generate

    d = cfg.data
    seed = d.seed if args.seed is None else args.seed
    m = synth_generate(d.root, d.n_train, d.n_val, d.n_test, seed, d.difficulty, d.height, d.width)
    print(f"wrote {len(m.samples)} samples to {d.root}")


def cmd_train_weak(args, cfg):
    from .train import train_weak

    _, tlog = train_weak(cfg)
    print(f"best epoch {tlog.best_epoch} val mIoU {tlog.best_val_miou:.4f} -> {cfg.output_dir}/weak/best.ckpt")


def cmd_train_full(args, cfg):
    from .pseudo import train_full

    if args.masks == "pseudo" and not cfg.data.pseudo_dir:
        cfg.data.pseudo_dir = str(Path(cfg.output_dir) / "pseudo")
    elif args.masks == "gt":
        cfg.data.pseudo_dir = ""
    _, tlog = train_full(cfg)
    print(f"best epoch {tlog.best_epoch} val mIoU {tlog.best_val_miou:.4f} -> {cfg.output_dir}/full/best.ckpt")


def cmd_export_pseudo(args, cfg):
    from .pseudo import generate_pseudo_masks

    out = Path(args.out) if args.out else Path(cfg.output_dir) / "pseudo"
    masks = generate_pseudo_masks(_ckpt(args, cfg, "weak"), cfg.data.root, out, tuple(args.split))
    print(f"wrote {len(masks)} pseudo-masks to {out}")


def cmd_eval(args, cfg):
    from .train import evaluate

    ckpt = _ckpt(args, cfg, args.model)
    name = args.name or args.model
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "eval" / f"{name}_{args.split}"
    evaluate(ckpt, cfg, args.split, out, name)
    print((out / "table.txt").read_text(), end="")


def cmd_predict(args, cfg):
    from .train import predict

    out = Path(args.out) if args.out else Path(cfg.output_dir) / "predict"
    res = predict(_ckpt(args, cfg, "weak"), args.images, out)
    for r in res:
        print(f"{r['image']}: {r['count']}")


def cmd_grid(args, cfg):
    from .train import parse_sweep, run_grid

    rep = run_grid(cfg, parse_sweep(args.sweep) or None)
    out = Path(cfg.output_dir) / "grid"
    print((out / "grid.txt").read_text(), end="")
    print(json.dumps({"selected": rep["selected"]}))


def build_parser():
    ap = argparse.ArgumentParser(prog="alcfcn", description="Point-supervised fish segmentation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset")
    _common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-weak", help="train from point annotations")
    _common(p)
    p.set_defaults(fn=cmd_train_weak)

    p = sub.add_parser("train-full", help="train the fully-supervised student")
    _common(p)
    p.add_argument("--masks", choices=("pseudo", "gt"), default="pseudo")
    p.set_defaults(fn=cmd_train_full)

    p = sub.add_parser("export-pseudo", help="write pseudo-masks from a weak checkpoint")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", action="append", default=None, choices=("train", "val", "test"))
    p.add_argument("--out")
    p.set_defaults(fn=cmd_export_pseudo)

    p = sub.add_parser("eval", help="metrics, table and overlays for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--model", choices=("weak", "full"), default="weak",
                   help="which run directory to take best.ckpt from when --checkpoint is absent")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--name")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="masks and counts for image files")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("images", nargs="+")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("grid", help="train over a sweep and pick the best by val mIoU")
    _common(p)
    p.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2",
                   help="axis to sweep; default is optim.lr over optim.lrs")
    p.set_defaults(fn=cmd_grid)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    if getattr(args, "split", "") is None:
        args.split = ["train"]
    try:
        cfg = build_config(args.config, args.override, args.seed)
        args.fn(args, cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numeric failure at step %s: %s", exc.step, exc)
        return EXIT_NUMERIC
    except (OSError, KeyError) as exc:
        log.error("io error: %s", exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
