"""Command-line entry point: synth, train, eval, mvc, warp.

Every command writes the exact configuration it ran with next to its
outputs. Failures exit nonzero with one ``ErrorClass: message`` line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .distill import TrainConfig, train
from .geometry import Intrinsics, load_transforms
from .imaging import read_pfm, read_ppm, write_pfm, write_ppm
from .losses import LossWeights
from .metrics import DEFAULT_CAP, evaluate, results_to_csv
from .model import DepthNetConfig
from .mvcheck import check_pair, filter_mask
from .synthscene import TRAJECTORIES, generate_dataset, load_dataset, write_dataset
from .warp import synthesize_view


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size must look like HxW, got {text!r}") from None
    if h <= 0 or w <= 0 or h % 8 or w % 8:
        raise UsageError(f"--size {text}: height and width must be positive multiples of 8")
    return h, w


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    return path


def _write_config(path: Path, command: str, args: argparse.Namespace, extra: dict | None = None):
    cfg = {"command": command}
    cfg.update({k: v for k, v in vars(args).items() if k != "func"})
    cfg.update(extra or {})
    path.write_text(json.dumps(cfg, indent=1, sort_keys=True, default=str))


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    size = _size(args.size)
    ds = generate_dataset(args.scenes, args.triplets, size=size, trajectory=args.trajectory, seed=args.seed)
    write_dataset(ds, out)
    _write_config(out / "config.json", "synth", args)
    m = ds.manifest
    print(f"wrote {m['triplets']} triplets ({m['scenes']} scenes x {m['triplets_per_scene']}) "
          f"of {m['height']}x{m['width']} to {out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    trips = ds.triplets
    n_val = int(round(len(trips) * args.val_fraction)) if len(trips) > 1 else 0
    train_set, val_set = trips[:len(trips) - n_val], trips[len(trips) - n_val:]
    h, w = trips[0].frames.shape[-2:]
    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch, lr=args.lr, gamma=args.gamma,
        weights=LossWeights(l1_mode=args.l1_mode), mask_mode=args.mask, seed=args.seed,
        model=DepthNetConfig(height=h, width=w, use_offsets=not args.no_offsets),
    )
    result = train(train_set, cfg, val=val_set or None, out_dir=args.out)
    _write_config(Path(args.out) / "run.json", "train", args,
                  {"train_config": cfg.to_json(), "n_train": len(train_set), "n_val": len(val_set)})
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs, {last['step']} steps; final total {last['total']:.6f}, "
          f"val abs_rel {last['val_abs_rel']:.4f}")
    return 0


def cmd_eval(args) -> int:
    pred_dir, gt_dir = _need(args.pred), _need(args.gt)
    names = sorted(p.name for p in gt_dir.glob("*.pfm"))
    if not names:
        raise FileNotFoundError(f"no .pfm files in {gt_dir}")
    rows = []
    for name in names:
        gt = read_pfm(gt_dir / name)
        pred = read_pfm(_need(pred_dir / name))
        rows.append((name, evaluate(pred, gt, median_scaling=args.median_scaling, cap=args.cap)))
    text = results_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_mvc(args) -> int:
    target = read_pfm(_need(args.target_depth))
    sources = [read_pfm(_need(p)) for p in args.source_depth]
    poses = load_transforms(_need(args.pose_json))
    k = Intrinsics.from_json(json.loads(_need(args.intrinsics_json).read_text()))
    if len(poses) != len(sources):
        raise ValueError(f"{len(sources)} source depths but {len(poses)} poses in {args.pose_json}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = [check_pair(target, s, p, k) for s, p in zip(sources, poses)]
    for i, r in enumerate(reports):
        write_pfm(out / f"e_reproj_{i}.pfm", r.e_reproj)
        write_pfm(out / f"e_geo_{i}.pfm", r.e_geo)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mask = filter_mask(reports, args.alpha, args.beta)
    write_pfm(out / "mask.pfm", mask.astype(np.float32))
    _write_config(out / "config.json", "mvc", args)
    print(f"coverage {mask.mean():.3f}")
    if args.corruption_mask:
        corrupted = read_pfm(_need(args.corruption_mask)) > 0
        rejected = ~mask
        # clean pixels only count where the round trip exists; the rest fail by construction
        clean = ~corrupted & np.logical_and.reduce([r.valid for r in reports])
        recall = rejected[corrupted].mean() if corrupted.any() else float("nan")
        clean_rejected = rejected[clean].mean() if clean.any() else float("nan")
        print(f"corrupted rejected {recall:.3f} clean rejected {clean_rejected:.3f}")
    return 0


def cmd_warp(args) -> int:
    source = read_ppm(_need(args.source))
    depth = read_pfm(_need(args.depth))
    poses = load_transforms(_need(args.pose_json))
    if len(poses) != 1:
        raise ValueError(f"{args.pose_json} must hold exactly one pose, found {len(poses)}")
    k = Intrinsics.from_json(json.loads(_need(args.intrinsics_json).read_text()))
    view = synthesize_view(source[None].astype(np.float64), depth[None, None].astype(np.float64), poses[0], k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(out, view.image.data[0])
    write_pfm(out.with_name(out.stem + "_validity.pfm"), view.validity[0, 0].astype(np.float32))
    _write_config(out.with_name(out.stem + "_config.json"), "warp", args)
    print(f"valid {view.validity.mean():.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srdepth", description="Self-supervised depth toolkit on synthetic scenes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic triplet dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--scenes", type=int, default=4, help="number of scenes")
    s.add_argument("--triplets", type=int, default=50, help="triplets per scene")
    s.add_argument("--size", default="32x96", help="frame size HxW, multiples of 8")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--trajectory", choices=TRAJECTORIES, default="mixed", help="camera motion style")
    s.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train with self-reference distillation")
    t.add_argument("--data", required=True, help="dataset directory written by synth")
    t.add_argument("--out", required=True, help="run directory for snapshots, metrics.csv and config")
    t.add_argument("--epochs", type=int, default=20, help="number of epochs")
    t.add_argument("--gamma", type=float, default=0.1, help="distillation weight from epoch 2")
    t.add_argument("--mask", choices=("hard", "soft", "none"), default="hard", help="pseudo-label mask mode")
    t.add_argument("--l1-mode", choices=("paper", "conventional"), default="paper",
                   help="L1 weight: 2*alpha (paper) or 1-alpha (conventional)")
    t.add_argument("--seed", type=int, default=0, help="initialisation and shuffling seed")
    t.add_argument("--lr", type=float, default=1e-4, help="learning rate")
    t.add_argument("--batch", type=int, default=2, help="batch size")
    t.add_argument("--val-fraction", type=float, default=0.1, help="trailing fraction held out for validation")
    t.add_argument("--no-offsets", action="store_true", help="force the disparity offset fields to zero")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate predicted depth PFMs against ground truth")
    e.add_argument("--pred", required=True, help="directory of predicted depth PFMs")
    e.add_argument("--gt", required=True, help="directory of ground-truth depth PFMs (same file names)")
    e.add_argument("--median-scaling", action=argparse.BooleanOptionalAction, default=True,
                   help="rescale each prediction by median(gt)/median(pred)")
    e.add_argument("--cap", type=float, default=DEFAULT_CAP, help="depth cap")
    e.add_argument("--out", help="also write the CSV here")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("mvc", help="multiview consistency check of depth maps")
    m.add_argument("--target-depth", required=True, help="target depth PFM")
    m.add_argument("--source-depth", required=True, nargs="+", help="one or more source depth PFMs")
    m.add_argument("--pose-json", required=True, help="target->source transforms, one per source")
    m.add_argument("--intrinsics-json", required=True, help="intrinsics JSON (fx, fy, u0, v0)")
    m.add_argument("--alpha", type=float, default=4.0, help="reprojection threshold factor")
    m.add_argument("--beta", type=float, default=4.0, help="relative depth threshold factor")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--corruption-mask", help="optional PFM, nonzero at known-bad pixels; prints rejection rates")
    m.set_defaults(func=cmd_mvc)

    w = sub.add_parser("warp", help="synthesize the target view from a source image")
    w.add_argument("--source", required=True, help="source image PPM")
    w.add_argument("--depth", required=True, help="target depth PFM")
    w.add_argument("--pose-json", required=True, help="target->source transform")
    w.add_argument("--intrinsics-json", required=True, help="intrinsics JSON")
    w.add_argument("--out", required=True, help="output PPM; validity and config are written beside it")
    w.set_defaults(func=cmd_warp)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        msg = " ".join(str(exc).split())
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
