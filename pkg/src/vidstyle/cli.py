"""Command-line entry point: ``vidstyle <subcommand>``.

Exit codes: 0 success, 2 usage error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import CONFIG_ENV_VAR, load_config
from .errors import ConfigError, VidStyleError
from .flow import default_flow_source, sliding_window_smooth
from .formats import (read_frame_dir, read_mask, read_mask_dir, read_tensor, write_frame_dir,
                      write_mask_dir, write_tensor)
from .masks import iou_dice, propagate, resize_mask_nearest, upsample_mask
from .pipeline import (StageTimer, build_manifest, log, make_codec, make_predictor, run_pipeline,
                       setup_logging, write_manifest)
from .schedule import run_inversion, schedule_from_config

EXIT_USAGE, EXIT_DATA = 2, 3
INPUT_ARGS = ("video", "style", "masks", "features", "mask", "pred", "gt", "frames", "flows", "config")


def _config(args):
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    cfg = load_config(path)
    overrides = {k: getattr(args, k) for k in ("r", "k", "n", "seed", "m", "predictor", "codec", "flows")
                 if getattr(args, k, None) is not None}
    return (cfg.replace(**overrides) if overrides else cfg), path


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def cmd_invert(args) -> int:
    timer = StageTimer()
    cfg, cfg_path = _config(args)
    with timer.stage("load"):
        video = read_tensor(args.video, np.float64)
    if video.ndim != 4:
        raise VidStyleError(f"{args.video}: expected F x C x H x W latents, got {video.shape}")
    f, c, h, w = video.shape
    predictor = make_predictor(cfg.predictor, cfg, c, h, w)
    sched = schedule_from_config(cfg)
    with timer.stage("inversion"):
        inv = run_inversion(video, predictor, sched,
                            feature_tap=None if args.no_features else cfg.feature_step)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {"noise": out / "noise.npy"}
    with timer.stage("write"):
        write_tensor(inv.noise, outputs["noise"])
        if inv.features is not None:
            outputs["features"] = out / "features.npy"
            write_tensor(np.asarray(inv.features, dtype=np.float64), outputs["features"])
        if not args.no_trajectory:
            outputs["trajectory"] = out / "trajectory.npy"
            write_tensor(np.stack(inv.trajectory), outputs["trajectory"])
    manifest = build_manifest("invert", cfg, {"video": args.video, "config": cfg_path}, outputs, timer,
                              {"t0": cfg.feature_step})
    write_manifest(manifest, out / "manifest.json")
    log.info("invert done", extra={"fields": {"out": str(out), "seconds": round(timer.wall(), 3)}})
    return 0


def cmd_propagate_mask(args) -> int:
    cfg, _ = _config(args)
    feats = read_tensor(args.features, np.float64)
    if feats.ndim != 4:
        raise VidStyleError(f"{args.features}: expected N x h x w x d features, got {feats.shape}")
    m1 = resize_mask_nearest(read_mask(args.mask), feats.shape[1], feats.shape[2])
    masks = propagate(feats, m1, cfg.r, cfg.k, cfg.n, cfg.seed, args.threads)
    write_mask_dir(masks, args.out)
    _emit({"frames": int(len(masks)), "out": str(args.out), "r": cfg.r, "k": cfg.k, "n": cfg.n,
           "seed": cfg.seed, "grid": list(masks.shape[1:])})
    return 0


def cmd_eval_mask(args) -> int:
    pred = read_mask_dir(args.pred)
    gt = read_mask_dir(args.gt)
    if len(pred) != len(gt):
        raise VidStyleError(f"{len(pred)} predicted masks vs {len(gt)} ground-truth masks")
    if pred.shape[1:] != gt.shape[1:]:
        pred = upsample_mask(pred, *gt.shape[1:])
    iou, dice = iou_dice(pred, gt)
    _emit({"iou": iou, "dice": dice, "frames": int(len(gt))})
    return 0


def cmd_stylize(args) -> int:
    timer = StageTimer()
    cfg, cfg_path = _config(args)
    with timer.stage("load"):
        video = read_tensor(args.video, np.float64)
        style = read_tensor(args.style, np.float64)
        masks = read_mask_dir(args.masks)
    if video.ndim != 4:
        raise VidStyleError(f"{args.video}: expected F x C x H x W latents, got {video.shape}")
    f, c, h, w = video.shape
    codec = make_codec(cfg.codec, cfg, c)
    smooth = not args.no_smooth
    result = run_pipeline(video, style, cfg, masks=masks, codec=codec, smooth=smooth,
                          invert_masks=args.invert_masks, threads=args.threads, timer=timer)
    outputs = {"edited": Path(args.out)}
    if args.frames_out:
        with timer.stage("decode"):
            frames = codec.decode(result.edited)
    with timer.stage("write"):
        write_tensor(result.edited, args.out)
        if args.frames_out:
            write_frame_dir(frames, args.frames_out)
            outputs["frames"] = Path(args.frames_out)
    manifest_path = Path(args.manifest) if args.manifest else Path(str(args.out) + ".manifest.json")
    manifest = build_manifest(
        "stylize", cfg,
        {"video": args.video, "style": args.style, "config": cfg_path}, outputs, timer,
        {"smooth": smooth, "invert_masks": args.invert_masks,
         "mask_frames": int(len(masks))})
    write_manifest(manifest, manifest_path)
    log.info("stylize done", extra={"fields": {"out": str(args.out), "timings": manifest["timings"],
                                               "wall_seconds": manifest["wall_seconds"]}})
    return 0


def cmd_smooth(args) -> int:
    frames = read_frame_dir(args.frames)
    cfg, _ = _config(args)
    m = args.m if args.m is not None else cfg.m
    source = default_flow_source(args.flows or cfg.flows, args.lam or cfg.hs_lambda,
                                 args.iters if args.iters is not None else cfg.hs_iters,
                                 threads=args.threads)
    out = sliding_window_smooth(frames, m, source)
    write_frame_dir(out, args.out)
    _emit({"frames": int(len(out)), "m": m, "out": str(args.out)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vidstyle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, backends=False):
        sp.add_argument("--quiet", action="store_true", help="only log warnings")
        sp.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV_VAR} or built-ins)")
        sp.add_argument("--threads", type=int, default=1, help="cap on worker threads")
        sp.add_argument("--seed", type=int)
        if backends:
            sp.add_argument("--predictor", help="mock-backbone | mock-constant | mock-seeded | dir:PATH")
            sp.add_argument("--codec", help="identity | orthogonal | dir:PATH")

    sp = sub.add_parser("invert", help="DDIM-invert a latent video")
    sp.add_argument("--video", required=True, help="F x C x H x W latents (.npy)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--no-features", action="store_true", help="skip backbone feature capture")
    sp.add_argument("--no-trajectory", action="store_true", help="do not save the per-step latents")
    common(sp, backends=True)
    sp.set_defaults(func=cmd_invert)

    sp = sub.add_parser("propagate-mask", help="propagate a first-frame mask over inversion features")
    sp.add_argument("--features", required=True, help="N x h x w x d features (.npy)")
    sp.add_argument("--mask", required=True, help="first-frame mask PNG")
    sp.add_argument("--out", required=True, help="output mask directory")
    sp.add_argument("--r", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--n", type=int)
    common(sp)
    sp.set_defaults(func=cmd_propagate_mask)

    sp = sub.add_parser("eval-mask", help="IoU/Dice of predicted against ground-truth masks")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--quiet", action="store_true", help="only log warnings")
    sp.set_defaults(func=cmd_eval_mask)

    sp = sub.add_parser("stylize", help="localized stylization of a latent video")
    sp.add_argument("--video", required=True, help="F x C x H x W latents (.npy)")
    sp.add_argument("--style", required=True, help="style latent (.npy)")
    sp.add_argument("--masks", required=True, help="per-frame mask directory")
    sp.add_argument("--out", required=True, help="edited latents (.npy)")
    sp.add_argument("--frames-out", help="also write decoded frames here")
    sp.add_argument("--manifest", help="manifest path (default: OUT.manifest.json)")
    sp.add_argument("--flows", help="directory of precomputed .flo files")
    sp.add_argument("--m", type=int, help="smoothing half-window")
    sp.add_argument("--no-smooth", action="store_true", help="skip flow smoothing")
    sp.add_argument("--invert-masks", action="store_true", help="stylize the masked region instead")
    common(sp, backends=True)
    sp.set_defaults(func=cmd_stylize)

    sp = sub.add_parser("smooth", help="sliding-window flow smoothing of a frame directory")
    sp.add_argument("--frames", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--m", type=int)
    sp.add_argument("--flows", help="directory of precomputed .flo files")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--iters", type=int)
    common(sp)
    sp.set_defaults(func=cmd_smooth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(logging.WARNING if args.quiet else logging.INFO)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    missing = [f"--{k.replace('_', '-')} {getattr(args, k)}" for k in INPUT_ARGS
               if getattr(args, k, None) and not Path(getattr(args, k)).exists()]
    env_cfg = os.environ.get(CONFIG_ENV_VAR)
    if hasattr(args, "config") and not args.config and env_cfg and not Path(env_cfg).exists():
        missing.append(f"${CONFIG_ENV_VAR} {env_cfg}")
    if missing:
        parser.print_usage(sys.stderr)
        print(f"vidstyle: error: input not found: {', '.join(missing)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("bad configuration", extra={"fields": {"command": args.command, "error": str(exc)}})
        return EXIT_USAGE
    except (VidStyleError, OSError, ValueError) as exc:
        log.error("failed", extra={"fields": {"command": args.command, "error": str(exc)}})
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
