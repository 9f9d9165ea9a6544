"""Command-line entry point.

Subcommands: synth, gen-data, train, train-fusion, eval, ablate, infer,
time, viz. Every run logs the resolved configuration and seed; artifact
commands also write the resolved config next to their outputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

log = logging.getLogger("travmap")

ENV_OUT = "TRAVMAP_OUT"
ENV_THREADS = "TRAVMAP_THREADS"


def _setup(args):
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    threads = os.environ.get(ENV_THREADS)
    if threads:
        torch.set_num_threads(int(threads))

    from .config import load_config

    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    out = getattr(args, "out", None) or os.environ.get(ENV_OUT) or cfg.out_dir
    cfg.out_dir = str(out)
    log.info("seed %d, config hash %s", cfg.seed, cfg.config_hash())
    log.debug("resolved config:\n%s", cfg.dump())
    return cfg


def _write_resolved(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(cfg.dump())


def _load_datasets(paths, cfg):
    from .dataset import ConcatMapDataset, MapDataset

    parts = [MapDataset(p, cfg.max_pillars, cfg.max_points) for p in paths]
    return parts[0] if len(parts) == 1 else ConcatMapDataset(parts)


def cmd_synth(args):
    cfg = _setup(args)
    from .synth import generate_sequence

    out = Path(cfg.out_dir)
    _write_resolved(cfg, out)
    for k in range(args.sequences):
        seed = cfg.seed + k
        seq_dir = out / f"seq_{seed:04d}"
        generate_sequence(
            seed, cfg.synth_frames, seq_dir, lidar=cfg.lidar,
            scene_params=cfg.scene, g=cfg.grid, speed=cfg.synth_speed,
            ontology=cfg.ontology(),
        )
        log.info("wrote synthetic sequence %s (%d frames)", seq_dir, cfg.synth_frames)
    return 0


def cmd_gen_data(args):
    cfg = _setup(args)
    from .dataset import SequenceIndex, generate_dataset

    seq = SequenceIndex.from_directory(args.sequence)
    out = Path(cfg.out_dir)
    _write_resolved(cfg, out)
    manifest = generate_dataset(seq, cfg.aggregation, cfg.grid, cfg.ontology(), out)
    log.info("wrote dataset manifest %s (%d frames)", manifest, len(seq))
    return 0


def cmd_train(args):
    cfg = _setup(args)
    from .checkpoint import Checkpoint
    from .report import save_loss_curve
    from .train import train_stage1

    dataset = _load_datasets(args.data, cfg)
    out = Path(cfg.out_dir)
    _write_resolved(cfg, out)
    result = train_stage1(dataset, cfg.train, cfg.model_config(), log_path=out / "loss_curve.csv")
    result.checkpoint.meta["config_hash"] = cfg.config_hash()
    ckpt_path = out / "single.ckpt"
    result.checkpoint.save(ckpt_path)
    save_loss_curve(result.history, out / "loss_curve.png", "stage 1 training loss")
    log.info("wrote %s after %d steps", ckpt_path, len(result.history))
    return 0


def cmd_train_fusion(args):
    cfg = _setup(args)
    from .checkpoint import Checkpoint
    from .report import save_loss_curve
    from .train import train_stage2

    dataset = _load_datasets(args.data, cfg)
    stage1 = Checkpoint.load(args.stage1)
    out = Path(cfg.out_dir)
    _write_resolved(cfg, out)
    result = train_stage2(
        dataset, stage1, cfg.train, strategy=args.strategy,
        log_path=out / f"loss_curve_{args.strategy}.csv",
    )
    result.checkpoint.meta["config_hash"] = cfg.config_hash()
    ckpt_path = out / f"multi_{args.strategy}.ckpt"
    result.checkpoint.save(ckpt_path)
    save_loss_curve(result.history, out / f"loss_curve_{args.strategy}.png",
                    f"stage 2 ({args.strategy}-fusion) training loss")
    log.info("wrote %s after %d steps", ckpt_path, len(result.history))
    return 0


def cmd_eval(args):
    cfg = _setup(args)
    import csv

    from .checkpoint import Checkpoint
    from .evaluate import evaluate_dataset, far_annulus_mask
    from .metrics import macc, metrics_csv_rows, miou, summary_table
    from .report import save_iou_bars
    from .train import model_from_checkpoint

    dataset = _load_datasets(args.data, cfg)
    model, _ = model_from_checkpoint(Checkpoint.load(args.checkpoint))
    mask = None
    if args.min_radius > 0:
        mask = far_annulus_mask(dataset.grid, args.min_radius)
    cm = evaluate_dataset(model, dataset, cell_mask=mask)

    out = Path(cfg.out_dir)
    _write_resolved(cfg, out)
    with open(out / "metrics.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "tp", "fp", "fn", "iou"])
        writer.writerows(metrics_csv_rows(cm))
    save_iou_bars(cm, out / "metrics.png")
    print(summary_table(cm))
    print(f"mIoU {miou(cm):.4f}")
    print(f"mAcc {macc(cm):.4f}")
    return 0


def cmd_ablate(args):
    cfg = _setup(args)
    from .evaluate import ablate_fusion_order
    from .report import save_ablation_bars

    dataset = _load_datasets(args.data, cfg)
    checkpoints = {"pre": args.pre, "in": getattr(args, "in_"), "post": args.post}
    report = ablate_fusion_order(dataset, checkpoints)
    out = Path(cfg.out_dir)
    _write_resolved(cfg, out)
    report.to_csv(out / "ablation.csv")
    save_ablation_bars(report.rows, out / "ablation.png")
    print(report.table())
    return 0


def cmd_infer(args):
    cfg = _setup(args)
    from .checkpoint import Checkpoint
    from .fileio import load_poses, load_scan, save_map
    from .models.completion import predict_classes
    from .models.network import MultiFrameModel
    from .pillars import pillarize
    from .train import model_from_checkpoint

    model, mcfg = model_from_checkpoint(Checkpoint.load(args.checkpoint))
    scans = [load_scan(p) for p in args.scan]
    batches = [
        pillarize(s, mcfg.grid, mcfg.max_pillars, mcfg.max_points, rng_seed=cfg.seed)
        for s in scans
    ]
    hw = (mcfg.grid.height, mcfg.grid.width)
    with torch.no_grad():
        if isinstance(model, MultiFrameModel):
            if len(batches) != model.frames:
                raise SystemExit(
                    f"error: --scan given {len(batches)} times, checkpoint needs {model.frames}"
                )
            poses = load_poses(args.poses) if args.poses else [np.eye(4)] * len(batches)
            if len(poses) < len(batches):
                raise SystemExit(
                    f"error: --poses holds {len(poses)} poses, need {len(batches)}"
                )
            logits = model([batches], [poses[: len(batches)]])
        else:
            if len(batches) != 1:
                raise SystemExit("error: single-frame checkpoint takes exactly one --scan")
            logits = model(batches)
        pred = predict_classes(logits[0], hw).numpy().astype(np.uint8)
    save_map(args.out, pred, mcfg.grid)
    log.info("wrote %s", args.out)
    return 0


def cmd_time(args):
    cfg = _setup(args)
    from .checkpoint import Checkpoint
    from .evaluate import benchmark_speed, predict_frame
    from .train import model_from_checkpoint

    dataset = _load_datasets(args.data, cfg)
    model, _ = model_from_checkpoint(Checkpoint.load(args.checkpoint))
    report = benchmark_speed(
        lambda i: predict_frame(model, dataset, i),
        range(len(dataset)), warmup=args.warmup, iters=args.iters,
    )
    print(report)
    return 0


def cmd_viz(args):
    _setup(args)
    from .fileio import load_map
    from .viz import render_map_png

    cmap, _ = load_map(args.map)
    render_map_png(cmap, args.out)
    log.info("wrote %s", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="travmap",
        description="BEV traversability mapping from LIDAR point clouds",
    )
    parser.add_argument("--config", help="run configuration file (INI)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic labeled sequences")
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.add_argument("--seed", type=int, help="root seed override")
    p.add_argument("--sequences", type=int, default=1, help="number of sequences")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-data", help="build ground-truth maps from a raw sequence")
    p.add_argument("--sequence", required=True, help="sequence directory (scans/labels/poses)")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="stage 1: train the single-frame model")
    p.add_argument("--data", action="append", required=True, help="dataset directory (repeatable)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-fusion", help="stage 2: train fusion on top of a stage-1 checkpoint")
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--stage1", required=True, help="stage-1 checkpoint path")
    p.add_argument("--strategy", choices=("pre", "in", "post"), default="pre")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_fusion)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--min-radius", type=float, default=0.0,
                   help="evaluate only cells beyond this radius (meters)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="evaluate pre/in/post fusion checkpoints")
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--pre", required=True)
    p.add_argument("--in", dest="in_", required=True)
    p.add_argument("--post", required=True)
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="predict a map from scan file(s)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scan", action="append", required=True, help="scan file (repeatable)")
    p.add_argument("--poses", help="pose file for multi-frame checkpoints")
    p.add_argument("--out", required=True, help="output map file")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("time", help="benchmark inference speed")
    p.add_argument("--data", action="append", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_time)

    p = sub.add_parser("viz", help="render a map file as a PNG")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("%s", exc)
        if getattr(args, "verbose", False):
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
