"""Command-line entry point: ``rvfusion <command> [options]``.

Commands: gen-data, train, eval, viz, bench, experiment, config.
Every command accepts ``--config FILE`` and repeated ``--set key=value``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .classes import CLASS_NAMES, DETECTION_CLASSES, NUM_CLASSES
from .config import RunConfig, describe_options
from .errors import ConfigError, DataError, NumericError, RVFusionError
from .io import FrameFormatError, write_image

log = logging.getLogger("rvfusion")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.override(args.set)


def provenance(cfg: RunConfig, **extra) -> dict:
    out = {"config_digest": cfg.digest(), "seed": cfg["seed"], "version": __version__}
    out.update(extra)
    return out


def _mkdir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create directory {p}: {exc}") from exc
    return p


def _check_dataset_rig(cfg: RunConfig, manifest: dict, data_dir):
    digest = manifest.get("config_digest")
    if digest and digest != cfg.digest():
        log.warning("dataset %s was generated with config %s, current config is %s", data_dir, digest, cfg.digest())


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    from .data import generate_dataset

    cfg = load_config(args)
    out = _mkdir(args.out)
    (out / "config.txt").write_text(cfg.dumps())
    manifest = generate_dataset(out, args.count, cfg.scene_config(), cfg.rig(), cfg["seed"], cfg.digest())
    print(f"wrote {manifest['count']} frames to {out} (config {cfg.digest()}, seed {cfg['seed']})")
    return EXIT_OK


# ---------------------------------------------------------------- train


def _training_samples(cfg: RunConfig, data_dir):
    from .data import frame_to_sample, load_frames, load_manifest, split_indices

    manifest = load_manifest(data_dir)
    _check_dataset_rig(cfg, manifest, data_dir)
    train_idx, _ = split_indices(manifest["count"], cfg["data.eval_fraction"])
    if not train_idx:
        raise DataError(f"dataset {data_dir} has no training frames")
    return [frame_to_sample(f) for f in load_frames(data_dir, train_idx)]


def _write_train_log(path, history, meta):
    with open(path, "w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k} = {v}\n")
        w = csv.writer(fh)
        w.writerow(["step", "lr", "loss", "focal", "box", "labeled_cells"])
        for r in history:
            w.writerow([r["step"], repr(r["lr"]), repr(r["loss"]), repr(r["focal"]), repr(r["box"]), r["labeled_cells"]])


def cmd_train(args) -> int:
    from .pipeline import save_net, train_model

    cfg = load_config(args)
    samples = _training_samples(cfg, args.data)
    out = Path(args.out)
    _mkdir(out.parent)
    t0 = time.perf_counter()
    history = []
    try:
        net, history = train_model(
            samples, cfg.net_config(), cfg.train_config(), args.mode, cfg["train.log_every"], callback=history.append
        )
    finally:
        meta = provenance(cfg, mode=args.mode, dataset=str(args.data), iterations=len(history))
        _write_train_log(args.log or out.with_suffix(".log.csv"), history, meta)
    meta["train_seconds"] = round(time.perf_counter() - t0, 3)
    meta["config"] = cfg.dumps()
    save_net(net, out, meta)
    print(f"wrote checkpoint {out} ({len(history)} steps, mode {args.mode}, config {cfg.digest()})")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def write_reports(out_dir, result, meta: dict) -> None:
    """``report.txt`` (key = value), ``ap.csv`` and ``segmentation.csv``."""
    from .eval.detection import RANGE_BUCKETS

    out = _mkdir(out_dir)
    lines = [f"{k} = {v}" for k, v in meta.items()]
    seg_rows = []
    for b in RANGE_BUCKETS:
        conf = result.confusion[b]
        if conf.sum() == 0:
            lines.append(f"seg.{b}.miou = nan")
            continue
        s = result.segmentation(b)
        lines.append(f"seg.{b}.miou = {s.miou:.6f}")
        lines.append(f"seg.{b}.macc = {s.macc:.6f}")
        lines.append(f"seg.{b}.points = {int(conf.sum())}")
        for k in range(NUM_CLASSES):
            seg_rows.append([b, CLASS_NAMES[k], int(conf[k].sum()), f"{s.class_iou[k]:.6f}", f"{s.class_acc[k]:.6f}"])
    for (cls, b), ap in sorted(result.ap.items()):
        lines.append(f"ap.{cls}.{b} = {'nan' if ap is None else f'{ap:.6f}'}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")

    with open(out / "segmentation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket", "class", "points", "iou", "acc"])
        w.writerows(seg_rows)
    if result.ap:
        with open(out / "ap.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class"] + list(RANGE_BUCKETS))
            for cls in DETECTION_CLASSES:
                if not any(k[0] == cls for k in result.ap):
                    continue
                row = [result.ap.get((cls, b)) for b in RANGE_BUCKETS]
                w.writerow([cls] + ["" if v is None else f"{v:.6f}" for v in row])


def _eval_frames(cfg: RunConfig, data_dir, split: str):
    from .data import load_frames, load_manifest, split_indices

    manifest = load_manifest(data_dir)
    _check_dataset_rig(cfg, manifest, data_dir)
    train_idx, eval_idx = split_indices(manifest["count"], cfg["data.eval_fraction"])
    idx = {"eval": eval_idx, "train": train_idx, "all": train_idx + eval_idx}[split]
    if not idx:
        raise DataError(f"dataset {data_dir} has no frames in the {split} split")
    return load_frames(data_dir, idx)


def cmd_eval(args) -> int:
    from .pipeline import evaluate_model, load_net, oracle_prediction

    cfg = load_config(args)
    frames = _eval_frames(cfg, args.data, args.split)
    if args.oracle:
        net, ckpt_meta, mode, predictor = None, {}, "oracle", oracle_prediction
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --oracle)")
        net, ckpt_meta = load_net(args.checkpoint)
        mode = args.mode or ckpt_meta.get("mode", "fused")
        predictor = None
        _check_checkpoint_shapes(net, frames[0])
    result = evaluate_model(
        net, frames, "fused" if mode == "oracle" else mode,
        detection=cfg["eval.detection"],
        conf_threshold=cfg["eval.conf_threshold"],
        nms_iou=cfg["eval.nms_iou"],
        iou_thresholds=cfg.iou_thresholds(),
        merge_bikes=cfg["eval.merge_bikes"],
        predictor=predictor,
    )
    meta = provenance(cfg, mode=mode, checkpoint=args.checkpoint or "", checkpoint_config=ckpt_meta.get("config_digest", ""),
                      frames=len(frames), split=args.split)
    write_reports(args.out, result, meta)
    for line in (Path(args.out) / "report.txt").read_text().splitlines():
        if line.startswith(("seg.", "ap.")):
            print(line)
    return EXIT_OK


def _check_checkpoint_shapes(net, frame):
    from .nn.model import AUX_STRIDE

    L, W = frame.range_image.shape
    H, Wc = frame.camera.shape[:2]
    if L % 8 or W % 8 or H % AUX_STRIDE or Wc % AUX_STRIDE:
        raise DataError(f"frame shapes {(L, W)} / {(H, Wc)} are not divisible by 8")


# ---------------------------------------------------------------- viz


def cmd_viz(args) -> int:
    from .data import cell_labels, load_frames, point_evaluation
    from .io import read_frame
    from . import viz

    cfg = load_config(args)
    if args.frame:
        frame = read_frame(args.frame)
    elif args.data is not None:
        frame = load_frames(args.data, [args.index])[0]
    else:
        raise ConfigError("viz needs --frame FILE or --data DIR")
    out = _mkdir(args.out)
    labels = cell_labels(frame)
    write_image(frame.camera, out / "camera.ppm")
    write_image(viz.camera_overlay(frame), out / "camera_points.ppm")
    write_image(viz.camera_overlay(frame, viz.CLASS_COLORS[np.clip(labels, 0, NUM_CLASSES - 1)]), out / "camera_classes.ppm")
    write_image(viz.range_render(frame), out / "range.ppm")
    write_image(viz.class_map(labels), out / "classes_gt.ppm")
    written = ["camera.ppm", "camera_points.ppm", "camera_classes.ppm", "range.ppm", "classes_gt.ppm"]
    if args.checkpoint:
        from .eval.segmentation import confusion_matrix
        from .pipeline import load_net, predict_cells

        net, meta = load_net(args.checkpoint)
        pred = predict_cells(net, frame, args.mode or meta.get("mode", "fused")).class_logits.argmax(-1)
        write_image(viz.class_map(np.where(labels >= 0, pred, -1)), out / "classes_pred.ppm")
        p, g, _ = point_evaluation(frame, pred)
        write_image(viz.confusion_image(confusion_matrix(p, g)), out / "confusion.ppm")
        written += ["classes_pred.ppm", "confusion.ppm"]
    (out / "viz.txt").write_text("".join(f"{k} = {v}\n" for k, v in provenance(cfg, files=",".join(written)).items()))
    print(f"wrote {len(written)} images to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    from .data import frame_to_sample, make_frame
    from .nn.model import FusionNet
    from .pipeline import benchmark, load_net

    cfg = load_config(args)
    if args.threads:
        torch.set_num_threads(args.threads)
    if args.checkpoint:
        net, _ = load_net(args.checkpoint)
    else:
        net = FusionNet(cfg.net_config())
    sample = frame_to_sample(make_frame(cfg.scene_config(), cfg.rig(), cfg["seed"]))
    runs = cfg["bench.runs"] if args.runs is None else args.runs
    warmup = cfg["bench.warmup"] if args.warmup is None else args.warmup
    stats = benchmark(net, sample, runs, warmup)
    report = provenance(cfg, checkpoint=args.checkpoint or "", lidar_shape=f"{sample.lidar.shape[1]}x{sample.lidar.shape[2]}",
                        camera_shape=f"{sample.rgb.shape[1]}x{sample.rgb.shape[2]}")
    report.update(stats)
    text = "".join(f"{k} = {v}\n" for k, v in report.items())
    if args.out:
        _mkdir(Path(args.out).parent)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- experiment


def run_experiment(cfg: RunConfig, data_dir, out_dir, seeds, callback=None) -> dict:
    """Train fused and lidar-only models per seed; mean mIoU per range bucket."""
    from .data import frame_to_sample
    from .eval.detection import RANGE_BUCKETS
    from .pipeline import MODES, evaluate_model, save_net, train_model

    out = _mkdir(out_dir)
    train_samples = [frame_to_sample(f) for f in _eval_frames(cfg, data_dir, "train")]
    eval_frames = _eval_frames(cfg, data_dir, "eval")
    rows = []
    for seed in seeds:
        run = RunConfig(dict(cfg.values))
        run.values["net.seed"] = seed
        run.values["train.seed"] = seed
        for mode in MODES:
            t0 = time.perf_counter()
            net, history = train_model(train_samples, run.net_config(), run.train_config(), mode, run["train.log_every"])
            secs = time.perf_counter() - t0
            meta = provenance(run, mode=mode, dataset=str(data_dir), iterations=len(history))
            _write_train_log(out / f"train_{mode}_seed{seed}.log.csv", history, meta)
            save_net(net, out / f"{mode}_seed{seed}.ckpt", dict(meta, config=run.dumps()))
            res = evaluate_model(net, eval_frames, mode, detection=False)
            row = {"seed": seed, "mode": mode, "train_seconds": round(secs, 1), "final_loss": history[-1]["loss"] if history else float("nan")}
            for b in RANGE_BUCKETS:
                row[b] = 100.0 * res.miou(b) if res.confusion[b].sum() else float("nan")
            rows.append(row)
            log.info("seed %d %s: %s", seed, mode, ", ".join(f"{b} {row[b]:.2f}" for b in RANGE_BUCKETS))
            if callback is not None:
                callback(row)
    summary = {"config_digest": cfg.digest(), "seed": cfg["seed"], "seeds": list(seeds), "runs": rows, "mean": {}}
    for mode in MODES:
        sel = [r for r in rows if r["mode"] == mode]
        summary["mean"][mode] = {b: float(np.mean([r[b] for r in sel])) for b in RANGE_BUCKETS}
    summary["gap"] = {b: summary["mean"]["fused"][b] - summary["mean"]["lidar-only"][b] for b in RANGE_BUCKETS}
    (out / "experiment.json").write_text(json.dumps(summary, indent=2) + "\n")
    with open(out / "experiment.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "mode"] + list(RANGE_BUCKETS) + ["train_seconds", "final_loss"])
        for r in rows:
            w.writerow([r["seed"], r["mode"]] + [f"{r[b]:.4f}" for b in RANGE_BUCKETS] + [r["train_seconds"], f"{r['final_loss']:.6f}"])
    return summary


def cmd_experiment(args) -> int:
    cfg = load_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    summary = run_experiment(cfg, args.data, args.out, seeds)
    for mode, vals in summary["mean"].items():
        print(f"{mode:>10}: " + "  ".join(f"{b} {v:6.2f}" for b, v in vals.items()))
    print("       gap: " + "  ".join(f"{b} {v:+6.2f}" for b, v in summary["gap"].items()))
    return EXIT_OK


def cmd_config(args) -> int:
    if args.config or args.set:
        cfg = load_config(args)
        sys.stdout.write(f"# digest {cfg.digest()}\n" + cfg.dumps())
    else:
        sys.stdout.write(describe_options())
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (see `rvfusion config`)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key; repeatable")

    p = argparse.ArgumentParser(prog="rvfusion", description="LiDAR range-image / camera fusion toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, default=100, help="number of frames (default: 100)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--mode", choices=("fused", "lidar-only"), default="fused", help="default: fused")
    t.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--checkpoint", help="checkpoint path")
    e.add_argument("--oracle", action="store_true", help="feed ground truth as predictions")
    e.add_argument("--mode", choices=("fused", "lidar-only"), help="default: the mode stored in the checkpoint")
    e.add_argument("--split", choices=("eval", "train", "all"), default="eval", help="default: eval")
    e.add_argument("--out", required=True, help="report directory")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", parents=[common], help="render debug images for one frame")
    v.add_argument("--frame", help="frame file")
    v.add_argument("--data", help="dataset directory (with --index)")
    v.add_argument("--index", type=int, default=0, help="frame index in the dataset (default: 0)")
    v.add_argument("--checkpoint", help="also render predictions of this checkpoint")
    v.add_argument("--mode", choices=("fused", "lidar-only"))
    v.add_argument("--out", required=True, help="output directory")
    v.set_defaults(func=cmd_viz)

    b = sub.add_parser("bench", parents=[common], help="time the forward pass")
    b.add_argument("--checkpoint", help="checkpoint (default: fresh network from the config)")
    b.add_argument("--runs", type=int, help="timed runs (default: bench.runs)")
    b.add_argument("--warmup", type=int, help="untimed runs (default: bench.warmup)")
    b.add_argument("--threads", type=int, default=0, help="torch threads (default: torch's choice)")
    b.add_argument("--out", help="also write the report here")
    b.set_defaults(func=cmd_bench)

    x = sub.add_parser("experiment", parents=[common], help="fused vs lidar-only over several seeds")
    x.add_argument("--data", required=True, help="dataset directory")
    x.add_argument("--out", required=True, help="output directory")
    x.add_argument("--seeds", default="0,1,2", help="comma-separated seeds (default: 0,1,2)")
    x.set_defaults(func=cmd_experiment)

    c = sub.add_parser("config", parents=[common], help="print documented defaults, or the resolved config")
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FrameFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RVFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
