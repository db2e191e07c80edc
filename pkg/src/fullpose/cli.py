"""Batch command-line pipelines over full-pose datasets.

A dataset directory holds ``velodyne/<frame>.bin`` clouds and
``labels/<frame>.jsonl`` full-pose annotations; ``synth`` additionally
writes ``features/<frame>.npz`` per-center features consumed by
``train-head``.  Every subcommand accepts ``--config``, ``--seed`` and
``--jobs``, prints a machine-readable JSON summary to stdout and a human
log to stderr, and exits 0 only on success (2 for usage errors, 1 for
data errors).  Frame results derive their randomness from
(seed, frame id), so outputs do not depend on worker scheduling.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import codec, dataio, evaluation, geom, head, slopeaug, synth, verify


@dataclass
class CommandOutcome:
    exit_code: int
    summary: dict


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _read_frame_records(labels_dir: Path) -> dict[str, list]:
    frames = {}
    for path in sorted(labels_dir.glob("*.jsonl")):
        frames[path.stem] = dataio.read_pose6d(path)
    return frames


def _records_to_boxes(records) -> list[geom.FullPoseBox]:
    return [rec.to_box() for rec in records]


# ---------------------------------------------------------------- augment

def _augment_one(task) -> tuple[str, bool]:
    frame_id, in_dir, out_dir, cfg, seed = task
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    cloud = dataio.read_velodyne(in_dir / "velodyne" / f"{frame_id}.bin")
    records = dataio.read_pose6d(in_dir / "labels" / f"{frame_id}.jsonl")
    frame = slopeaug.LabeledFrame(
        cloud=cloud, boxes=_records_to_boxes(records), frame_id=frame_id
    )
    rng = slopeaug.frame_rng(seed, frame_id)
    out = slopeaug.augment(frame, cfg, rng)
    applied = out is not frame
    dataio.write_velodyne(out.cloud, out_dir / "velodyne" / f"{frame_id}.bin")
    out_records = [
        dataio.Pose6dRecord.from_box(box, frame_id, difficulty=rec.difficulty)
        for box, rec in zip(out.boxes, records)
    ]
    dataio.write_pose6d(out_records, out_dir / "labels" / f"{frame_id}.jsonl")
    return frame_id, applied


def cmd_augment(args, cfg: dataio.ToolkitConfig) -> dict:
    aug_cfg = cfg.slopeaug
    overrides = {}
    if args.p_s is not None:
        overrides["p_s"] = args.p_s
    if args.gamma_min is not None or args.gamma_max is not None:
        lo, hi = aug_cfg.gamma_range
        overrides["gamma_range"] = (
            math.radians(args.gamma_min) if args.gamma_min is not None else lo,
            math.radians(args.gamma_max) if args.gamma_max is not None else hi,
        )
    if args.r_min is not None or args.r_max is not None:
        lo, hi = aug_cfg.r_range
        overrides["r_range"] = (
            args.r_min if args.r_min is not None else lo,
            args.r_max if args.r_max is not None else hi,
        )
    if overrides:
        aug_cfg = replace(aug_cfg, **overrides)

    in_dir, out_dir = Path(args.input), Path(args.output)
    frame_ids = sorted(p.stem for p in (in_dir / "labels").glob("*.jsonl"))
    if not frame_ids:
        raise ValueError(f"no labels found under {in_dir / 'labels'}")
    (out_dir / "velodyne").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    tasks = [(f, str(in_dir), str(out_dir), aug_cfg, args.seed) for f in frame_ids]
    results = _map_tasks(_augment_one, tasks, args.jobs)
    applied = sum(1 for _, a in results if a)
    _log(f"augmented {applied}/{len(frame_ids)} frames -> {out_dir}")
    return {
        "frames": len(frame_ids),
        "augmented": applied,
        "p_s": aug_cfg.p_s,
        "output": str(out_dir),
    }


# ---------------------------------------------------------------- synth

def _synth_one(task) -> str:
    frame_index, out_dir, spec, feature_noise, bg_centers, feature_dim, codec_cfg = task
    out_dir = Path(out_dir)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, frame_index]))
    frame_id = f"{frame_index:06d}"
    frame = synth.make_scene(spec, frame_id=frame_id, rng=rng)
    dataio.write_velodyne(frame.cloud, out_dir / "velodyne" / f"{frame_id}.bin")
    records = [
        dataio.Pose6dRecord.from_box(box, frame_id, difficulty="moderate")
        for box in frame.boxes
    ]
    dataio.write_pose6d(records, out_dir / "labels" / f"{frame_id}.jsonl")
    centers, features, targets = synth.make_features(
        frame, feature_noise, rng, codec_cfg=codec_cfg,
        feature_dim=feature_dim, bg_per_frame=bg_centers,
    )
    np.savez(
        out_dir / "features" / f"{frame_id}.npz",
        centers=centers.points,
        features=features,
        class_label=targets.class_label,
        ground_label=targets.ground_label,
        yaw_bin=targets.yaw_bin,
        yaw_residual=targets.yaw_residual,
        tilt=targets.tilt,
        log_dims=targets.log_dims,
        center_offset=targets.center_offset,
        foreground=targets.foreground,
    )
    return frame_id


def cmd_synth(args, cfg: dataio.ToolkitConfig) -> dict:
    out_dir = Path(args.output)
    for sub in ("velodyne", "labels", "features"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    terrain = synth.Terrain(
        ramp_start=args.ramp_start, grade=math.radians(args.ramp_deg)
    )
    spec = synth.SceneSpec(
        terrain=terrain,
        box_count=args.boxes,
        density=args.density,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
        ramp_box_fraction=args.ramp_fraction,
    )
    tasks = [
        (
            i,
            str(out_dir),
            spec,
            args.feature_noise,
            args.bg_centers,
            cfg.head.feature_dim,
            cfg.codec,
        )
        for i in range(args.scenes)
    ]
    frame_ids = _map_tasks(_synth_one, tasks, args.jobs)
    _log(f"wrote {len(frame_ids)} scenes -> {out_dir}")
    return {
        "frames": len(frame_ids),
        "ramp_deg": args.ramp_deg,
        "boxes_per_frame": args.boxes,
        "output": str(out_dir),
    }


# ---------------------------------------------------------------- train-head

def _load_feature_frame(path: Path):
    data = np.load(path)
    targets = codec.BoxTargets(
        class_label=data["class_label"],
        ground_label=data["ground_label"],
        yaw_bin=data["yaw_bin"],
        yaw_residual=data["yaw_residual"],
        tilt=data["tilt"],
        log_dims=data["log_dims"],
        center_offset=data["center_offset"],
        foreground=data["foreground"],
    )
    return data["features"], targets


def cmd_train_head(args, cfg: dataio.ToolkitConfig) -> dict:
    paths = sorted(Path(args.data).joinpath("features").glob("*.npz"))
    if not paths:
        raise ValueError(f"no feature files under {args.data}/features")
    dataset = [_load_feature_frame(p) for p in paths]
    feature_dim = dataset[0][0].shape[1]
    head_cfg = replace(cfg.head, feature_dim=feature_dim, codec=cfg.codec)
    params, log = head.train_toy(
        dataset, head_cfg, epochs=args.epochs, seed=args.seed, lr=args.lr
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    head.save_head(params, out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log.csv")
    fields = ["epoch", "total", "cls", "dim", "posi", "seg", "tilt", "yaw_bin", "yaw_res"]
    with open(log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for record in log:
            writer.writerow({k: record.get(k, 0.0) for k in fields})
    first, last = log[0]["total"], log[-1]["total"]
    _log(f"trained {args.epochs} epochs on {len(dataset)} frames: "
         f"loss {first:.4f} -> {last:.4f}")
    return {
        "frames": len(dataset),
        "epochs": args.epochs,
        "initial_loss": first,
        "final_loss": last,
        "params": str(out),
        "log": str(log_path),
    }


# ---------------------------------------------------------------- eval

def cmd_eval(args, cfg: dataio.ToolkitConfig) -> dict:
    gt_frames = _read_frame_records(Path(args.gt) / "labels")
    pred_frames = _read_frame_records(Path(args.pred) / "labels")
    if not gt_frames:
        raise ValueError(f"no ground-truth labels under {args.gt}/labels")
    gts = {f: _records_to_boxes(recs) for f, recs in gt_frames.items()}
    difficulties = {
        f: [rec.difficulty or "moderate" for rec in recs]
        for f, recs in gt_frames.items()
    }
    dets = {f: _records_to_boxes(recs) for f, recs in pred_frames.items()}
    eval_cfg = cfg.eval
    if args.recall_positions is not None:
        eval_cfg = replace(eval_cfg, recall_positions=args.recall_positions)
    report = evaluation.evaluate(dets, gts, eval_cfg, difficulties)

    table = report.text_table()
    if args.criterion != "all":
        wanted = {"iou3d": "iou3d@", "bev": "bev@", "cd": "cd@"}[args.criterion]
        table = "\n".join(
            line for line in table.splitlines()
            if wanted in line or line.startswith("AP")
        )
    _log(table)
    if args.csv:
        Path(args.csv).write_text("\n".join(report.csv_rows()) + "\n", encoding="utf-8")
        _log(f"wrote {args.csv}")
    summary = {
        "frames": len(gt_frames),
        "classes": sorted(report.rotated),
        "ap": {f"{c}/{d}/{k}": v for (c, d, k), v in sorted(report.ap.items())},
        "rotated": {str(c): suite for c, suite in report.rotated.items()},
    }
    return summary


# ---------------------------------------------------------------- stats

_STATS_SERIES = (
    ("theta_x", 36, (-math.pi / 2, math.pi / 2)),
    ("theta_y", 36, (-math.pi / 2, math.pi / 2)),
    ("theta_z", 36, (0.0, 2.0 * math.pi)),
    ("length", 24, None),
    ("width", 24, None),
    ("height", 24, None),
    ("center_x", 24, None),
    ("center_y", 24, None),
    ("center_z", 24, None),
)


def cmd_stats(args, cfg: dataio.ToolkitConfig) -> dict:
    frames = _read_frame_records(Path(args.input) / "labels")
    records = [rec for recs in frames.values() for rec in recs]
    if not records:
        raise ValueError(f"no labels under {args.input}/labels")
    euler = np.array([rec.euler for rec in records])
    euler[:, 2] = np.array([codec.wrap_angle(v) for v in euler[:, 2]])
    dims = np.array([rec.dims for rec in records])
    centers = np.array([rec.center for rec in records])
    columns = {
        "theta_x": euler[:, 0], "theta_y": euler[:, 1], "theta_z": euler[:, 2],
        "length": dims[:, 0], "width": dims[:, 1], "height": dims[:, 2],
        "center_x": centers[:, 0], "center_y": centers[:, 1], "center_z": centers[:, 2],
    }
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "bin_left", "bin_right", "count", "log10_count"])
        for name, bins, value_range in _STATS_SERIES:
            values = columns[name]
            counts, edges = np.histogram(values, bins=bins, range=value_range)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                log10 = math.log10(c) if c > 0 else ""
                writer.writerow([name, f"{lo:.6f}", f"{hi:.6f}", int(c), log10])
    _log(f"wrote pose/dimension/center histograms for {len(records)} objects")
    return {"objects": len(records), "frames": len(frames), "out": args.out}


# ---------------------------------------------------------------- nms

def cmd_nms(args, cfg: dataio.ToolkitConfig) -> dict:
    records = dataio.read_pose6d(args.pred)
    by_frame: dict[str, list] = {}
    for rec in records:
        by_frame.setdefault(rec.frame, []).append(rec)
    kept_records = []
    for frame in sorted(by_frame):
        recs = by_frame[frame]
        boxes = _records_to_boxes(recs)
        keep = geom.nms(boxes, args.iou)
        kept_records.extend(recs[i] for i in keep)
    if args.out:
        dataio.write_pose6d(kept_records, args.out)
        _log(f"kept {len(kept_records)}/{len(records)} -> {args.out}")
    return {
        "input": len(records),
        "kept": len(kept_records),
        "iou": args.iou,
        "out": args.out,
    }


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(args, cfg: dataio.ToolkitConfig) -> dict:
    results = {name: float(err) for name, err in verify.gradient_suite(seed=args.seed).items()}
    for name, err in results.items():
        status = "ok" if err < verify.TOLERANCE else "FAIL"
        _log(f"{name:<22} max rel error {err:.3e}  {status}")
    worst = max(results.values())
    ok = bool(worst < verify.TOLERANCE)
    return {
        "ops": results,
        "max_rel_error": worst,
        "tolerance": verify.TOLERANCE,
        "pass": ok,
        "_exit": 0 if ok else 1,
    }


# ---------------------------------------------------------------- convert

def cmd_convert(args, cfg: dataio.ToolkitConfig) -> dict:
    if args.source != "kitti" or args.target != "pose6d":
        raise ValueError("only --from kitti --to pose6d is supported")
    in_dir, out_dir = Path(args.input), Path(args.output)
    calib_dir = Path(args.calib) if args.calib else in_dir / "calib"
    label_paths = sorted((in_dir / "label_2").glob("*.txt"))
    if not label_paths:
        raise ValueError(f"no KITTI labels under {in_dir / 'label_2'}")
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    copied = 0
    converted = 0
    for label_path in label_paths:
        frame_id = label_path.stem
        calib = dataio.read_kitti_calib(calib_dir / f"{frame_id}.txt")
        objects = dataio.read_kitti_labels(label_path, calib)
        records = [
            dataio.Pose6dRecord.from_box(
                obj.box,
                frame_id,
                difficulty=evaluation.assign_difficulty(
                    obj.bbox_height, obj.occlusion, obj.truncation
                ),
            )
            for obj in objects
        ]
        dataio.write_pose6d(records, out_dir / "labels" / f"{frame_id}.jsonl")
        converted += len(records)
        cloud_path = in_dir / "velodyne" / f"{frame_id}.bin"
        if cloud_path.exists():
            (out_dir / "velodyne").mkdir(parents=True, exist_ok=True)
            shutil.copyfile(cloud_path, out_dir / "velodyne" / f"{frame_id}.bin")
            copied += 1
    _log(f"converted {converted} objects over {len(label_paths)} frames")
    return {
        "frames": len(label_paths),
        "objects": converted,
        "clouds_copied": copied,
        "output": str(out_dir),
    }


# ---------------------------------------------------------------- plumbing

def _map_tasks(fn, tasks, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fullpose",
        description="Full-pose 3D box pipelines: slope synthesis, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("augment", help="slope-augment a dataset directory")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--p-s", type=float, default=None, help="application probability")
    p.add_argument("--gamma-min", type=float, default=None, help="degrees")
    p.add_argument("--gamma-max", type=float, default=None, help="degrees")
    p.add_argument("--r-min", type=float, default=None, help="meters")
    p.add_argument("--r-max", type=float, default=None, help="meters")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("synth", help="generate labeled fixture scenes")
    common(p)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--ramp-deg", type=float, default=15.0)
    p.add_argument("--ramp-start", type=float, default=20.0)
    p.add_argument("--boxes", type=int, default=5)
    p.add_argument("--density", type=float, default=4.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--ramp-fraction", type=float, default=None)
    p.add_argument("--feature-noise", type=float, default=0.0)
    p.add_argument("--bg-centers", type=int, default=12)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train-head", help="train the toy ground-aware head")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="CSV log path")
    p.set_defaults(fn=cmd_train_head)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--criterion", choices=["iou3d", "bev", "cd", "all"], default="all")
    p.add_argument("--recall-positions", type=int, choices=[11, 40], default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("stats", help="pose/dimension/center histograms as CSV")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("nms", help="standalone suppression over a prediction file")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--iou", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_nms)

    p = sub.add_parser("gradcheck", help="run the gradient verification suite")
    common(p)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("convert", help="convert dataset formats")
    common(p)
    p.add_argument("--from", dest="source", required=True, choices=["kitti"])
    p.add_argument("--to", dest="target", required=True, choices=["pose6d"])
    p.add_argument("--input", required=True)
    p.add_argument("--calib", default=None)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_convert)
    return parser


def run(argv) -> CommandOutcome:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = dataio.load_config(args.config)
        summary = args.fn(args, cfg)
    except (ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return CommandOutcome(1, {"error": str(exc)})
    exit_code = summary.pop("_exit", 0)
    return CommandOutcome(exit_code, summary)


def main(argv=None) -> int:
    outcome = run(sys.argv[1:] if argv is None else argv)
    print(json.dumps(outcome.summary, indent=2, sort_keys=True))
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
