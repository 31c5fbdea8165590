"""Batch command-line surface for the tracking pipeline.

Subcommands: simulate, calibrate, labelgen, encode, roundtrip, evaluate,
stats. Exit codes: 0 success, 1 validation failure, 2 I/O error. All angles
are displayed in degrees; stored files use radians/quaternions.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import calibration, camera, labelgen, metrics, pipeline, plots, simulator, ssdaf
from .geometry import Pose, Quaternion

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class ValidationError(Exception):
    pass


def _read(path: str) -> str:
    with open(path) as f:
        return f.read()


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def _pose_to_dict(p: Pose) -> dict:
    q = p.rotation
    return {
        "quaternion": [q.w, q.x, q.y, q.z],
        "translation_m": [float(v) for v in p.translation],
    }


def _pose_from_dict(d: dict) -> Pose:
    w, x, y, z = d["quaternion"]
    return Pose(Quaternion(w, x, y, z).normalized(), np.array(d["translation_m"], dtype=float))


# --- simulate ---

def cmd_simulate(args) -> int:
    cfg = simulator.SimConfig(seed=args.seed)
    if args.config:
        cfg_dict = json.loads(_read(args.config))
        cfg_dict.setdefault("seed", args.seed)
        cfg = simulator.SimConfig(**cfg_dict)
    rig = camera.rig_from_json(_read(args.rig)) if args.rig else camera.default_rig()
    bundle = simulator.simulate(cfg, rig)

    out = args.out
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "rig.json"), camera.rig_to_json(bundle.rig) + "\n")
    _write(
        os.path.join(out, "mocap_headset.jsonl"),
        calibration.trajectory_to_jsonl(bundle.mocap_headset),
    )
    _write(
        os.path.join(out, "mocap_controller.jsonl"),
        calibration.trajectory_to_jsonl(bundle.mocap_controller),
    )
    _write(
        os.path.join(out, "mocap_tip.jsonl"),
        calibration.trajectory_to_jsonl(bundle.mocap_tip),
    )
    _write(
        os.path.join(out, "camera_traj.jsonl"),
        calibration.trajectory_to_jsonl(bundle.camera_traj),
    )

    kept, report = labelgen.clean_dataset(bundle.records)
    samples = labelgen.label_dataset(kept, bundle.rig)
    _write(os.path.join(out, "labels.jsonl"), labelgen.samples_to_jsonl(samples))

    manifest = {
        "config": {
            "seed": cfg.seed,
            "duration": cfg.duration,
            "mocap_rate": cfg.mocap_rate,
            "camera_rate": cfg.camera_rate,
            "sigma_rot_headset": cfg.sigma_rot_headset,
            "sigma_trans_headset": cfg.sigma_trans_headset,
            "sigma_rot_ctrl": cfg.sigma_rot_ctrl,
            "sigma_trans_ctrl": cfg.sigma_trans_ctrl,
            "dropout_rate": cfg.dropout_rate,
            "dropout_gap_frames": cfg.dropout_gap_frames,
            "clock_offset": cfg.clock_offset,
        },
        "true_tip_offset": _pose_to_dict(bundle.tip_offset),
        "true_hand_eye": _pose_to_dict(bundle.hand_eye),
        "clean_report": {
            "kept": report.kept,
            "dropped_range": report.dropped_range,
            "dropped_missing": report.dropped_missing,
            "dropped_reinit": report.dropped_reinit,
        },
        "n_labels": len(samples),
    }
    _write(os.path.join(out, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(samples)} labels and trajectories to {out}")
    return EXIT_OK


# --- calibrate ---

def cmd_calibrate(args) -> int:
    mocap = calibration.trajectory_from_jsonl(_read(args.mocap))
    cam_traj = calibration.trajectory_from_jsonl(_read(args.camera))
    cb = calibration.trajectory_from_jsonl(_read(args.cb)) if args.cb else None
    ct = calibration.trajectory_from_jsonl(_read(args.ct)) if args.ct else None
    out = pipeline.calibrate_trajectories(
        mocap, cam_traj, cb, ct, search_window=args.search_window, stride=args.stride
    )
    he, ta = out.hand_eye, out.time

    report = {
        "hand_eye": _pose_to_dict(he.X),
        "rotation_rmse_rad": he.rotation_rmse,
        "rotation_rmse_deg": math.degrees(he.rotation_rmse),
        "translation_rmse_m": he.translation_rmse,
        "n_pairs": he.n_pairs,
        "time_offset_s": ta.offset,
        "correlation_peak": ta.correlation_peak,
    }
    if out.tip_offset is not None:
        report["tip_offset"] = _pose_to_dict(out.tip_offset)

    _write(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(
        f"hand-eye rot RMSE {math.degrees(he.rotation_rmse):.4f} deg, "
        f"trans RMSE {he.translation_rmse * 1e3:.4f} mm, time offset {ta.offset:.4f} s"
    )
    return EXIT_OK


# --- labelgen ---

def cmd_labelgen(args) -> int:
    if len(args.traj) != 2:
        raise ValidationError("--traj needs two files: headset mocap and controller mocap")
    rig = camera.rig_from_json(_read(args.rig))
    calib = json.loads(_read(args.calib))
    head = calibration.trajectory_from_jsonl(_read(args.traj[0]))
    ctrl = calibration.trajectory_from_jsonl(_read(args.traj[1]))
    hand_eye = _pose_from_dict(calib["hand_eye"])
    if "tip_offset" not in calib:
        raise ValidationError("calibration file lacks tip_offset")
    tip = _pose_from_dict(calib["tip_offset"])
    offset = calib.get("time_offset_s", 0.0)

    if args.camera_traj:
        cam_times = calibration.trajectory_from_jsonl(_read(args.camera_traj)).times
    else:
        t0 = head.times[0] + offset
        t1 = head.times[-1] + offset
        cam_times = np.arange(t0, t1, 1.0 / args.camera_rate)

    records = pipeline.records_from_mocap(
        head, ctrl, np.ones(len(head), dtype=bool), cam_times, hand_eye, tip, offset
    )
    kept, report = labelgen.clean_dataset(records)
    samples = labelgen.label_dataset(kept, rig)
    if not samples:
        raise ValidationError("no labelable frames")
    _write(args.out, labelgen.samples_to_jsonl(samples))
    print(f"kept {report.kept}/{report.total()} frames, wrote {len(samples)} labels")
    return EXIT_OK


# --- encode / roundtrip ---

def _load_schema(args) -> ssdaf.FieldSchema:
    if not args.schema:
        raise ValidationError("--schema is required")
    return ssdaf.FieldSchema.from_json(_read(args.schema))


def _load_anchors(args):
    if args.anchors:
        return ssdaf.generate_anchors(ssdaf.anchor_layers_from_json(_read(args.anchors)))
    return ssdaf.generate_anchors()


def cmd_encode(args) -> int:
    schema = _load_schema(args)
    anchors = _load_anchors(args)
    rig = camera.rig_from_json(_read(args.rig)) if args.rig else camera.default_rig()
    samples = labelgen.samples_from_jsonl(_read(args.labels))
    if not samples:
        raise ValidationError("empty label file")
    image_size = (rig.left.width, rig.left.height)

    os.makedirs(args.out, exist_ok=True)
    all_rows = []
    for s in samples:
        tgt = ssdaf.encode_sample(schema, anchors, s, image_size=image_size, rig=rig)
        all_rows.append(
            np.hstack(
                [
                    tgt.boxes,
                    tgt.fields,
                    tgt.cls[:, None],
                    tgt.matched.astype(np.float32)[:, None],
                ]
            )
        )
    rows = np.vstack(all_rows).astype("<f4")
    bin_path = os.path.join(args.out, "targets.bin")
    rows.tofile(bin_path)
    sidecar = {
        "dtype": "<f4",
        "n_samples": len(samples),
        "n_anchors": len(anchors),
        "row_width": int(rows.shape[1]),
        "layout": {
            "box_offsets": [0, 4],
            "fields": [4, 4 + schema.k],
            "class": [4 + schema.k, 5 + schema.k],
            "matched": [5 + schema.k, 6 + schema.k],
        },
        "schema": json.loads(schema.to_json()),
    }
    _write(os.path.join(args.out, "targets.json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"encoded {len(samples)} samples x {len(anchors)} anchors -> {bin_path}")
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    schema = _load_schema(args)
    anchors = _load_anchors(args)
    rig = camera.rig_from_json(_read(args.rig)) if args.rig else camera.default_rig()
    image_size = (rig.left.width, rig.left.height)
    try:
        samples = labelgen.samples_from_jsonl(_read(args.labels))
    except ValueError as e:
        raise ValidationError(str(e)) from e
    if not samples:
        raise ValidationError("empty label file")

    is_binned = schema.bin_field_slice is not None
    max_err = 0.0
    for s in samples:
        tgt = ssdaf.encode_sample(schema, anchors, s, image_size=image_size, rig=rig)
        idx = np.nonzero(tgt.matched)[0]
        for i in idx:
            dec = ssdaf.decode_fields(schema, anchors[i], tgt.fields[i], image_size=image_size)
            if schema.variant in ("AF2D", "AF3D", "AFStereo3D", "AFQuat6D", "AFEuler6D"):
                u, v, z = s.keypoint_left
                du, dv, dz = dec.keypoints[0]
                err = max(abs(du - u) / image_size[0], abs(dv - v) / image_size[1])
                if schema.variant != "AF2D":
                    err = max(err, abs(dz - z))
                if len(dec.keypoints) > 1:
                    u2, v2, z2 = s.keypoint_right
                    du2, dv2, dz2 = dec.keypoints[1]
                    err = max(
                        err,
                        abs(du2 - u2) / image_size[0],
                        abs(dv2 - v2) / image_size[1],
                        abs(dz2 - z2),
                    )
                if dec.orientation is not None:
                    dq = dec.orientation.conjugate() * s.orientation
                    err = max(err, dq.angle())
                max_err = max(max_err, err)
            elif is_binned:
                # quantization only: decoded bin must match the encoded one
                expect = int(np.argmax(tgt.fields[i][schema.bin_field_slice]))
                if dec.bin_index != expect:
                    raise ValidationError("bin index mismatch after decode")
            elif schema.variant == "MultiPoint":
                mp = ssdaf.project_multipoints(schema, s, rig)
                for img_dec, img_gt in zip(dec.multipoints, mp):
                    for (du, dv, dz), (u, v, z) in zip(img_dec, img_gt):
                        max_err = max(
                            max_err,
                            abs(du - u) / image_size[0],
                            abs(dv - v) / image_size[1],
                            abs(dz - z),
                        )

    report = {"schema": schema.variant, "n_samples": len(samples), "max_error": max_err}
    print(json.dumps(report, sort_keys=True))
    if args.out:
        _write(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if not is_binned and max_err > 1e-9:
        print("roundtrip error exceeds 1e-9", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


# --- evaluate ---

def cmd_evaluate(args) -> int:
    gt = labelgen.samples_from_jsonl(_read(args.labels))
    pred_rows = []
    for i, line in enumerate(_read(args.pred).splitlines()):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        try:
            s = labelgen.sample_from_json(line)
            pred_rows.append((s, float(obj.get("score", 1.0))))
        except (KeyError, ValueError, TypeError) as e:
            raise ValidationError(f"bad prediction row at line {i + 1}: {e}") from e
    if len(gt) != len(pred_rows):
        raise ValidationError("label/prediction count mismatch")

    rig = camera.rig_from_json(_read(args.rig)) if args.rig else None
    pairs, uv_pairs, xyz_pairs, orient_pairs = [], [], [], []
    for g, (p, score) in zip(gt, pred_rows):
        det = ssdaf.Detection(box=p.box_left, fields=np.array(p.keypoint_left), class_score=score)
        pairs.append((g.box_left, det))
        uv_pairs.append((g.keypoint_left[:2], p.keypoint_left[:2]))
        if rig is not None:
            def to3d(kp):
                ray = rig.left.unproject(kp[0], kp[1])
                return ray * (kp[2] / ray[2])

            xyz_pairs.append((to3d(g.keypoint_left), to3d(p.keypoint_left)))
        orient_pairs.append((g.orientation, p.orientation))

    report = metrics.evaluate(
        pairs,
        uv_pairs=uv_pairs,
        xyz_pairs=xyz_pairs if rig is not None else None,
        orient_pairs=orient_pairs,
    )
    os.makedirs(args.out, exist_ok=True)
    rep = report.to_dict()
    if report.orient_mae is not None:
        rep["orient_mae_deg"] = [math.degrees(v) for v in report.orient_mae]
    _write(os.path.join(args.out, "metrics.json"), json.dumps(rep, indent=2, sort_keys=True) + "\n")

    errs = []
    csv_path = os.path.join(args.out, "per_frame_errors.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_id", "uv_error_px"])
        for g, (p, _) in zip(gt, pred_rows):
            e = math.hypot(
                p.keypoint_left[0] - g.keypoint_left[0],
                p.keypoint_left[1] - g.keypoint_left[1],
            )
            errs.append(e)
            w.writerow([g.record.frame_id, f"{e:.6g}"])
    if args.format in ("svg", "png"):
        plots.render_error_figure(errs, os.path.join(args.out, f"error_hist.{args.format}"))
    print(json.dumps({"map_at": rep["map_at"], "uv_mae_px": rep["uv_mae_px"]}, sort_keys=True))
    return EXIT_OK


# --- stats ---

def cmd_stats(args) -> int:
    samples = labelgen.samples_from_jsonl(_read(args.labels))
    if not samples:
        raise ValidationError("empty label file")
    render = args.format in ("svg", "png")
    written = plots.write_stats(samples, args.out, render=render, fmt=args.format if render else "svg")
    print(f"wrote {len(written)} stats files to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egotrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--format", choices=("csv", "svg", "json", "png"), default="csv")

    sp = sub.add_parser("simulate", help="generate a synthetic session")
    common(sp)
    sp.add_argument("--config", help="SimConfig JSON file")
    sp.add_argument("--rig", help="stereo rig JSON (default: built-in synthetic rig)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="hand-eye, tip, and clock calibration")
    common(sp)
    sp.add_argument("--mocap", required=True, help="headset-constellation trajectory JSONL")
    sp.add_argument("--camera", required=True, help="camera trajectory JSONL")
    sp.add_argument("--cb", help="controller-back trajectory JSONL (tip calibration)")
    sp.add_argument("--ct", help="tip-marker trajectory JSONL (tip calibration)")
    sp.add_argument("--search-window", type=float, default=1.0)
    sp.add_argument("--stride", type=int, default=10)
    sp.add_argument("--out", required=True, help="calibration report JSON path")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("labelgen", help="synchronized labels from mocap + calibration")
    common(sp)
    sp.add_argument("--rig", required=True)
    sp.add_argument(
        "--traj", nargs="+", required=True, help="headset mocap JSONL, controller mocap JSONL"
    )
    sp.add_argument("--calib", required=True, help="calibration report JSON")
    sp.add_argument("--camera-traj", help="camera trajectory JSONL supplying frame timestamps")
    sp.add_argument("--camera-rate", type=float, default=30.0)
    sp.add_argument("--out", required=True, help="labels JSONL path")
    sp.set_defaults(func=cmd_labelgen)

    sp = sub.add_parser("encode", help="encode labels into per-anchor target tensors")
    common(sp)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--schema", required=True, help="field schema JSON")
    sp.add_argument("--anchors", help="anchor layer config JSON")
    sp.add_argument("--rig")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("roundtrip", help="encode/decode integrity gate")
    common(sp)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--anchors")
    sp.add_argument("--rig")
    sp.add_argument("--out", help="optional report JSON path")
    sp.set_defaults(func=cmd_roundtrip)

    sp = sub.add_parser("evaluate", help="detection + pose metrics report")
    common(sp)
    sp.add_argument("--labels", required=True, help="groundtruth labels JSONL")
    sp.add_argument("--pred", required=True, help="predictions JSONL (labels schema + score)")
    sp.add_argument("--rig", help="rig JSON, enables xyz metrics")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("stats", help="dataset histograms and occupancy heatmap")
    common(sp)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
