"""Detection and pose evaluation: TP/FP/TN/FN rule, precision, MAE/RMSE, bin mAP.

Detection outcome rule (strict comparisons, score exactly at threshold falls
to FP):
    TN  if no groundtruth and score < t_c
    TP  if groundtruth exists, score > t_c and IOU > t_iou
    FN  if groundtruth exists and score < t_c
    FP  otherwise
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import EulerAngles, Quaternion
from .labelgen import Box2D
from .ssdaf import Detection, iou

DEFAULT_T_C = 0.0001
DEFAULT_T_IOU = 0.05
IOU_THRESHOLDS = (0.05, 0.25, 0.5)


class DetectionOutcome(enum.Enum):
    TP = "TP"
    FP = "FP"
    TN = "TN"
    FN = "FN"


@dataclass
class MetricsReport:
    map_at: dict  # IOU threshold -> precision
    uv_mae: float = math.nan
    uv_rmse: float = math.nan
    xyz_mae: float = math.nan
    xyz_rmse: float = math.nan
    orient_mae: Optional[tuple] = None  # (yaw, pitch, roll) radians
    bin_map: Optional[float] = None
    counts: dict = field(default_factory=dict)  # outcome name -> count at DEFAULT_T_IOU

    def to_dict(self) -> dict:
        return {
            "map_at": {str(k): v for k, v in self.map_at.items()},
            "uv_mae_px": self.uv_mae,
            "uv_rmse_px": self.uv_rmse,
            "xyz_mae_m": self.xyz_mae,
            "xyz_rmse_m": self.xyz_rmse,
            "orient_mae_rad": list(self.orient_mae) if self.orient_mae else None,
            "bin_map": self.bin_map,
            "counts": self.counts,
        }


def classify_detection(
    gt: Optional[Box2D],
    pred: Optional[Detection],
    t_c: float = DEFAULT_T_C,
    t_iou: float = DEFAULT_T_IOU,
) -> DetectionOutcome:
    score = pred.class_score if pred is not None else 0.0
    if gt is None:
        return DetectionOutcome.TN if score < t_c else DetectionOutcome.FP
    if score < t_c:
        return DetectionOutcome.FN
    if score > t_c and pred is not None and iou(gt, pred.box) > t_iou:
        return DetectionOutcome.TP
    return DetectionOutcome.FP


def precision(outcomes) -> float:
    tp = sum(1 for o in outcomes if o is DetectionOutcome.TP)
    fp = sum(1 for o in outcomes if o is DetectionOutcome.FP)
    if tp + fp == 0:
        return 1.0
    return tp / (tp + fp)


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def pose_errors(samples, space: str):
    """MAE and RMSE over paired (gt, pred) pose quantities.

    space "uv": pairs of 2-vectors in pixels; "xyz": pairs of 3-vectors in
    meters; Euclidean distance per sample. space "orientation": pairs of
    Quaternions; returns per-axis (yaw, pitch, roll) absolute wrapped Euler
    differences, MAE and RMSE each a 3-tuple.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no true positives to evaluate")
    if space in ("uv", "xyz"):
        dists = np.array(
            [np.linalg.norm(np.asarray(g, dtype=float) - np.asarray(p, dtype=float)) for g, p in samples]
        )
        return float(np.mean(dists)), float(np.sqrt(np.mean(dists**2)))
    if space == "orientation":
        diffs = []
        for g, p in samples:
            eg = EulerAngles.from_quaternion(g)
            ep = EulerAngles.from_quaternion(p)
            diffs.append(
                [
                    abs(_wrap_angle(ep.yaw - eg.yaw)),
                    abs(_wrap_angle(ep.pitch - eg.pitch)),
                    abs(_wrap_angle(ep.roll - eg.roll)),
                ]
            )
        d = np.array(diffs)
        mae = tuple(float(v) for v in d.mean(axis=0))
        rmse = tuple(float(v) for v in np.sqrt((d**2).mean(axis=0)))
        return mae, rmse
    raise ValueError(f"unknown error space {space!r}")


def bin_map(samples) -> float:
    """Fraction of TP samples whose argmax predicted bin equals the groundtruth bin."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples for bin classification")
    hits = sum(1 for gt_bin, scores in samples if int(np.argmax(scores)) == gt_bin)
    return hits / len(samples)


def evaluate(
    pairs,
    t_c: float = DEFAULT_T_C,
    iou_thresholds=IOU_THRESHOLDS,
    uv_pairs=None,
    xyz_pairs=None,
    orient_pairs=None,
    bin_pairs=None,
) -> MetricsReport:
    """Aggregate report over (gt_box_or_None, Detection_or_None) pairs.

    The per-space error pair lists must be aligned 1:1 with `pairs`; errors
    are computed over samples that are TP at the default IOU threshold.
    """
    pairs = list(pairs)
    map_at = {}
    for t in iou_thresholds:
        outcomes = [classify_detection(g, p, t_c, t) for g, p in pairs]
        map_at[t] = precision(outcomes)
    base = [classify_detection(g, p, t_c, DEFAULT_T_IOU) for g, p in pairs]
    counts = {o.value: sum(1 for b in base if b is o) for o in DetectionOutcome}
    tp_idx = [i for i, o in enumerate(base) if o is DetectionOutcome.TP]

    report = MetricsReport(map_at=map_at, counts=counts)
    if uv_pairs is not None and tp_idx:
        report.uv_mae, report.uv_rmse = pose_errors([uv_pairs[i] for i in tp_idx], "uv")
    if xyz_pairs is not None and tp_idx:
        report.xyz_mae, report.xyz_rmse = pose_errors([xyz_pairs[i] for i in tp_idx], "xyz")
    if orient_pairs is not None and tp_idx:
        mae, _ = pose_errors([orient_pairs[i] for i in tp_idx], "orientation")
        report.orient_mae = mae
    if bin_pairs is not None and tp_idx:
        report.bin_map = bin_map([bin_pairs[i] for i in tp_idx])
    return report
