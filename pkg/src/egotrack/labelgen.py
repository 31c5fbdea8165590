"""Training-label generation: hand bounding cube, 2D boxes, dataset cleaning.

The hand holding the controller is labeled via a fixed bounding cube in the
tip's local frame, projected through the fisheye model into each image. Boxes
are stored normalized (cx, cy, w, h in [0, 1]).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import FisheyeCamera, StereoRig
from .geometry import Pose, Quaternion

# per-axis {min, max} bounds of the hand cube in tip-local meters
CUBE_BOUNDS = ((-0.03, 0.05), (-0.05, 0.01), (-0.01, 0.10))

MAX_TIP_RANGE_M = 1.0
REINIT_DROP_FRAMES = 20
SUSPECT_ERROR_M = 0.03

LABEL_RIGHT_HAND = "right_hand"
LABEL_BACKGROUND = "background"


@dataclass(frozen=True)
class FrameRecord:
    timestamp: float
    frame_id: int
    T_Cam_CT: Pose  # tip in left-camera frame
    T_World_Cam: Pose
    tracking_valid: bool = True
    image_refs: Optional[tuple] = None


@dataclass(frozen=True)
class Box2D:
    """Normalized center-size box."""

    cx: float
    cy: float
    w: float
    h: float

    def corners(self):
        return (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )

    @staticmethod
    def from_corners(x0, y0, x1, y1) -> "Box2D":
        return Box2D(0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0)


@dataclass(frozen=True)
class LabeledSample:
    record: FrameRecord
    box_left: Box2D
    box_right: Box2D
    keypoint_left: tuple  # (u px, v px, z m)
    keypoint_right: tuple
    class_label: str = LABEL_RIGHT_HAND

    @property
    def orientation(self) -> Quaternion:
        return self.record.T_Cam_CT.rotation


@dataclass
class CleanReport:
    kept: int = 0
    dropped_range: int = 0
    dropped_missing: int = 0
    dropped_reinit: int = 0
    flagged_suspect: int = 0

    def total(self) -> int:
        return (
            self.kept
            + self.dropped_range
            + self.dropped_missing
            + self.dropped_reinit
        )


def bounding_cube_corners(T_Cam_CT: Pose) -> np.ndarray:
    """The 8 hand-cube corners in camera frame, shape (8, 3)."""
    local = itertools.product(*CUBE_BOUNDS)
    return np.array([T_Cam_CT.apply(c) for c in local])


def project_hand_box(corners: np.ndarray, cam: FisheyeCamera) -> Box2D:
    """Smallest axis-aligned box containing the projected corners, normalized.

    Corners outside the field of view are skipped; the box is clipped to the
    image bounds. Raises if no corner is visible.
    """
    us, vs = [], []
    for c in corners:
        try:
            u, v = cam.project(c)
        except ValueError:
            continue
        us.append(u)
        vs.append(v)
    if not us:
        raise ValueError("hand not visible")
    x0 = max(min(us), 0.0) / cam.width
    x1 = min(max(us), float(cam.width)) / cam.width
    y0 = max(min(vs), 0.0) / cam.height
    y1 = min(max(vs), float(cam.height)) / cam.height
    if x1 <= x0 or y1 <= y0:
        raise ValueError("hand not visible")
    return Box2D.from_corners(x0, y0, x1, y1)


def clean_dataset(records):
    """Apply the range / missing-tracking / reinitialization filters.

    Drop reasons are evaluated per record in order: missing, reinit, range;
    the first matching reason is tallied. Records inside the 20-frame window
    after any valid->invalid transition are dropped as reinit.
    """
    records = list(records)
    report = CleanReport()
    kept = []
    reinit_until = -1  # last frame index (inclusive) still in a reinit window
    for i, rec in enumerate(records):
        if not rec.tracking_valid:
            report.dropped_missing += 1
            reinit_until = i + REINIT_DROP_FRAMES
            continue
        if i <= reinit_until:
            report.dropped_reinit += 1
            continue
        if np.linalg.norm(rec.T_Cam_CT.translation) > MAX_TIP_RANGE_M:
            report.dropped_range += 1
            continue
        kept.append(rec)
        report.kept += 1
    return kept, report


def flag_suspect_frames(samples, predictions):
    """Frame ids whose predicted tip position is off by more than 3 cm."""
    samples = list(samples)
    predictions = list(predictions)
    if len(samples) != len(predictions):
        raise ValueError("prediction/record count mismatch")
    flagged = []
    for s, p in zip(samples, predictions):
        gt = s.record.T_Cam_CT.translation
        if np.linalg.norm(np.asarray(p, dtype=float) - gt) > SUSPECT_ERROR_M:
            flagged.append(s.record.frame_id)
    return flagged


def label_sample(record: FrameRecord, rig: StereoRig) -> LabeledSample:
    """Project the tip and hand cube into both cameras of the rig."""
    T = record.T_Cam_CT
    corners_l = bounding_cube_corners(T)
    box_l = project_hand_box(corners_l, rig.left)
    T_right_left = rig.T_left_right.inverse()
    corners_r = np.array([T_right_left.apply(c) for c in corners_l])
    box_r = project_hand_box(corners_r, rig.right)

    tip_l = T.translation
    u_l, v_l = rig.left.project(tip_l)
    tip_r = T_right_left.apply(tip_l)
    u_r, v_r = rig.right.project(tip_r)
    return LabeledSample(
        record=record,
        box_left=box_l,
        box_right=box_r,
        keypoint_left=(float(u_l), float(v_l), float(tip_l[2])),
        keypoint_right=(float(u_r), float(v_r), float(tip_r[2])),
    )


def label_dataset(records, rig: StereoRig):
    """Label every cleaned record whose hand is visible in both cameras."""
    out = []
    for rec in records:
        try:
            out.append(label_sample(rec, rig))
        except ValueError:
            continue
    return out


# --- label JSON-lines I/O ---

def sample_to_json(s: LabeledSample) -> str:
    q = s.orientation
    return json.dumps(
        {
            "t": s.record.timestamp,
            "frame_id": s.record.frame_id,
            "box_l": [s.box_left.cx, s.box_left.cy, s.box_left.w, s.box_left.h],
            "box_r": [s.box_right.cx, s.box_right.cy, s.box_right.w, s.box_right.h],
            "kp_l": list(s.keypoint_left),
            "kp_r": list(s.keypoint_right),
            "q": [q.w, q.x, q.y, q.z],
            "label": s.class_label,
        }
    )


def samples_to_jsonl(samples) -> str:
    return "\n".join(sample_to_json(s) for s in samples) + "\n"


def sample_from_json(line: str) -> LabeledSample:
    obj = json.loads(line)
    w, x, y, z = obj["q"]
    kp_l = obj["kp_l"]
    rec = FrameRecord(
        timestamp=obj["t"],
        frame_id=obj["frame_id"],
        T_Cam_CT=Pose(
            Quaternion(w, x, y, z).normalized(),
            np.array(obj.get("p_m", [0.0, 0.0, kp_l[2]]), dtype=float),
        ),
        T_World_Cam=Pose.identity(),
    )
    return LabeledSample(
        record=rec,
        box_left=Box2D(*obj["box_l"]),
        box_right=Box2D(*obj["box_r"]),
        keypoint_left=tuple(obj["kp_l"]),
        keypoint_right=tuple(obj["kp_r"]),
        class_label=obj.get("label", LABEL_RIGHT_HAND),
    )


def samples_from_jsonl(text: str):
    out = []
    for i, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(sample_from_json(line))
        except (KeyError, ValueError, TypeError) as e:
            raise ValueError(f"bad label row at line {i + 1}: {e}") from e
    return out
