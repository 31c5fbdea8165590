"""Anchor-based detection head math with additional fields.

Covers anchor generation, IOU matching, target encoding/decoding for every
model variant (2D/3D/stereo keypoints, quaternion/Euler orientation,
orientation binning, multi-keypoint), the multibox loss, and NMS.

Keypoint fields are encoded relative to the matched anchor:
    t_u = (u_o - x_a) / w_a,  t_v = (v_o - y_a) / h_a,  t_z = P_z / h_a
with u_o, v_o in normalized image coordinates and P_z in meters.
Orientation fields are appended raw (not anchor-encoded).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import EulerAngles, Pose, Quaternion
from .labelgen import Box2D, LabeledSample

TWO_PI = 2.0 * math.pi

# default canonical keypoints for the multi-point variant: four non-coplanar
# corners of the hand cube, tip-local meters
DEFAULT_MULTIPOINT_KEYPOINTS = (
    (-0.03, -0.05, -0.01),
    (0.05, -0.05, -0.01),
    (-0.03, 0.01, -0.01),
    (-0.03, -0.05, 0.10),
)

VARIANTS = (
    "AF2D",
    "AF3D",
    "AFStereo3D",
    "AFQuat6D",
    "AFEuler6D",
    "AFBinned",
    "AF3DBinned",
    "AxisBinned",
    "MultiPoint",
)

AXES = ("yaw", "pitch", "roll")


@dataclass(frozen=True)
class AnchorBox:
    x_a: float
    y_a: float
    w_a: float
    h_a: float
    layer_id: int = 0
    cell: int = 0

    def as_box(self) -> Box2D:
        return Box2D(self.x_a, self.y_a, self.w_a, self.h_a)


@dataclass(frozen=True)
class FieldSchema:
    """Which additional fields a model variant predicts."""

    variant: str
    bins: int = 0
    axis: str = "yaw"  # AxisBinned only
    n_keypoints: int = 4  # MultiPoint only
    keypoints: tuple = DEFAULT_MULTIPOINT_KEYPOINTS

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown schema variant {self.variant!r}")
        if self.variant in ("AFBinned", "AF3DBinned"):
            s = round(self.bins ** (1.0 / 3.0))
            if s**3 != self.bins:
                raise ValueError("full binning requires a perfect-cube bin count")
        if self.variant == "AxisBinned":
            if self.bins < 1:
                raise ValueError("AxisBinned requires bins >= 1")
            if self.axis not in AXES:
                raise ValueError(f"unknown axis {self.axis!r}")

    @property
    def k(self) -> int:
        return {
            "AF2D": 2,
            "AF3D": 3,
            "AFStereo3D": 6,
            "AFQuat6D": 14,
            "AFEuler6D": 12,
            "AFBinned": self.bins,
            "AF3DBinned": 3 + self.bins,
            "AxisBinned": 3 + self.bins,
            "MultiPoint": 6 * self.n_keypoints,
        }[self.variant]

    @property
    def bin_field_slice(self) -> Optional[slice]:
        """Slice of the field vector holding bin class scores, if any."""
        if self.variant == "AFBinned":
            return slice(0, self.bins)
        if self.variant in ("AF3DBinned", "AxisBinned"):
            return slice(3, 3 + self.bins)
        return None

    def to_json(self) -> str:
        return json.dumps(
            {
                "variant": self.variant,
                "bins": self.bins,
                "axis": self.axis,
                "n_keypoints": self.n_keypoints,
                "keypoints": [list(p) for p in self.keypoints],
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "FieldSchema":
        obj = json.loads(text)
        return FieldSchema(
            variant=obj["variant"],
            bins=obj.get("bins", 0),
            axis=obj.get("axis", "yaw"),
            n_keypoints=obj.get("n_keypoints", 4),
            keypoints=tuple(tuple(p) for p in obj.get("keypoints", DEFAULT_MULTIPOINT_KEYPOINTS)),
        )


@dataclass
class EncodedTarget:
    """Per-anchor training targets. Unmatched anchors carry background class."""

    boxes: np.ndarray  # (N, 4) offsets, zero where unmatched
    fields: np.ndarray  # (N, k)
    cls: np.ndarray  # (N,) 1.0 right-hand / 0.0 background
    matched: np.ndarray  # (N,) bool


@dataclass(frozen=True)
class Detection:
    box: Box2D
    fields: np.ndarray
    class_score: float

    def __post_init__(self):
        if not (0.0 <= self.class_score <= 1.0):
            raise ValueError("class_score must be in [0, 1]")
        object.__setattr__(self, "fields", np.asarray(self.fields, dtype=float))


# --- anchors ---

@dataclass(frozen=True)
class AnchorLayer:
    grid_w: int
    grid_h: int
    scale: float
    aspects: tuple = (1.0, 2.0, 0.5)


DEFAULT_ANCHOR_LAYERS = (
    AnchorLayer(20, 15, 0.2),
    AnchorLayer(10, 8, 0.45),
    AnchorLayer(5, 4, 0.7),
)


def generate_anchors(layers=DEFAULT_ANCHOR_LAYERS):
    """One anchor per (cell, aspect) per layer; deterministic order."""
    layers = tuple(layers)
    if not layers:
        raise ValueError("empty anchor config")
    anchors = []
    for li, layer in enumerate(layers):
        cell = 0
        for gy in range(layer.grid_h):
            for gx in range(layer.grid_w):
                cx = (gx + 0.5) / layer.grid_w
                cy = (gy + 0.5) / layer.grid_h
                for ar in layer.aspects:
                    w = layer.scale * math.sqrt(ar)
                    h = layer.scale / math.sqrt(ar)
                    anchors.append(AnchorBox(cx, cy, min(w, 1.0), min(h, 1.0), li, cell))
                cell += 1
    return anchors


def anchor_layers_from_json(text: str):
    obj = json.loads(text)
    return tuple(
        AnchorLayer(
            grid_w=l["grid"][0],
            grid_h=l["grid"][1],
            scale=l["scale"],
            aspects=tuple(l.get("aspects", (1.0, 2.0, 0.5))),
        )
        for l in obj["layers"]
    )


def anchor_layers_to_json(layers) -> str:
    return json.dumps(
        {
            "layers": [
                {"grid": [l.grid_w, l.grid_h], "scale": l.scale, "aspects": list(l.aspects)}
                for l in layers
            ]
        },
        sort_keys=True,
    )


# --- IOU and matching ---

def iou(a: Box2D, b: Box2D) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def match_anchors(gt_boxes, anchors, iou_thresh: float = 0.5):
    """Assign anchors to groundtruth boxes.

    Returns an int array of length len(anchors): groundtruth index or -1.
    Each groundtruth additionally claims its single highest-IOU anchor,
    ties broken by lowest anchor index.
    """
    gt_boxes = list(gt_boxes)
    assignment = np.full(len(anchors), -1, dtype=int)
    if not gt_boxes:
        return assignment
    mat = np.array([[iou(g, a.as_box()) for a in anchors] for g in gt_boxes])
    best_gt = np.argmax(mat, axis=0)
    best_iou = mat[best_gt, np.arange(len(anchors))]
    assignment[best_iou > iou_thresh] = best_gt[best_iou > iou_thresh]
    for j in range(len(gt_boxes)):
        assignment[int(np.argmax(mat[j]))] = j
    return assignment


# --- box offset coding (standard centroid/log-size form) ---

def encode_box(anchor: AnchorBox, box: Box2D) -> np.ndarray:
    return np.array(
        [
            (box.cx - anchor.x_a) / anchor.w_a,
            (box.cy - anchor.y_a) / anchor.h_a,
            math.log(box.w / anchor.w_a),
            math.log(box.h / anchor.h_a),
        ]
    )


def decode_box(anchor: AnchorBox, offsets) -> Box2D:
    tx, ty, tw, th = (float(v) for v in offsets)
    return Box2D(
        anchor.x_a + tx * anchor.w_a,
        anchor.y_a + ty * anchor.h_a,
        anchor.w_a * math.exp(tw),
        anchor.h_a * math.exp(th),
    )


# --- orientation binning ---

def _axis_values(q: Quaternion) -> dict:
    e = EulerAngles.from_quaternion(q)
    return {"yaw": e.yaw, "pitch": e.pitch, "roll": e.roll}


def _cell(angle: float, n: int) -> int:
    i = int(math.floor((angle + math.pi) / (TWO_PI / n)))
    return min(max(i, 0), n - 1)


def _cell_center(i: int, n: int) -> float:
    return -math.pi + (i + 0.5) * (TWO_PI / n)


def bin_orientation(q: Quaternion, scheme: str, bins: int, axis: str = "yaw") -> int:
    """Discretize orientation into equal Euler-angle cells over [-pi, pi).

    scheme "full": bins must be a perfect cube s^3; the index is
    i_yaw * s^2 + i_pitch * s + i_roll. scheme "axis": bins cells along one axis.
    """
    vals = _axis_values(q)
    if scheme == "full":
        s = round(bins ** (1.0 / 3.0))
        if s**3 != bins:
            raise ValueError("full binning requires a perfect-cube bin count")
        return (
            _cell(vals["yaw"], s) * s * s
            + _cell(vals["pitch"], s) * s
            + _cell(vals["roll"], s)
        )
    if scheme == "axis":
        if axis not in AXES:
            raise ValueError(f"unknown axis {axis!r}")
        return _cell(vals[axis], bins)
    raise ValueError(f"unknown binning scheme {scheme!r}")


def unbin_orientation(index: int, scheme: str, bins: int, axis: str = "yaw"):
    """Bin-center orientation. Full scheme returns EulerAngles; axis returns the angle."""
    if scheme == "full":
        s = round(bins ** (1.0 / 3.0))
        if s**3 != bins:
            raise ValueError("full binning requires a perfect-cube bin count")
        if not (0 <= index < bins):
            raise ValueError("bin index out of range")
        i_yaw, rem = divmod(index, s * s)
        i_pitch, i_roll = divmod(rem, s)
        return EulerAngles(
            roll=_cell_center(i_roll, s),
            pitch=_cell_center(i_pitch, s),
            yaw=_cell_center(i_yaw, s),
        )
    if scheme == "axis":
        if not (0 <= index < bins):
            raise ValueError("bin index out of range")
        return _cell_center(index, bins)
    raise ValueError(f"unknown binning scheme {scheme!r}")


# --- field encode/decode ---

def _kp_encode(anchor: AnchorBox, u_n: float, v_n: float, z: float):
    return (
        (u_n - anchor.x_a) / anchor.w_a,
        (v_n - anchor.y_a) / anchor.h_a,
        z / anchor.h_a,
    )


def _kp_decode(anchor: AnchorBox, t_u: float, t_v: float, t_z: float):
    return (
        t_u * anchor.w_a + anchor.x_a,
        t_v * anchor.h_a + anchor.y_a,
        t_z * anchor.h_a,
    )


@dataclass
class DecodedFields:
    """Decoded per-anchor field values in label units (pixels, meters, radians)."""

    keypoints: list  # [(u px, v px, z m)] per image: [left] or [left, right]
    orientation: Optional[Quaternion] = None
    bin_index: Optional[int] = None
    axis_angle_value: Optional[float] = None  # AxisBinned: bin-center angle
    multipoints: Optional[list] = None  # MultiPoint: per image list of K (u px, v px, z m)


def _one_hot(index: int, n: int) -> list:
    v = [0.0] * n
    v[index] = 1.0
    return v


def encode_fields(
    schema: FieldSchema,
    anchor: AnchorBox,
    sample: LabeledSample,
    image_size=(640, 480),
    matched: bool = True,
    multipoint_pixels=None,
) -> np.ndarray:
    """Additional-field target vector for one matched anchor.

    multipoint_pixels: for the MultiPoint variant, per-image lists of K
    (u px, v px, z m) tuples, [left_list, right_list]; required there.
    """
    if not matched:
        raise ValueError("encode on unmatched anchor")
    W, H = image_size
    u_l, v_l, z_l = sample.keypoint_left
    u_r, v_r, z_r = sample.keypoint_right
    kp_l = _kp_encode(anchor, u_l / W, v_l / H, z_l)
    kp_r = _kp_encode(anchor, u_r / W, v_r / H, z_r)
    q = sample.orientation.canonical()
    v = schema.variant

    if v == "AF2D":
        return np.array(kp_l[:2])
    if v == "AF3D":
        return np.array(kp_l)
    if v == "AFStereo3D":
        return np.array(kp_l + kp_r)
    if v == "AFQuat6D":
        quat = (q.x, q.y, q.z, q.w)
        return np.array(kp_l + quat + kp_r + quat)
    if v == "AFEuler6D":
        e = EulerAngles.from_quaternion(q)
        ang = (e.pitch, e.yaw, e.roll)
        return np.array(kp_l + ang + kp_r + ang)
    if v == "AFBinned":
        idx = bin_orientation(q, "full", schema.bins)
        return np.array(_one_hot(idx, schema.bins))
    if v == "AF3DBinned":
        idx = bin_orientation(q, "full", schema.bins)
        return np.array(list(kp_l) + _one_hot(idx, schema.bins))
    if v == "AxisBinned":
        idx = bin_orientation(q, "axis", schema.bins, schema.axis)
        return np.array(list(kp_l) + _one_hot(idx, schema.bins))
    if v == "MultiPoint":
        if multipoint_pixels is None:
            raise ValueError("MultiPoint encoding requires projected keypoints")
        out = []
        for img_kps in multipoint_pixels:
            if len(img_kps) != schema.n_keypoints:
                raise ValueError("keypoint count mismatch")
            for (u, vv, z) in img_kps:
                out.extend(_kp_encode(anchor, u / W, vv / H, z))
        return np.array(out)
    raise ValueError(f"unknown schema variant {v!r}")


def decode_fields(
    schema: FieldSchema, anchor: AnchorBox, fields, image_size=(640, 480)
) -> DecodedFields:
    """Exact algebraic inverse of encode_fields (bins decode to cell centers)."""
    fields = np.asarray(fields, dtype=float)
    if fields.shape != (schema.k,):
        raise ValueError(f"field length mismatch: expected {schema.k}, got {fields.shape}")
    W, H = image_size
    v = schema.variant

    def kp(t_u, t_v, t_z=0.0):
        u_n, v_n, z = _kp_decode(anchor, t_u, t_v, t_z)
        return (u_n * W, v_n * H, z)

    if v == "AF2D":
        return DecodedFields(keypoints=[kp(fields[0], fields[1])])
    if v == "AF3D":
        return DecodedFields(keypoints=[kp(*fields)])
    if v == "AFStereo3D":
        return DecodedFields(keypoints=[kp(*fields[:3]), kp(*fields[3:])])
    if v == "AFQuat6D":
        x, y, z, w = fields[3:7]
        q = Quaternion(w, x, y, z).normalized().canonical()
        return DecodedFields(
            keypoints=[kp(*fields[:3]), kp(*fields[7:10])], orientation=q
        )
    if v == "AFEuler6D":
        pitch, yaw, roll = fields[3:6]
        q = EulerAngles(roll, pitch, yaw).to_quaternion().canonical()
        return DecodedFields(
            keypoints=[kp(*fields[:3]), kp(*fields[6:9])], orientation=q
        )
    if v == "AFBinned":
        idx = int(np.argmax(fields))
        e = unbin_orientation(idx, "full", schema.bins)
        return DecodedFields(keypoints=[], bin_index=idx, orientation=e.to_quaternion().canonical())
    if v == "AF3DBinned":
        idx = int(np.argmax(fields[3:]))
        e = unbin_orientation(idx, "full", schema.bins)
        return DecodedFields(
            keypoints=[kp(*fields[:3])],
            bin_index=idx,
            orientation=e.to_quaternion().canonical(),
        )
    if v == "AxisBinned":
        idx = int(np.argmax(fields[3:]))
        angle = unbin_orientation(idx, "axis", schema.bins, schema.axis)
        return DecodedFields(
            keypoints=[kp(*fields[:3])], bin_index=idx, axis_angle_value=angle
        )
    if v == "MultiPoint":
        pts = fields.reshape(2 * schema.n_keypoints, 3)
        per_img = [
            [kp(*row) for row in pts[: schema.n_keypoints]],
            [kp(*row) for row in pts[schema.n_keypoints :]],
        ]
        return DecodedFields(keypoints=[], multipoints=per_img)
    raise ValueError(f"unknown schema variant {v!r}")


def orientation_from_keypoints(predicted, canonical) -> Quaternion:
    """Optimal rotation aligning canonical keypoints to predicted ones.

    Orthogonal Procrustes about the centroids with determinant correction,
    so reflections are never returned.
    """
    P = np.asarray(predicted, dtype=float)
    C = np.asarray(canonical, dtype=float)
    if P.shape != C.shape or P.shape[0] < 3 or P.shape[1] != 3:
        raise ValueError("need matching K x 3 point sets, K >= 3")
    C0 = C - C.mean(axis=0)
    # collinearity check on the canonical set
    _, sv, _ = np.linalg.svd(C0)
    if sv[1] < 1e-9 * max(sv[0], 1e-12):
        raise ValueError("degenerate keypoint configuration")
    P0 = P - P.mean(axis=0)
    Hm = C0.T @ P0
    U, _, Vt = np.linalg.svd(Hm)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Quaternion.from_matrix(R)


# --- target assembly and loss ---

def project_multipoints(schema: FieldSchema, sample: LabeledSample, rig):
    """Project the schema's canonical keypoints into both rig cameras."""
    T = sample.record.T_Cam_CT
    pts_l = [T.apply(p) for p in schema.keypoints]
    T_rl = rig.T_left_right.inverse()
    out = []
    for cam, pts in ((rig.left, pts_l), (rig.right, [T_rl.apply(p) for p in pts_l])):
        img = []
        for p in pts:
            u, v = cam.project(p)
            img.append((u, v, float(p[2])))
        out.append(img)
    return out


def encode_sample(
    schema: FieldSchema,
    anchors,
    sample: LabeledSample,
    image_size=(640, 480),
    rig=None,
) -> EncodedTarget:
    """Full per-anchor target tensor for one labeled sample."""
    n = len(anchors)
    assignment = match_anchors([sample.box_left], anchors)
    boxes = np.zeros((n, 4))
    fields = np.zeros((n, schema.k))
    cls = np.zeros(n)
    matched = assignment >= 0
    mp = None
    if schema.variant == "MultiPoint":
        if rig is None:
            raise ValueError("MultiPoint encoding requires a stereo rig")
        mp = project_multipoints(schema, sample, rig)
    for i in np.nonzero(matched)[0]:
        boxes[i] = encode_box(anchors[i], sample.box_left)
        fields[i] = encode_fields(
            schema, anchors[i], sample, image_size=image_size, multipoint_pixels=mp
        )
        cls[i] = 1.0
    return EncodedTarget(boxes=boxes, fields=fields, cls=cls, matched=matched)


def _smooth_l1(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * ax * ax, ax - 0.5)


def _bce(p: np.ndarray, y: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    exact = p == y
    p = np.clip(p, eps, 1.0 - eps)
    out = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    # clamping must not leak loss into an exactly-correct prediction
    return np.where(exact, 0.0, out)


def multibox_loss(
    pred: EncodedTarget,
    target: EncodedTarget,
    alpha: float = 1.0,
    beta: float = 1.0,
    schema: Optional[FieldSchema] = None,
):
    """Total multibox loss with additional fields.

    total = (1/n) [ sum_matched SmoothL1(box) + alpha * sum_all BCE(class)
                    + beta * sum_matched FieldLoss ]
    where n is the matched-anchor count. Bin-score field blocks use
    categorical cross-entropy; all other fields use Smooth L1. With no
    matches the loss is the (unscaled) confidence term alone.
    Returns (total, loc, conf, fields).
    """
    if pred.boxes.shape != target.boxes.shape or pred.fields.shape != target.fields.shape:
        raise ValueError("prediction/target shape mismatch")
    m = target.matched
    n = int(np.count_nonzero(m))
    conf = float(np.sum(_bce(pred.cls, target.cls)))
    if n == 0:
        return (alpha * conf, 0.0, conf, 0.0)
    loc = float(np.sum(_smooth_l1(pred.boxes[m] - target.boxes[m])))

    bin_slice = schema.bin_field_slice if schema is not None else None
    pf = pred.fields[m]
    tf = target.fields[m]
    if bin_slice is None:
        fields_loss = float(np.sum(_smooth_l1(pf - tf)))
    else:
        reg_cols = np.ones(pf.shape[1], dtype=bool)
        reg_cols[bin_slice] = False
        fields_loss = float(np.sum(_smooth_l1(pf[:, reg_cols] - tf[:, reg_cols])))
        scores = np.clip(pf[:, bin_slice], 1e-12, None)
        probs = scores / np.sum(scores, axis=1, keepdims=True)
        fields_loss += float(np.sum(-tf[:, bin_slice] * np.log(probs)))
    total = (loc + alpha * conf + beta * fields_loss) / n
    return (total, loc, conf, fields_loss)


def nms_select(detections, iou_thresh: float = 0.5, top_k: int = 1):
    """Greedy non-maximum suppression by descending class score."""
    rest = sorted(detections, key=lambda d: -d.class_score)
    kept = []
    for d in rest:
        if len(kept) >= top_k:
            break
        if all(iou(d.box, k.box) <= iou_thresh for k in kept):
            kept.append(d)
    return kept


# --- binary export: little-endian float32 rows, one per anchor ---

def export_targets(path_bin, path_sidecar, target: EncodedTarget, schema: FieldSchema):
    rows = np.hstack(
        [
            target.boxes,
            target.fields,
            target.cls[:, None],
            target.matched.astype(np.float32)[:, None],
        ]
    ).astype("<f4")
    rows.tofile(path_bin)
    sidecar = {
        "dtype": "<f4",
        "n_anchors": int(rows.shape[0]),
        "row_width": int(rows.shape[1]),
        "layout": {
            "box_offsets": [0, 4],
            "fields": [4, 4 + schema.k],
            "class": [4 + schema.k, 5 + schema.k],
            "matched": [5 + schema.k, 6 + schema.k],
        },
        "schema": json.loads(schema.to_json()),
    }
    with open(path_sidecar, "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)


def import_targets(path_bin, path_sidecar) -> EncodedTarget:
    with open(path_sidecar) as f:
        sc = json.load(f)
    rows = np.fromfile(path_bin, dtype="<f4").reshape(sc["n_anchors"], sc["row_width"])
    k = sc["layout"]["fields"][1] - 4
    return EncodedTarget(
        boxes=rows[:, :4].astype(float),
        fields=rows[:, 4 : 4 + k].astype(float),
        cls=rows[:, 4 + k].astype(float),
        matched=rows[:, 5 + k] > 0.5,
    )
