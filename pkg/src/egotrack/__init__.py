"""Egocentric 6-DoF controller tracking pipeline.

Subpackages cover the full markerless-tracking data path: rigid-transform
algebra, fisheye stereo geometry, offline calibration, label generation,
anchor-based target encoding with additional fields, evaluation metrics,
and a synthetic scene simulator for closed-loop verification.
"""

from .geometry import (
    EulerAngles,
    Pose,
    Quaternion,
    TimedTrajectory,
    angular_velocity,
    compose,
    interpolate,
    tip_offset,
    tip_pose_in_camera,
)
from .camera import FisheyeCamera, StereoRig, default_rig, scale_intrinsics, triangulate
from .calibration import hand_eye_solve, time_align, tip_calibrate
from .labelgen import (
    Box2D,
    CleanReport,
    FrameRecord,
    LabeledSample,
    bounding_cube_corners,
    clean_dataset,
    flag_suspect_frames,
    project_hand_box,
)
from .ssdaf import (
    AnchorBox,
    Detection,
    EncodedTarget,
    FieldSchema,
    bin_orientation,
    decode_fields,
    encode_fields,
    generate_anchors,
    match_anchors,
    multibox_loss,
    nms_select,
    orientation_from_keypoints,
)
from .metrics import DetectionOutcome, MetricsReport, classify_detection, pose_errors, precision
from .simulator import OraclePredictor, SimConfig, gen_trajectories, oracle_predict, render_dataset

__version__ = "0.1.0"
