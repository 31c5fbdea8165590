"""Synthetic desk-scale scene: smooth controller/headset motion, noisy mocap
observations with dropouts, frame-record rendering, and an oracle predictor
standing in for a trained network.

Everything is deterministic per seed. The mocap transform chain is built so
that the groundtruth tip-in-camera pose stored on each record is exactly what
the calibration + label pipeline should recover from the observable side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .camera import StereoRig, default_rig
from .geometry import (
    EulerAngles,
    Pose,
    Quaternion,
    TimedTrajectory,
    compose,
    interpolate,
)
from .labelgen import FrameRecord, LabeledSample
from .ssdaf import Detection

# Table-1-scale mocap noise magnitudes (degrees / mm converted at use sites)
HEADSET_ROT_SIGMA_DEG = 0.349
HEADSET_TRANS_SIGMA_MM = 6.693
CTRL_ROT_SIGMA_DEG = 0.032
CTRL_TRANS_SIGMA_MM = 0.658

REINIT_TRANSIENT_S = 0.6
REINIT_NOISE_FACTOR = 5.0


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    duration: float = 20.0
    mocap_rate: float = 500.0
    camera_rate: float = 30.0
    sigma_rot_headset: float = 0.0  # radians
    sigma_trans_headset: float = 0.0  # meters
    sigma_rot_ctrl: float = 0.0
    sigma_trans_ctrl: float = 0.0
    dropout_rate: float = 0.0  # expected dropouts per second
    dropout_gap_frames: int = 10  # mean gap length in mocap samples
    clock_offset: float = 0.0  # camera clock minus mocap clock, seconds

    def __post_init__(self):
        if self.mocap_rate <= 0 or self.camera_rate <= 0:
            raise ValueError("rates must be positive")
        if min(
            self.sigma_rot_headset,
            self.sigma_trans_headset,
            self.sigma_rot_ctrl,
            self.sigma_trans_ctrl,
        ) < 0:
            raise ValueError("noise sigmas must be nonnegative")


@dataclass(frozen=True)
class OraclePredictor:
    """Noisy groundtruth passthrough standing in for the trained network."""

    pixel_noise_sigma: float = 0.0
    depth_noise_sigma: float = 0.0
    orientation_noise_sigma: float = 0.0
    score: float = 0.999
    score_noise_sigma: float = 0.0
    seed: int = 0


def _smooth_angle_series(rng, t_grid, duration, amplitude, knot_spacing=2.5):
    n_knots = max(4, int(duration / knot_spacing) + 2)
    knots = np.linspace(-knot_spacing, duration + knot_spacing, n_knots)
    vals = rng.uniform(-amplitude, amplitude, n_knots)
    return CubicSpline(knots, vals)(t_grid)


def _smooth_position_series(rng, t_grid, duration, lo, hi, knot_spacing=2.5):
    n_knots = max(4, int(duration / knot_spacing) + 2)
    knots = np.linspace(-knot_spacing, duration + knot_spacing, n_knots)
    vals = rng.uniform(lo, hi, n_knots)
    return CubicSpline(knots, vals)(t_grid)


def gen_trajectories(config: SimConfig):
    """Smooth random controller-tip and headset-camera paths in the room frame.

    The tip stays inside the desk-scale working volume in front of the
    headset, biased toward the lower-right image region (+x right, +y down).
    Returns (controller_tip: TimedTrajectory, headset_camera: TimedTrajectory),
    both sampled at mocap_rate.
    """
    rng = np.random.default_rng(config.seed)
    t = np.arange(0.0, config.duration, 1.0 / config.mocap_rate)

    # controller tip: spline through random control points, lower-right bias
    px = _smooth_position_series(rng, t, config.duration, -0.05, 0.40)
    py = _smooth_position_series(rng, t, config.duration, -0.05, 0.30)
    pz = _smooth_position_series(rng, t, config.duration, 0.25, 0.70)
    roll = _smooth_angle_series(rng, t, config.duration, 0.6)
    pitch = _smooth_angle_series(rng, t, config.duration, 0.6)
    yaw = _smooth_angle_series(rng, t, config.duration, 0.6)
    ctrl_poses = [
        Pose(
            EulerAngles(roll[i], pitch[i], yaw[i]).to_quaternion(),
            np.array([px[i], py[i], pz[i]]),
        )
        for i in range(len(t))
    ]

    hx = _smooth_position_series(rng, t, config.duration, -0.05, 0.05)
    hy = _smooth_position_series(rng, t, config.duration, -0.05, 0.05)
    hz = _smooth_position_series(rng, t, config.duration, -0.05, 0.05)
    hroll = _smooth_angle_series(rng, t, config.duration, 0.25)
    hpitch = _smooth_angle_series(rng, t, config.duration, 0.25)
    hyaw = _smooth_angle_series(rng, t, config.duration, 0.25)
    head_poses = [
        Pose(
            EulerAngles(hroll[i], hpitch[i], hyaw[i]).to_quaternion(),
            np.array([hx[i], hy[i], hz[i]]),
        )
        for i in range(len(t))
    ]
    return (
        TimedTrajectory(t, ctrl_poses, config.mocap_rate),
        TimedTrajectory(t, head_poses, config.mocap_rate),
    )


def observe_mocap(
    traj: TimedTrajectory,
    config: SimConfig,
    sigma_rot: float,
    sigma_trans: float,
    rng=None,
):
    """Noisy mocap observation of a true trajectory.

    Adds rotation noise (random axis, angle ~ N(0, sigma_rot)) and isotropic
    translation noise with E||dt||^2 = sigma_trans^2. Injects dropout gaps
    (flagged via the returned validity mask) followed by an elevated-noise
    reinitialization transient. Returns (TimedTrajectory, valid: bool array).
    """
    if rng is None:
        rng = np.random.default_rng(config.seed + 104729)
    n = len(traj)
    valid = np.ones(n, dtype=bool)
    if config.dropout_rate > 0:
        n_drop = rng.poisson(config.dropout_rate * config.duration)
        for _ in range(n_drop):
            start = int(rng.integers(0, n))
            gap = 1 + int(rng.poisson(max(config.dropout_gap_frames - 1, 0)))
            valid[start : start + gap] = False

    transient = int(round(REINIT_TRANSIENT_S * config.mocap_rate))
    boost = np.ones(n)
    invalid_idx = np.nonzero(~valid)[0]
    for i in invalid_idx:
        boost[i + 1 : i + 1 + transient] = REINIT_NOISE_FACTOR
    boost[~valid] = 1.0

    poses = []
    for i, p in enumerate(traj.poses):
        sr = sigma_rot * boost[i]
        st = sigma_trans * boost[i]
        if sr > 0:
            axis = rng.normal(size=3)
            dq = Quaternion.from_axis_angle(axis, rng.normal(0.0, sr))
            q = p.rotation * dq
        else:
            q = p.rotation
        if st > 0:
            dt = rng.normal(0.0, st / math.sqrt(3.0), size=3)
        else:
            dt = np.zeros(3)
        poses.append(Pose(q, p.translation + dt))
    return TimedTrajectory(traj.times, poses, traj.rate_hz), valid


@dataclass
class SimBundle:
    """Everything a downstream pipeline consumes from one simulated session."""

    config: SimConfig
    rig: StereoRig
    tip_offset: Pose  # T_CB_CT
    hand_eye: Pose  # X = T_H_Cam (camera in headset-constellation frame)
    mocap_headset: TimedTrajectory  # noisy T_V_H on the mocap clock
    mocap_controller: TimedTrajectory  # noisy T_V_CB on the mocap clock
    mocap_valid: np.ndarray
    mocap_tip: TimedTrajectory  # noisy T_V_CT (tip-marker session) on the mocap clock
    camera_traj: TimedTrajectory  # T_V_Cam at camera rate on the camera clock
    records: list  # FrameRecord with noiseless groundtruth T_Cam_CT


def render_dataset(config: SimConfig, rig: StereoRig, tip_offset: Pose, hand_eye: Pose):
    """Simulate one session and return the observable chain plus groundtruth.

    The mocap-side trajectories carry timestamps on the mocap clock
    (camera clock minus clock_offset); FrameRecord timestamps are on the
    camera clock, with noiseless groundtruth T_Cam_CT for error attribution.
    """
    if config.camera_rate > config.mocap_rate:
        raise ValueError("camera rate must not exceed mocap rate")
    tip_traj, cam_traj = gen_trajectories(config)
    X_inv = hand_eye.inverse()
    tco_inv = tip_offset.inverse()

    # true mocap-frame constellation trajectories consistent with the chain
    head_poses = [compose(p, X_inv) for p in cam_traj.poses]  # T_V_H = T_V_Cam X^-1
    cb_poses = [compose(p, tco_inv) for p in tip_traj.poses]  # T_V_CB = T_V_CT T_CB_CT^-1
    mocap_times = tip_traj.times - config.clock_offset
    true_head = TimedTrajectory(mocap_times, head_poses, config.mocap_rate)
    true_cb = TimedTrajectory(mocap_times, cb_poses, config.mocap_rate)
    true_tip = TimedTrajectory(mocap_times, tip_traj.poses, config.mocap_rate)

    rng = np.random.default_rng(config.seed + 7919)
    obs_head, _ = observe_mocap(
        true_head, config, config.sigma_rot_headset, config.sigma_trans_headset, rng
    )
    obs_cb, valid = observe_mocap(
        true_cb, config, config.sigma_rot_ctrl, config.sigma_trans_ctrl, rng
    )
    obs_tip, _ = observe_mocap(
        true_tip, config, config.sigma_rot_ctrl, config.sigma_trans_ctrl, rng
    )

    cam_times = np.arange(0.0, config.duration, 1.0 / config.camera_rate)
    records = []
    mocap_dt = 1.0 / config.mocap_rate
    for fid, tc in enumerate(cam_times):
        T_V_Cam = interpolate(cam_traj, tc)
        T_V_CT = interpolate(tip_traj, tc)
        gt = compose(T_V_Cam.inverse(), T_V_CT)
        # a camera frame is valid when the nearest mocap sample had tracking
        j = int(round((tc - config.clock_offset - mocap_times[0]) / mocap_dt))
        ok = bool(valid[min(max(j, 0), len(valid) - 1)])
        records.append(
            FrameRecord(
                timestamp=float(tc),
                frame_id=fid,
                T_Cam_CT=gt,
                T_World_Cam=T_V_Cam,
                tracking_valid=ok,
            )
        )

    cam_rate_traj = TimedTrajectory(
        cam_times, [r.T_World_Cam for r in records], config.camera_rate
    )
    return SimBundle(
        config=config,
        rig=rig,
        tip_offset=tip_offset,
        hand_eye=hand_eye,
        mocap_headset=obs_head,
        mocap_controller=obs_cb,
        mocap_valid=valid,
        mocap_tip=obs_tip,
        camera_traj=cam_rate_traj,
        records=records,
    )


def default_calibration(seed: int = 0):
    """A plausible fixed tip offset and hand-eye transform, deterministic per seed."""
    rng = np.random.default_rng(seed + 31337)
    tip = Pose(
        Quaternion.from_rotvec(rng.uniform(-0.3, 0.3, 3)),
        rng.uniform(-0.05, 0.05, 3) + np.array([0.0, 0.0, 0.08]),
    )
    hand_eye = Pose(
        Quaternion.from_rotvec(rng.uniform(-0.2, 0.2, 3)),
        rng.uniform(-0.02, 0.02, 3) + np.array([0.0, 0.05, 0.03]),
    )
    return tip, hand_eye


def simulate(config: SimConfig, rig: StereoRig = None) -> SimBundle:
    if rig is None:
        rig = default_rig()
    tip, hand_eye = default_calibration(config.seed)
    return render_dataset(config, rig, tip, hand_eye)


def oracle_predict(samples, oracle: OraclePredictor):
    """Detections from groundtruth labels plus configured noise.

    Returns a list of Detection whose fields are the decoded-space quantities
    (u px, v px, z m) for the left keypoint; the box is the groundtruth box.
    """
    rng = np.random.default_rng(oracle.seed)
    out = []
    for s in samples:
        u, v, z = s.keypoint_left
        if oracle.pixel_noise_sigma > 0:
            u += rng.normal(0.0, oracle.pixel_noise_sigma)
            v += rng.normal(0.0, oracle.pixel_noise_sigma)
        if oracle.depth_noise_sigma > 0:
            z += rng.normal(0.0, oracle.depth_noise_sigma)
        score = oracle.score
        if oracle.score_noise_sigma > 0:
            score = float(np.clip(score + rng.normal(0.0, oracle.score_noise_sigma), 0.0, 1.0))
        out.append(Detection(box=s.box_left, fields=np.array([u, v, z]), class_score=score))
    return out
