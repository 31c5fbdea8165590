"""End-to-end glue: simulated session -> calibration -> synchronized labels.

This is the closed-loop verification path: every transform the calibration
stage recovers is re-applied through the mocap chain and compared against the
noiseless groundtruth stored on each frame record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import (
    HandEyeResult,
    TimeAlignment,
    hand_eye_solve,
    relative_motions,
    time_align,
    tip_calibrate,
)
from .geometry import Pose, TimedTrajectory, compose, interpolate, tip_pose_in_camera
from .labelgen import FrameRecord, clean_dataset, label_dataset
from .simulator import SimBundle


@dataclass
class CalibrationOutput:
    hand_eye: HandEyeResult
    tip_offset: Pose
    time: TimeAlignment


def _hand_eye_at_offset(mocap: TimedTrajectory, camera_traj: TimedTrajectory, offset: float, stride: int):
    """Hand-eye solve with the headset mocap resampled onto the camera clock."""
    dt = float(np.median(np.diff(mocap.times)))
    head_at_cam = []
    cam_poses = []
    for t, p in zip(camera_traj.times, camera_traj.poses):
        tm = min(max(t - offset, mocap.times[0]), mocap.times[-1])
        if abs(tm - (t - offset)) > 0.5 * dt:
            continue
        head_at_cam.append(interpolate(mocap, tm))
        cam_poses.append(p)
    n = len(cam_poses)
    grid = np.arange(n, dtype=float)
    traj_h = TimedTrajectory(grid, head_at_cam)
    traj_c = TimedTrajectory(grid, cam_poses)
    return hand_eye_solve(relative_motions(traj_h, traj_c, stride=stride))


def calibrate_trajectories(
    mocap_headset: TimedTrajectory,
    camera_traj: TimedTrajectory,
    mocap_controller: TimedTrajectory = None,
    mocap_tip: TimedTrajectory = None,
    search_window: float = 1.0,
    stride: int = 5,
) -> CalibrationOutput:
    """Recover clock offset, hand-eye transform, and (optionally) tip offset.

    The correlation-based clock estimate is refined jointly with the hand-eye
    solve: within one resample period of the coarse estimate, pick the offset
    minimizing the hand-eye residual. Finite-difference smoothing differs
    between the 500 Hz and camera-rate angular-speed signals, so the
    correlation peak alone is biased by a fraction of a sample.
    """
    from scipy.optimize import minimize_scalar

    ta = time_align(mocap_headset, camera_traj, search_window)

    def residual(offset: float) -> float:
        try:
            he = _hand_eye_at_offset(mocap_headset, camera_traj, offset, stride)
        except ValueError:
            return 1e6
        return he.rotation_rmse + he.translation_rmse

    res = minimize_scalar(
        residual,
        bounds=(ta.offset - 0.02, ta.offset + 0.02),
        method="bounded",
        options={"xatol": 1e-10},
    )
    offset = float(res.x) if res.fun < residual(ta.offset) else ta.offset
    he = _hand_eye_at_offset(mocap_headset, camera_traj, offset, stride)
    ta = TimeAlignment(offset=offset, correlation_peak=ta.correlation_peak)

    tip = None
    if mocap_controller is not None and mocap_tip is not None:
        tip = tip_calibrate(list(zip(mocap_controller.poses, mocap_tip.poses)))
    return CalibrationOutput(hand_eye=he, tip_offset=tip, time=ta)


def calibrate_bundle(bundle: SimBundle, search_window: float = 1.0, stride: int = 5) -> CalibrationOutput:
    """calibrate_trajectories over the observable side of a simulated session."""
    return calibrate_trajectories(
        bundle.mocap_headset,
        bundle.camera_traj,
        bundle.mocap_controller,
        bundle.mocap_tip,
        search_window=search_window,
        stride=stride,
    )


def records_from_mocap(
    mocap_headset: TimedTrajectory,
    mocap_controller: TimedTrajectory,
    mocap_valid,
    camera_times,
    hand_eye: Pose,
    tip_offset: Pose,
    time_offset: float,
    camera_traj: TimedTrajectory = None,
):
    """Synchronized frame records computed through the mocap transform chain.

    For each camera timestamp, interpolate both constellation trajectories at
    the mocap-clock instant and evaluate
    T_Cam_CT = X^-1 . T_V_H^-1 . T_V_CB . T_CB_CT.
    Frames outside the mocap span are skipped.
    """
    X_inv = hand_eye.inverse()
    mocap_valid = np.asarray(mocap_valid, dtype=bool)
    dt = np.median(np.diff(mocap_headset.times))
    t_lo, t_hi = mocap_headset.times[0], mocap_headset.times[-1]
    records = []
    for fid, tc in enumerate(camera_times):
        tm = tc - time_offset
        # tolerate sub-sample clock error at the span edges
        if t_lo - 0.5 * dt <= tm < t_lo:
            tm = t_lo
        elif t_hi < tm <= t_hi + 0.5 * dt:
            tm = t_hi
        if tm < t_lo or tm > t_hi:
            continue
        T_V_H = interpolate(mocap_headset, tm)
        T_V_CB = interpolate(mocap_controller, tm)
        T_Cam_CT = tip_pose_in_camera(X_inv, T_V_H, T_V_CB, tip_offset)
        j = int(round((tm - mocap_headset.times[0]) / dt))
        ok = bool(mocap_valid[min(max(j, 0), len(mocap_valid) - 1)])
        T_World_Cam = (
            interpolate(camera_traj, tc) if camera_traj is not None else compose(T_V_H, hand_eye)
        )
        records.append(
            FrameRecord(
                timestamp=float(tc),
                frame_id=fid,
                T_Cam_CT=T_Cam_CT,
                T_World_Cam=T_World_Cam,
                tracking_valid=ok,
            )
        )
    return records


def labels_from_bundle(bundle: SimBundle, calib: CalibrationOutput):
    """Cleaned, labeled samples computed purely from the observable chain."""
    records = records_from_mocap(
        bundle.mocap_headset,
        bundle.mocap_controller,
        bundle.mocap_valid,
        bundle.camera_traj.times,
        calib.hand_eye.X,
        calib.tip_offset,
        calib.time.offset,
        camera_traj=bundle.camera_traj,
    )
    kept, report = clean_dataset(records)
    return label_dataset(kept, bundle.rig), report
