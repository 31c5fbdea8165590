"""Offline calibration solvers: hand-eye (AX = XB), tip offset, and clock alignment.

The hand-eye solver is a separable least-squares solve: rotation first from
the stacked quaternion constraint L(qA_i) - R(qB_i), then translation by
linear least squares given the rotation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import (
    Pose,
    Quaternion,
    TimedTrajectory,
    angular_speed,
    compose,
    tip_offset,
)


@dataclass(frozen=True)
class HandEyeResult:
    X: Pose  # camera in headset-constellation frame
    rotation_rmse: float  # radians
    translation_rmse: float  # meters
    n_pairs: int


@dataclass(frozen=True)
class TimeAlignment:
    offset: float  # seconds; b's clock leads a's by this much
    correlation_peak: float


def _left_mult_matrix(q: Quaternion) -> np.ndarray:
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def _right_mult_matrix(q: Quaternion) -> np.ndarray:
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, z, -y],
            [y, -z, w, x],
            [z, y, -x, w],
        ]
    )


def hand_eye_solve(motion_pairs) -> HandEyeResult:
    """Solve A_i X = X B_i for the fixed transform X between two rigid sensors.

    motion_pairs: list of (A, B) Poses, each the relative motion of the two
    sensors over the same interval.
    """
    pairs = list(motion_pairs)
    if len(pairs) < 3:
        raise ValueError("insufficient motions")

    # observability needs at least two non-parallel rotation axes
    axes = []
    for a, _ in pairs:
        v = a.rotation.to_rotvec()
        n = np.linalg.norm(v)
        if n > 1e-6:
            axes.append(v / n)
    degenerate = len(axes) < 2
    if not degenerate:
        degenerate = all(
            np.linalg.norm(np.cross(axes[0], ax)) < 1e-6 for ax in axes[1:]
        )
    if degenerate:
        raise ValueError("degenerate motion set")

    # rotation: qA * qX = qX * qB  =>  (L(qA) - R(qB)) qX = 0
    M = np.zeros((4, 4))
    for a, b in pairs:
        C = _left_mult_matrix(a.rotation) - _right_mult_matrix(b.rotation)
        M += C.T @ C
    _, vecs = np.linalg.eigh(M)
    qx = vecs[:, 0]
    q_X = Quaternion(*qx).normalized()

    # translation: (R_A - I) t_X = R_X t_B - t_A
    R_X = q_X.to_matrix()
    rows = []
    rhs = []
    for a, b in pairs:
        rows.append(a.rotation.to_matrix() - np.eye(3))
        rhs.append(R_X @ b.translation - a.translation)
    A_mat = np.vstack(rows)
    b_vec = np.concatenate(rhs)
    t_X, *_ = np.linalg.lstsq(A_mat, b_vec, rcond=None)
    X = Pose(q_X, t_X)

    rot_sq = 0.0
    trans_sq = 0.0
    for a, b in pairs:
        resid = compose(compose(a, X), compose(X, b).inverse())
        rot_sq += resid.rotation.angle() ** 2
        lhs = compose(a, X)
        rhs_p = compose(X, b)
        trans_sq += float(np.sum((lhs.translation - rhs_p.translation) ** 2))
    n = len(pairs)
    return HandEyeResult(
        X=X,
        rotation_rmse=float(np.sqrt(rot_sq / n)),
        translation_rmse=float(np.sqrt(trans_sq / n)),
        n_pairs=n,
    )


def relative_motions(traj_a: TimedTrajectory, traj_b: TimedTrajectory, stride: int = 10):
    """Paired relative motions from two synchronized absolute trajectories."""
    n = min(len(traj_a), len(traj_b))
    pairs = []
    for i in range(0, n - stride, stride):
        A = compose(traj_a.poses[i].inverse(), traj_a.poses[i + stride])
        B = compose(traj_b.poses[i].inverse(), traj_b.poses[i + stride])
        pairs.append((A, B))
    return pairs


def average_quaternion(quats) -> Quaternion:
    """Mean rotation via the largest eigenvector of the outer-product accumulator.

    Sign-insensitive: q and -q contribute identically.
    """
    M = np.zeros((4, 4))
    for q in quats:
        v = np.array([q.w, q.x, q.y, q.z])
        M += np.outer(v, v)
    _, vecs = np.linalg.eigh(M)
    return Quaternion(*vecs[:, -1]).normalized()


def tip_calibrate(paired_samples) -> Pose:
    """Average the per-sample back-constellation-to-tip offsets.

    paired_samples: list of (T_V_CB, T_V_CT) observed at the same timestamps.
    """
    samples = list(paired_samples)
    if not samples:
        raise ValueError("no samples")
    offsets = [tip_offset(cb, ct) for cb, ct in samples]
    q = average_quaternion([o.rotation for o in offsets])
    t = np.mean([o.translation for o in offsets], axis=0)
    return Pose(q, t)


def _resample_speed(traj: TimedTrajectory, rate_hz: float):
    t = traj.times
    s = angular_speed(traj)
    grid = np.arange(t[0], t[-1], 1.0 / rate_hz)
    return grid, np.interp(grid, t, s)


def time_align(
    mocap: TimedTrajectory,
    camera: TimedTrajectory,
    search_window: float,
    resample_hz: float = 100.0,
) -> TimeAlignment:
    """Clock offset between two trajectories of the same rigid motion.

    Both angular-speed signals are resampled to a uniform grid and the
    normalized cross-correlation is maximized over lags in +-search_window,
    with quadratic refinement of the peak. The returned offset is the amount
    by which the camera clock leads the mocap clock: camera timestamps minus
    offset line up with mocap timestamps.
    """
    dt = 1.0 / resample_hz
    ga, sa = _resample_speed(mocap, resample_hz)
    gb, sb = _resample_speed(camera, resample_hz)
    if np.std(sa) < 1e-12 or np.std(sb) < 1e-12:
        raise ValueError("no motion to align")
    sa = (sa - np.mean(sa)) / np.std(sa)
    sb = (sb - np.mean(sb)) / np.std(sb)

    base_shift = gb[0] - ga[0]  # lag implied by the grids' origins
    max_lag = int(round(search_window / dt))
    lags = np.arange(-max_lag, max_lag + 1)
    corr = np.full(len(lags), -np.inf)
    for j, k in enumerate(lags):
        # pairing sa[k+i] with sb[i] corresponds to shift base_shift - k*dt
        if k >= 0:
            a_seg = sa[k:]
            b_seg = sb[: len(a_seg)]
        else:
            b_seg = sb[-k:]
            a_seg = sa[: len(b_seg)]
        m = min(len(a_seg), len(b_seg))
        if m < 10:
            continue
        a_seg = a_seg[:m]
        b_seg = b_seg[:m]
        den = np.std(a_seg) * np.std(b_seg)
        if den < 1e-12:
            continue
        corr[j] = float(np.mean((a_seg - a_seg.mean()) * (b_seg - b_seg.mean())) / den)

    best = int(np.argmax(corr))
    if not np.isfinite(corr[best]):
        raise ValueError("no motion to align")
    peak = corr[best]
    refine = 0.0
    if 0 < best < len(lags) - 1 and np.isfinite(corr[best - 1]) and np.isfinite(corr[best + 1]):
        y0, y1, y2 = corr[best - 1], corr[best], corr[best + 1]
        denom = y0 - 2.0 * y1 + y2
        if abs(denom) > 1e-12:
            refine = 0.5 * (y0 - y2) / denom
            refine = max(-1.0, min(1.0, refine))
    coarse = base_shift - (lags[best] + refine) * dt

    # sub-sample refinement: maximize the continuous (interpolated) correlation
    # in a one-sample bracket around the discrete peak
    lo = max(ga[0], gb[0] - coarse) + 2.0 * dt
    hi = min(ga[-1], gb[-1] - coarse) - 2.0 * dt
    offset = coarse
    if hi - lo > 10.0 * dt:
        t_grid = np.arange(lo, hi, dt)
        av = np.interp(t_grid, ga, sa)
        av = av - av.mean()
        av_n = np.linalg.norm(av)

        def ncc(delta: float) -> float:
            bv = np.interp(t_grid + delta, gb, sb)
            bv = bv - bv.mean()
            nb = np.linalg.norm(bv)
            if av_n < 1e-12 or nb < 1e-12:
                return -1.0
            return float(np.dot(av, bv) / (av_n * nb))

        res = minimize_scalar(
            lambda d: -ncc(d),
            bounds=(coarse - dt, coarse + dt),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if -res.fun >= peak - 1e-9:
            offset = float(res.x)
            peak = float(-res.fun)
    return TimeAlignment(offset=float(offset), correlation_peak=float(min(peak, 1.0)))


# --- trajectory JSON-lines I/O (one {"t", "q", "p_m"} object per line) ---

def trajectory_to_jsonl(traj: TimedTrajectory) -> str:
    lines = []
    for t, p in zip(traj.times, traj.poses):
        q = p.rotation
        lines.append(
            json.dumps(
                {
                    "t": float(t),
                    "q": [q.w, q.x, q.y, q.z],
                    "p_m": [float(v) for v in p.translation],
                }
            )
        )
    return "\n".join(lines) + "\n"


def trajectory_from_jsonl(text: str, rate_hz: float = 0.0) -> TimedTrajectory:
    times = []
    poses = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        times.append(obj["t"])
        w, x, y, z = obj["q"]
        poses.append(Pose(Quaternion(w, x, y, z).normalized(), np.array(obj["p_m"], dtype=float)))
    return TimedTrajectory(np.array(times), poses, rate_hz)
